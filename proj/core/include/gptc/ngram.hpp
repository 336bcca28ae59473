#pragma once

#include "gptc/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <vector>

namespace gptc::ngram {

class NGramError : public Error {
public:
    using Error::Error;
};

enum class Smoothing : std::uint8_t {
    /// Plain relative frequencies; an unseen context yields the uniform distribution.
    strict,
    /// Stupid backoff (factor 0.4) down to unigram, then uniform; renormalized.
    backoff,
};

inline constexpr double kBackoffFactor = 0.4;

using Context = std::vector<TokenId>;
using NextCounts = std::map<TokenId, std::uint64_t>;

class NGramModel {
public:
    NGramModel() = default;
    NGramModel(std::size_t n, std::size_t vocab_size);

    std::size_t order() const noexcept { return n_; }
    std::size_t vocab_size() const noexcept { return vocab_size_; }

    /// Count tables of order k in [1, n]: context of length k-1 -> next -> count.
    const std::map<Context, NextCounts>& table(std::size_t k) const;
    /// Sum of the counts stored for `context` (length k-1) at order k = |context|+1.
    std::uint64_t context_total(std::span<const TokenId> context) const;

    void add_sequence(std::span<const TokenId> ids);
    void add_count(std::span<const TokenId> context, TokenId next, std::uint64_t count);

    /// Number of sequences skipped because they were shorter than n.
    std::size_t skipped_sequences = 0;

    /// Dense next-token distribution. Uses the last n-1 ids of `context`.
    std::vector<double> next_distribution(std::span<const TokenId> context, Smoothing mode) const;

private:
    std::vector<double> backoff_scores(std::span<const TokenId> context, std::size_t k) const;

    std::size_t n_ = 0;
    std::size_t vocab_size_ = 0;
    // tables_[k-1] holds order-k counts; totals_ mirrors it with context sums.
    std::vector<std::map<Context, NextCounts>> tables_;
    std::vector<std::map<Context, std::uint64_t>> totals_;
};

/// Counts every stride-1 window of length 1..n inside each sequence; windows
/// never cross sequence boundaries. Requires n >= 2.
NGramModel train_ngram(std::span<const std::vector<TokenId>> sequences, std::size_t n, std::size_t vocab_size);

/// Greedy rollout: appends the argmax id (ties to the lowest id) until a break
/// id would be emitted or max_len ids have been produced. The break id is not included.
std::vector<TokenId> complete_ngram(const NGramModel& model, std::span<const TokenId> context, std::size_t max_len,
                                    std::span<const TokenId> break_ids, Smoothing mode = Smoothing::strict);

/// Header `ngram v1 n=<n> vocab=<|V|>`, then `ctx-ids(comma-sep) \t next \t count` lines for every order.
void write_ngram(std::ostream& out, const NGramModel& model);
NGramModel read_ngram(std::istream& in);

}  // namespace gptc::ngram
