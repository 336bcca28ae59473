#pragma once

#include "gptc/common.hpp"
#include "gptc/model.hpp"
#include "gptc/ngram.hpp"

#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace gptc::vocab {
class SubtokenVocabulary;
}

namespace gptc::decoder {

class DecodeError : public Error {
public:
    using Error::Error;
};

using LogProbRows = std::vector<std::vector<double>>;

/// Opaque per-hypothesis state of a model that supports incremental decoding.
class DecoderState {
public:
    virtual ~DecoderState() = default;
    virtual std::unique_ptr<DecoderState> clone() const = 0;
};

/// Any language model the beam search can drive.
class DecoderModel {
public:
    virtual ~DecoderModel() = default;
    virtual std::size_t vocab_size() const = 0;
    /// Longest prefix (context + generated ids) the model accepts.
    virtual std::size_t max_context() const { return std::numeric_limits<std::size_t>::max(); }

    /// Natural-log next-token distributions, one row per full prefix. One model invocation.
    virtual LogProbRows next_log_probs(std::span<const std::vector<TokenId>> prefixes) = 0;

    /// log P(ids[t] | ids[<t]) for t = 1 .. size-1.
    virtual std::vector<double> score_sequence(std::span<const TokenId> ids);

    virtual bool supports_cache() const { return false; }
    /// Processes the context once; returns its state and next-token log-probs. One invocation.
    virtual std::unique_ptr<DecoderState> begin(std::span<const TokenId> context, std::vector<double>& log_probs);
    /// Extends every state by one token and returns the next log-probs. One invocation.
    virtual LogProbRows advance(std::span<DecoderState* const> states, std::span<const TokenId> tokens);
};

enum class Mode : std::uint8_t {
    sequential,
    parallel,
    cached,
};

std::string_view to_string(Mode mode) noexcept;
Mode parse_mode(std::string_view name);

struct DecodeRequest {
    std::vector<TokenId> context_ids;
    std::size_t beam_width = 5;
    std::size_t max_len = 10;
    std::vector<TokenId> break_ids;
    Mode mode = Mode::cached;
};

struct Hypothesis {
    std::vector<TokenId> ids;
    double log_prob = 0.0;
    std::vector<double> step_log_probs;
    bool finished = false;
};

struct CallStats {
    std::size_t model_calls = 0;
    std::size_t steps = 0;
    /// Rows evaluated over all calls.
    std::size_t rows = 0;
    Mode mode = Mode::cached;
};

struct DecodeResult {
    std::vector<Hypothesis> hypotheses;  // best first
    CallStats stats;
};

/// Orders by score descending, then by id sequence ascending.
bool better(const Hypothesis& a, const Hypothesis& b) noexcept;

DecodeResult beam_search(DecoderModel& model, const DecodeRequest& request);

struct ModeReport {
    DecodeResult sequential;
    DecodeResult parallel;
    DecodeResult cached;
    bool equivalent = true;
    std::string diagnostic;
};

/// Runs all three modes. Cached mode is skipped (copied from parallel) when
/// the model does not support caching.
ModeReport mode_equivalence_check(DecoderModel& model, DecodeRequest request, double tolerance = 1e-5);

/// `<EOL>` plus the language's block closer (`}` for toy-c).
std::vector<TokenId> default_break_ids(const vocab::SubtokenVocabulary& vocab, Language lang);

// ---------------------------------------------------------------------------
// Adaptors

class TransformerModel : public DecoderModel {
public:
    explicit TransformerModel(const model::ModelParams<float>& params, int lang = -1);
    std::size_t vocab_size() const override;
    std::size_t max_context() const override;
    LogProbRows next_log_probs(std::span<const std::vector<TokenId>> prefixes) override;
    std::vector<double> score_sequence(std::span<const TokenId> ids) override;
    bool supports_cache() const override { return true; }
    std::unique_ptr<DecoderState> begin(std::span<const TokenId> context, std::vector<double>& log_probs) override;
    LogProbRows advance(std::span<DecoderState* const> states, std::span<const TokenId> tokens) override;

private:
    const model::ModelParams<float>& params_;
    int lang_;
};

class NGramAdaptor : public DecoderModel {
public:
    NGramAdaptor(const ngram::NGramModel& model, ngram::Smoothing mode);
    std::size_t vocab_size() const override { return model_.vocab_size(); }
    LogProbRows next_log_probs(std::span<const std::vector<TokenId>> prefixes) override;
    std::vector<double> score_sequence(std::span<const TokenId> ids) override;
    bool supports_cache() const override { return true; }
    std::unique_ptr<DecoderState> begin(std::span<const TokenId> context, std::vector<double>& log_probs) override;
    LogProbRows advance(std::span<DecoderState* const> states, std::span<const TokenId> tokens) override;

private:
    const ngram::NGramModel& model_;
    ngram::Smoothing mode_;
};

/// Mock LM: the next-token distribution is a pseudo-random function of the
/// last `order` ids of the prefix (all of it when order is 0) and the seed.
class TableModel : public DecoderModel {
public:
    TableModel(std::size_t vocab_size, std::uint64_t seed, std::size_t order = 0);
    std::size_t vocab_size() const override { return vocab_size_; }
    LogProbRows next_log_probs(std::span<const std::vector<TokenId>> prefixes) override;
    bool supports_cache() const override { return true; }
    std::unique_ptr<DecoderState> begin(std::span<const TokenId> context, std::vector<double>& log_probs) override;
    LogProbRows advance(std::span<DecoderState* const> states, std::span<const TokenId> tokens) override;

    /// Distribution after a full prefix; the brute-force oracle uses this directly.
    std::vector<double> log_probs(std::span<const TokenId> prefix) const;

private:
    std::size_t vocab_size_;
    std::uint64_t seed_;
    std::size_t order_;
};

}  // namespace gptc::decoder
