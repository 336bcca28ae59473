#pragma once

#include "gptc/common.hpp"
#include "gptc/decoder.hpp"
#include "gptc/lexnorm.hpp"
#include "gptc/pipeline.hpp"

#include <nlohmann/json_fwd.hpp>

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gptc::vocab {
class SubtokenVocabulary;
}

namespace gptc::evalkit {

std::size_t lcs_length(std::string_view a, std::string_view b);
std::size_t levenshtein(std::string_view a, std::string_view b);

/// Collapses whitespace runs to one space and trims both ends.
std::string normalize_whitespace(std::string_view text);

struct RougeL {
    double precision = 0.0;
    double recall = 0.0;
    bool empty_candidate = false;
};

/// Character-level LCS statistics after whitespace normalization.
RougeL rouge_l(std::string_view candidate, std::string_view reference);

/// 100 * (1 - lev / max(|c|, |r|)); 100 when both are empty.
double edit_similarity(std::string_view candidate, std::string_view reference);

struct Perplexity {
    double value = 1.0;
    std::size_t positions = 0;
    bool infinite = false;
};

Perplexity perplexity_from_log_probs(std::span<const double> log_probs);
/// exp(mean negative log-likelihood) over every position after the first of each sequence.
Perplexity perplexity(decoder::DecoderModel& model, std::span<const std::vector<TokenId>> sequences);

/// `text` is context followed by a suggestion; its last line is the
/// completed line. Valid when the whole text lexes without diagnostics,
/// braces never close more than were opened, and `()`/`[]` are balanced on
/// the completed line.
bool syntax_valid(std::string_view text, Language lang);
double syntax_valid_rate(std::span<const std::pair<std::string, std::string>> pairs, Language lang);

/// One rendered display line of a normalized stream.
struct DisplayLine {
    /// Token range [begin, end) of the line, excluding its <EOL>.
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t indent = 0;
    std::string text;
    /// Character span of each token in [begin, end) within `text`.
    std::vector<std::pair<std::size_t, std::size_t>> spans;
};

std::vector<DisplayLine> display_lines(const lexnorm::TokenStream& stream);

struct EvalConfig {
    std::size_t beam_width = 5;
    std::size_t max_len = 24;
    /// 0 disables early stopping during evaluation.
    double alpha = 0.0;
    double kappa = 10.0;
    std::uint64_t seed = 7;
    decoder::Mode mode = decoder::Mode::cached;
    pipeline::ContextPolicy policy;
    /// Stop after this many samples when non-zero.
    std::size_t max_samples = 0;
    std::string model_id;
    std::string corpus_id;
    bool keep_records = true;

    std::string digest_text() const;
};

struct SampleRecord {
    std::string path;
    std::size_t line = 0;
    std::size_t cut = 0;
    std::string typed;
    std::string suggestion;
    std::string reference;
    double edit_similarity = 0.0;
    bool syntax_valid = false;
    bool trie_miss = false;
    bool truncated_context = false;
    /// Display text of every hypothesis, best first.
    std::vector<std::string> hypotheses;
};

struct EvalReport {
    Perplexity perplexity;
    double rouge_precision = 0.0;  // [0, 1]
    double rouge_recall = 0.0;     // [0, 1]
    double edit_similarity_pct = 0.0;
    double syntax_valid_pct = 0.0;
    std::size_t samples = 0;
    std::size_t skipped = 0;
    std::size_t trie_misses = 0;
    std::string model_id;
    std::string corpus_id;
    std::string config_digest;
    std::vector<SampleRecord> records;

    std::string to_key_values() const;
    nlohmann::json to_json() const;
};

/// For each non-empty line of each document: a seeded cut inside the line,
/// context = complete tokens before the cut (an identifier ending at the cut
/// counts as typed), decode, build and prune the trie by the typed
/// characters, traverse, and score against the rest of the line.
EvalReport evaluate(decoder::DecoderModel& model, const vocab::SubtokenVocabulary& vocab,
                    std::span<const pipeline::Document> docs, std::span<const std::vector<TokenId>> ppl_sequences,
                    const EvalConfig& config);

}  // namespace gptc::evalkit
