#pragma once

#include "gptc/corpus.hpp"
#include "gptc/lexnorm.hpp"
#include "gptc/model.hpp"

#include <limits>
#include <span>
#include <string>
#include <vector>

namespace gptc::vocab {
class SubtokenVocabulary;
}

namespace gptc::pipeline {

/// Index of a language in kAllLanguages; used as the model's language id.
int language_index(Language lang) noexcept;
Language language_from_index(int index);

struct Document {
    std::string repo_id;
    std::string path;
    Language language = Language::toy_py;
    /// Normalized stream.
    lexnorm::TokenStream stream;
};

struct LexedCorpus {
    std::vector<corpus::CorpusEntry> entries;
    std::vector<lexnorm::TokenStream> streams;  // raw, parallel to entries
    std::vector<std::string> warnings;
};

/// Reads and lexes every entry; files that fail to lex are skipped with a warning.
LexedCorpus lex_entries(std::span<const corpus::CorpusEntry> entries);

std::vector<Document> normalize_all(const LexedCorpus& lexed, const lexnorm::LiteralTable& table);

std::vector<lexnorm::TokenStream> streams_of(std::span<const Document> docs);

std::vector<std::vector<TokenId>> encode_documents(std::span<const Document> docs,
                                                   const vocab::SubtokenVocabulary& vocab);

struct ContextPolicy {
    model::LangMode mode = model::LangMode::none;
    /// Model context size in subtokens (N_ctx); unlimited for n-gram models.
    std::size_t max_context = std::numeric_limits<std::size_t>::max();
};

struct PreparedContext {
    std::vector<TokenId> ids;
    bool truncated = false;
};

/// Applies the control code when the mode needs one, then left-truncates to
/// max_context - max_len ids while keeping the leading <BOF>/<LANG>/<SEP> ids.
PreparedContext prepare_context(std::span<const TokenId> ids, Language lang, const vocab::SubtokenVocabulary& vocab,
                                const ContextPolicy& policy, std::size_t max_len);

/// Training samples of at most n_ctx ids. Consecutive chunks overlap by one
/// id so every id after the first is a prediction target; continuation
/// chunks of control-code models start with [<LANG>, <SEP>].
std::vector<model::Sample> make_samples(std::span<const TokenId> ids, Language lang,
                                        const vocab::SubtokenVocabulary& vocab, model::LangMode mode,
                                        std::size_t n_ctx);

std::vector<model::Sample> make_samples(std::span<const Document> docs, const vocab::SubtokenVocabulary& vocab,
                                        model::LangMode mode, std::size_t n_ctx);

/// Literal table holding exactly the kept literals registered in `vocab`.
lexnorm::LiteralTable kept_table(const vocab::SubtokenVocabulary& vocab);

}  // namespace gptc::pipeline
