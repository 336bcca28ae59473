#include "gptc/pipeline.hpp"

#include "gptc/vocab.hpp"

#include <algorithm>

namespace gptc::pipeline {

int language_index(Language lang) noexcept {
    for (std::size_t i = 0; i < std::size(kAllLanguages); ++i) {
        if (kAllLanguages[i] == lang) {
            return static_cast<int>(i);
        }
    }
    return -1;
}

Language language_from_index(int index) {
    if (index < 0 || static_cast<std::size_t>(index) >= std::size(kAllLanguages)) {
        throw Error("language index " + std::to_string(index) + " out of range");
    }
    return kAllLanguages[index];
}

LexedCorpus lex_entries(std::span<const corpus::CorpusEntry> entries) {
    LexedCorpus out;
    for (const auto& e : entries) {
        try {
            auto stream = lexnorm::lex(corpus::read_file(e.file_path), e.language);
            out.entries.push_back(e);
            out.streams.push_back(std::move(stream));
        } catch (const lexnorm::LexError& err) {
            out.warnings.push_back(e.file_path.generic_string() + ": skipped: " + err.what());
        }
    }
    return out;
}

std::vector<Document> normalize_all(const LexedCorpus& lexed, const lexnorm::LiteralTable& table) {
    std::vector<Document> docs;
    for (std::size_t i = 0; i < lexed.streams.size(); ++i) {
        Document d;
        d.repo_id = lexed.entries[i].repo_id;
        d.path = lexed.entries[i].file_path.generic_string();
        d.language = lexed.entries[i].language;
        d.stream = lexnorm::normalize(lexed.streams[i], table);
        docs.push_back(std::move(d));
    }
    return docs;
}

std::vector<lexnorm::TokenStream> streams_of(std::span<const Document> docs) {
    std::vector<lexnorm::TokenStream> out;
    for (const auto& d : docs) {
        out.push_back(d.stream);
    }
    return out;
}

std::vector<std::vector<TokenId>> encode_documents(std::span<const Document> docs,
                                                   const vocab::SubtokenVocabulary& vocab) {
    std::vector<std::vector<TokenId>> out;
    for (const auto& d : docs) {
        out.push_back(vocab::encode(d.stream, vocab));
    }
    return out;
}

PreparedContext prepare_context(std::span<const TokenId> ids, Language lang, const vocab::SubtokenVocabulary& vocab,
                                const ContextPolicy& policy, std::size_t max_len) {
    PreparedContext out;
    out.ids = model::prepend_control_code(ids, lang, vocab, policy.mode);
    if (policy.max_context == std::numeric_limits<std::size_t>::max()) {
        return out;
    }
    if (policy.max_context <= max_len) {
        throw model::ContextLengthError("max_len " + std::to_string(max_len) + " leaves no room in a context of " +
                                        std::to_string(policy.max_context));
    }
    const std::size_t budget = policy.max_context - max_len;
    if (out.ids.size() <= budget) {
        return out;
    }
    std::size_t head = 0;
    if (!out.ids.empty() && out.ids[0] == vocab.bof()) {
        head = 1;
    }
    if (policy.mode == model::LangMode::control_codes && out.ids.size() >= head + 2) {
        head += 2;
    }
    if (head >= budget) {
        throw model::ContextLengthError("context budget too small for the sequence prefix");
    }
    std::vector<TokenId> kept(out.ids.begin(), out.ids.begin() + static_cast<std::ptrdiff_t>(head));
    kept.insert(kept.end(), out.ids.end() - static_cast<std::ptrdiff_t>(budget - head), out.ids.end());
    out.ids = std::move(kept);
    out.truncated = true;
    return out;
}

std::vector<model::Sample> make_samples(std::span<const TokenId> ids, Language lang,
                                        const vocab::SubtokenVocabulary& vocab, model::LangMode mode,
                                        std::size_t n_ctx) {
    const std::vector<TokenId> full = model::prepend_control_code(ids, lang, vocab, mode);
    std::vector<TokenId> prefix;
    if (mode == model::LangMode::control_codes) {
        prefix = {*vocab.lang_prefix(lang), vocab.sep()};
    }
    if (n_ctx < prefix.size() + 2) {
        throw model::ModelError("N_ctx too small for training samples");
    }
    std::vector<model::Sample> out;
    const int li = language_index(lang);
    if (full.size() <= n_ctx) {
        if (full.size() >= 2) {
            out.push_back({full, li});
        }
        return out;
    }
    std::size_t start = 0;
    bool first = true;
    while (start + 1 < full.size()) {
        model::Sample s;
        s.lang = li;
        if (!first) {
            s.ids = prefix;
        }
        const std::size_t room = n_ctx - s.ids.size();
        const std::size_t end = std::min(full.size(), start + room);
        s.ids.insert(s.ids.end(), full.begin() + static_cast<std::ptrdiff_t>(start),
                     full.begin() + static_cast<std::ptrdiff_t>(end));
        out.push_back(std::move(s));
        if (end == full.size()) {
            break;
        }
        start = end - 1;
        first = false;
    }
    return out;
}

std::vector<model::Sample> make_samples(std::span<const Document> docs, const vocab::SubtokenVocabulary& vocab,
                                        model::LangMode mode, std::size_t n_ctx) {
    std::vector<model::Sample> out;
    for (const auto& d : docs) {
        auto s = make_samples(vocab::encode(d.stream, vocab), d.language, vocab, mode, n_ctx);
        out.insert(out.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
    }
    return out;
}

lexnorm::LiteralTable kept_table(const vocab::SubtokenVocabulary& vocab) {
    lexnorm::LiteralTable table;
    for (TokenId id = 0; id < vocab.special_count(); ++id) {
        const auto& image = vocab.subtoken(id);
        if (!lexnorm::is_kept_image(image)) {
            continue;
        }
        const std::string lit(lexnorm::kept_image_literal(image));
        if (lexnorm::is_kept_string_image(image)) {
            table.strings.emplace_back(lit, 0);
        } else {
            table.numbers.emplace_back(lit, 0);
        }
    }
    table.kept_counts = {table.strings.size(), table.numbers.size()};
    return table;
}

}  // namespace gptc::pipeline
