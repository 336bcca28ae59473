#include "gptc/suggest.hpp"

#include "gptc/vocab.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>

namespace gptc::suggest {

using lexnorm::Token;
using lexnorm::TokenKind;

namespace {

std::size_t count_nodes(const TrieNode& n) {
    std::size_t c = 1;
    for (const auto& ch : n.children) {
        c += count_nodes(ch);
    }
    return c;
}

void sort_children(TrieNode& n) {
    std::sort(n.children.begin(), n.children.end(), [](const TrieNode& a, const TrieNode& b) {
        return a.score != b.score ? a.score > b.score : a.subtoken < b.subtoken;
    });
    for (auto& c : n.children) {
        sort_children(c);
    }
}

}  // namespace

std::size_t CompletionTrie::node_count() const { return count_nodes(root) - 1; }

Token classify_atom(std::string_view image, Language lang) {
    Token t;
    t.text = std::string(image);
    if (image == lexnorm::kBof) t.kind = TokenKind::bof;
    else if (image == lexnorm::kEof) t.kind = TokenKind::eof;
    else if (image == lexnorm::kEol) t.kind = TokenKind::eol;
    else if (image == lexnorm::kIndent) t.kind = TokenKind::indent;
    else if (image == lexnorm::kDedent) t.kind = TokenKind::dedent;
    else if (image == lexnorm::kStrLit) t.kind = TokenKind::str_lit_sentinel;
    else if (image == lexnorm::kNumLit) t.kind = TokenKind::num_lit_sentinel;
    else if (image == lexnorm::kComment) t.kind = TokenKind::comment_sentinel;
    else if (image == lexnorm::kSep || image.starts_with("<LANG:")) t.kind = TokenKind::lang_prefix;
    else if (lexnorm::is_kept_image(image)) t.kind = TokenKind::kept_literal;
    else if (!image.empty() && (std::isalpha(static_cast<unsigned char>(image[0])) != 0 || image[0] == '_'))
        t.kind = lexnorm::is_keyword(image, lang) ? TokenKind::keyword : TokenKind::identifier;
    else if (!image.empty() && std::isdigit(static_cast<unsigned char>(image[0])) != 0)
        t.kind = TokenKind::identifier;
    else t.kind = TokenKind::punct;
    return t;
}

namespace {

bool dropped_kind(TokenKind k) {
    return k == TokenKind::bof || k == TokenKind::eof || k == TokenKind::indent || k == TokenKind::dedent ||
           k == TokenKind::lang_prefix;
}

/// Display text for every subtoken of one hypothesis (empty for dropped ids).
std::vector<std::string> subtoken_texts(std::span<const TokenId> ids, const vocab::SubtokenVocabulary& vocab,
                                        Language lang, const Token* previous) {
    std::vector<std::string> texts(ids.size());
    std::optional<Token> prev;
    if (previous != nullptr && !lexnorm::is_structural(previous->kind)) {
        prev = *previous;
    }
    std::size_t start = 0;
    std::string pending;
    auto flush = [&](std::size_t end) {
        // Token made of ids[start, end), with surface `pending`.
        const Token tok = classify_atom(pending, lang);
        const bool space = prev.has_value() && lexnorm::space_between(*prev, tok);
        for (std::size_t i = start; i < end; ++i) {
            const auto piece = vocab::strip_end_marker(vocab.subtoken(ids[i])).first;
            texts[i] = (i == start && space ? " " : "") + std::string(piece);
        }
        prev = tok;
        pending.clear();
    };
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (vocab.is_special(ids[i])) {
            if (!pending.empty()) {
                flush(i);
            }
            const Token tok = classify_atom(vocab.subtoken(ids[i]), lang);
            if (tok.kind == TokenKind::eol) {
                prev.reset();
            } else if (!dropped_kind(tok.kind)) {
                const bool space = prev.has_value() && lexnorm::space_between(*prev, tok);
                texts[i] = (space ? " " : "") + lexnorm::atom_image(tok, lang, lexnorm::RenderStyle::display);
                prev = tok;
            }
            start = i + 1;
            continue;
        }
        const auto [piece, final] = vocab::strip_end_marker(vocab.subtoken(ids[i]));
        if (pending.empty()) {
            start = i;
        }
        pending += piece;
        if (final) {
            flush(i + 1);
            start = i + 1;
        }
    }
    if (!pending.empty()) {
        flush(ids.size());
    }
    return texts;
}

}  // namespace

CompletionTrie build_trie(std::span<const decoder::Hypothesis> hypotheses, const vocab::SubtokenVocabulary& vocab,
                          Language lang, const Token* previous, std::size_t root_position) {
    CompletionTrie trie;
    trie.root_position = root_position;
    trie.root.score = 1.0;
    const TokenId eol = vocab.eol();
    for (const auto& h : hypotheses) {
        const auto texts = subtoken_texts(h.ids, vocab, lang, previous);
        TrieNode* node = &trie.root;
        double cum = 0.0;
        for (std::size_t i = 0; i < h.ids.size(); ++i) {
            cum += i < h.step_log_probs.size() ? h.step_log_probs[i] : 0.0;
            const TokenId id = h.ids[i];
            if (vocab.is_special(id) && id != eol) {
                const auto kind = classify_atom(vocab.subtoken(id), lang).kind;
                if (dropped_kind(kind)) {
                    continue;
                }
            }
            const double score = std::exp(cum);
            auto it = std::find_if(node->children.begin(), node->children.end(),
                                   [&](const TrieNode& c) { return c.id == id; });
            if (it == node->children.end()) {
                TrieNode child;
                child.id = id;
                child.subtoken = vocab.subtoken(id);
                child.text = id == eol ? std::string() : texts[i];
                child.score = score;
                child.is_break = id == eol;
                node->children.push_back(std::move(child));
                it = node->children.end() - 1;
            } else {
                it->score = std::max(it->score, score);
            }
            node = &*it;
            if (id == eol) {
                break;
            }
        }
    }
    sort_children(trie.root);
    return trie;
}

double early_stop_ratio(double L, double alpha, double kappa) {
    return alpha / (1.0 + std::exp(-L / kappa));
}

std::vector<Step> traverse_greedy(const CompletionTrie& trie, double alpha, double kappa) {
    std::vector<Step> out;
    const double r = alpha > 0.0 ? early_stop_ratio(static_cast<double>(trie.root_position), alpha, kappa) : 0.0;
    const TrieNode* node = &trie.root;
    while (!node->children.empty()) {
        const TrieNode& best = node->children.front();
        if (best.score < r * node->score) {
            break;
        }
        out.push_back({best.id, best.subtoken, best.text, best.score, best.is_break});
        if (best.is_break) {
            break;
        }
        node = &best;
    }
    return out;
}

std::string steps_text(std::span<const Step> steps) {
    std::string s;
    for (const auto& st : steps) {
        s += st.text;
    }
    return s;
}

namespace {

void rescale(TrieNode& n, double factor) {
    n.score *= factor;
    for (auto& c : n.children) {
        rescale(c, factor);
    }
}

}  // namespace

std::optional<CompletionTrie> prune_on_keystroke(const CompletionTrie& trie, char typed) {
    std::vector<const TrieNode*> matched;
    for (const auto& c : trie.root.children) {
        if (!c.text.empty() && c.text.front() == typed) {
            matched.push_back(&c);
        }
    }
    if (matched.empty()) {
        return std::nullopt;
    }
    CompletionTrie out;
    out.root_position = trie.root_position;
    out.root.score = trie.root.score;
    if (matched.size() == 1 && matched.front()->text.size() == 1) {
        // The only candidate is fully consumed: it becomes the new root.
        const TrieNode& n = *matched.front();
        out.root.children = n.children;
        out.root.score = 1.0;
        for (auto& c : out.root.children) {
            rescale(c, 1.0 / n.score);
        }
        return out;
    }
    for (const TrieNode* m : matched) {
        if (m->text.size() == 1) {
            for (const auto& c : m->children) {
                out.root.children.push_back(c);
            }
        } else {
            TrieNode copy = *m;
            copy.text.erase(0, 1);
            out.root.children.push_back(std::move(copy));
        }
    }
    std::stable_sort(out.root.children.begin(), out.root.children.end(), [](const TrieNode& a, const TrieNode& b) {
        return a.score != b.score ? a.score > b.score : a.subtoken < b.subtoken;
    });
    return out;
}

std::optional<CompletionTrie> prune_on_text(const CompletionTrie& trie, std::string_view typed) {
    std::optional<CompletionTrie> cur = trie;
    for (char c : typed) {
        cur = prune_on_keystroke(*cur, c);
        if (!cur) {
            return std::nullopt;
        }
    }
    return cur;
}

DisplayText postprocess_tokens(std::span<const std::string> tokens, Language lang) {
    std::vector<Token> atoms;
    for (const auto& image : tokens) {
        Token t = classify_atom(image, lang);
        if (t.kind == TokenKind::eol) {
            break;
        }
        if (dropped_kind(t.kind)) {
            continue;
        }
        atoms.push_back(std::move(t));
    }
    DisplayText out;
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    out.text = lexnorm::render_line(atoms, lang, lexnorm::RenderStyle::display, &spans);
    for (std::size_t i = 0; i < atoms.size(); ++i) {
        const auto [b, e] = spans[i];
        switch (atoms[i].kind) {
        case TokenKind::str_lit_sentinel:
            out.placeholders.push_back({b + 1, e - 1});
            break;
        case TokenKind::kept_literal:
            if (lexnorm::is_kept_string_image(atoms[i].text)) {
                out.placeholders.push_back({b + 1, e - 1});
            } else {
                out.placeholders.push_back({b, e});
            }
            break;
        case TokenKind::num_lit_sentinel:
            out.placeholders.push_back({b, e});
            break;
        default:
            break;
        }
    }
    return out;
}

DisplayText postprocess(std::span<const TokenId> ids, const vocab::SubtokenVocabulary& vocab, Language lang) {
    const auto tokens = vocab::decode_tokens(ids, vocab);
    return postprocess_tokens(tokens, lang);
}

SuggestionCache::SuggestionCache(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) {
        throw Error("suggestion cache capacity must be positive");
    }
}

std::string SuggestionCache::key_for(std::string_view preceding_code) {
    if (preceding_code.size() > kCacheKeyChars) {
        preceding_code = preceding_code.substr(preceding_code.size() - kCacheKeyChars);
    }
    return std::string(preceding_code);
}

const CompletionTrie* SuggestionCache::find(const std::string& key) {
    auto it = index_.find(key);
    if (it == index_.end()) {
        return nullptr;
    }
    order_.splice(order_.begin(), order_, it->second);
    return &it->second->second;
}

void SuggestionCache::insert(const std::string& key, CompletionTrie trie) {
    if (auto it = index_.find(key); it != index_.end()) {
        it->second->second = std::move(trie);
        order_.splice(order_.begin(), order_, it->second);
        return;
    }
    order_.emplace_front(key, std::move(trie));
    index_[key] = order_.begin();
    if (index_.size() > capacity_) {
        index_.erase(order_.back().first);
        order_.pop_back();
    }
}

namespace {

nlohmann::json node_to_json(const TrieNode& n) {
    nlohmann::json j;
    j["id"] = n.id;
    j["subtoken"] = n.subtoken;
    j["text"] = n.text;
    j["score"] = n.score;
    j["break"] = n.is_break;
    j["children"] = nlohmann::json::array();
    for (const auto& c : n.children) {
        j["children"].push_back(node_to_json(c));
    }
    return j;
}

TrieNode node_from_json(const nlohmann::json& j) {
    TrieNode n;
    n.id = j.at("id").get<TokenId>();
    n.subtoken = j.at("subtoken").get<std::string>();
    n.text = j.at("text").get<std::string>();
    n.score = j.at("score").get<double>();
    n.is_break = j.at("break").get<bool>();
    for (const auto& c : j.at("children")) {
        n.children.push_back(node_from_json(c));
    }
    return n;
}

}  // namespace

nlohmann::json trie_to_json(const CompletionTrie& trie) {
    nlohmann::json j;
    j["root_position"] = trie.root_position;
    j["root_score"] = trie.root.score;
    j["children"] = nlohmann::json::array();
    for (const auto& c : trie.root.children) {
        j["children"].push_back(node_to_json(c));
    }
    return j;
}

CompletionTrie trie_from_json(const nlohmann::json& j) {
    CompletionTrie trie;
    trie.root_position = j.at("root_position").get<std::size_t>();
    trie.root.score = j.value("root_score", 1.0);
    for (const auto& c : j.at("children")) {
        trie.root.children.push_back(node_from_json(c));
    }
    return trie;
}

}  // namespace gptc::suggest
