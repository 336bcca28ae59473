#pragma once

#include "gptc/common.hpp"
#include "gptc/decoder.hpp"
#include "gptc/lexnorm.hpp"

#include <nlohmann/json_fwd.hpp>

#include <list>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace gptc::vocab {
class SubtokenVocabulary;
}

namespace gptc::suggest {

struct TrieNode {
    TokenId id = 0;
    /// Vocabulary image, e.g. `count` or `er</w>`.
    std::string subtoken;
    /// Display text this subtoken contributes, including a leading space
    /// when its token is separated from the previous one.
    std::string text;
    /// exp(cumulative log-prob) of the path ending here.
    double score = 1.0;
    /// `<EOL>` leaf: the suggestion ends here.
    bool is_break = false;
    /// Sorted by score descending, ties by subtoken ascending.
    std::vector<TrieNode> children;
};

struct CompletionTrie {
    TrieNode root;
    /// Character offset of the query point within its line; stays fixed while pruning.
    std::size_t root_position = 0;

    bool empty() const noexcept { return root.children.empty(); }
    std::size_t node_count() const;
};

/// Merges hypotheses by common subtoken prefix. `<BOF>`, `<EOF>`, `<INDENT>`
/// and `<DEDENT>` produce no node; `<EOL>` ends a path as a break leaf.
/// `previous` is the last context token (drives the first leading space).
CompletionTrie build_trie(std::span<const decoder::Hypothesis> hypotheses, const vocab::SubtokenVocabulary& vocab,
                          Language lang, const lexnorm::Token* previous, std::size_t root_position);

/// alpha / (1 + exp(-L / kappa)).
double early_stop_ratio(double L, double alpha, double kappa);

inline constexpr double kDefaultAlpha = 0.8;
inline constexpr double kDefaultKappa = 10.0;

struct Step {
    TokenId id = 0;
    std::string subtoken;
    std::string text;
    double score = 0.0;
    bool is_break = false;
};

/// Follows the best child until none reaches R times its parent's score.
/// alpha = 0 disables early stopping.
std::vector<Step> traverse_greedy(const CompletionTrie& trie, double alpha, double kappa);

std::string steps_text(std::span<const Step> steps);

/// Consumes one typed character. nullopt signals a miss.
std::optional<CompletionTrie> prune_on_keystroke(const CompletionTrie& trie, char typed);
/// Consumes every character of `typed` in turn.
std::optional<CompletionTrie> prune_on_text(const CompletionTrie& trie, std::string_view typed);

struct Placeholder {
    std::size_t begin = 0;
    std::size_t end = 0;
};

struct DisplayText {
    std::string text;
    std::vector<Placeholder> placeholders;
};

/// Whole-token images to display text: drops `<BOF>`/`<EOF>` and scope
/// markers, truncates at `<EOL>`, shows literal sentinels as placeholders.
DisplayText postprocess_tokens(std::span<const std::string> tokens, Language lang);
DisplayText postprocess(std::span<const TokenId> ids, const vocab::SubtokenVocabulary& vocab, Language lang);

/// Lexer token for a whole-token image (sentinels, kept literals, keywords, ...).
lexnorm::Token classify_atom(std::string_view image, Language lang);

/// Least-recently-used store of tries keyed by the preceding code.
class SuggestionCache {
public:
    explicit SuggestionCache(std::size_t capacity = 64);

    static std::string key_for(std::string_view preceding_code);

    /// Marks the entry as recently used.
    const CompletionTrie* find(const std::string& key);
    void insert(const std::string& key, CompletionTrie trie);
    std::size_t size() const noexcept { return index_.size(); }
    std::size_t capacity() const noexcept { return capacity_; }

private:
    using Entry = std::pair<std::string, CompletionTrie>;
    std::size_t capacity_;
    std::list<Entry> order_;  // most recent first
    std::unordered_map<std::string, std::list<Entry>::iterator> index_;
};

inline constexpr std::size_t kCacheKeyChars = 200;

/// Depth-first nested records {id, subtoken, text, score, break, children}.
nlohmann::json trie_to_json(const CompletionTrie& trie);
CompletionTrie trie_from_json(const nlohmann::json& j);

}  // namespace gptc::suggest
