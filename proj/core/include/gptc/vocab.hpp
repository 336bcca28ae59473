#pragma once

#include "gptc/common.hpp"
#include "gptc/lexnorm.hpp"

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace gptc::vocab {

/// Suffix marking a token-final subtoken, as in `count</w>`.
inline constexpr std::string_view kEndOfToken = "</w>";

enum class Scheme : std::uint8_t {
    bpe,
    casing,
};

class VocabError : public Error {
public:
    using Error::Error;
};

/// Bijective subtoken <-> id table. Ids [0, special_count) are specials,
/// followed by the base character symbols, followed by learned symbols.
class SubtokenVocabulary {
public:
    SubtokenVocabulary() = default;

    std::size_t size() const noexcept { return subtokens_.size(); }
    Scheme scheme() const noexcept { return scheme_; }
    std::size_t special_count() const noexcept { return special_count_; }
    bool is_special(TokenId id) const noexcept { return id < special_count_; }

    std::optional<TokenId> find(std::string_view subtoken) const;
    /// Throws VocabError for unknown subtokens.
    TokenId id_of(std::string_view subtoken) const;
    /// Throws VocabError for out-of-range ids.
    const std::string& subtoken(TokenId id) const;

    const std::vector<std::pair<std::string, std::string>>& merges() const noexcept { return merges_; }

    TokenId bof() const { return id_of(lexnorm::kBof); }
    TokenId eof() const { return id_of(lexnorm::kEof); }
    TokenId eol() const { return id_of(lexnorm::kEol); }
    TokenId indent() const { return id_of(lexnorm::kIndent); }
    TokenId dedent() const { return id_of(lexnorm::kDedent); }
    TokenId sep() const { return id_of(lexnorm::kSep); }
    std::optional<TokenId> lang_prefix(Language lang) const;

    /// Number of non-special symbols that are single characters.
    std::size_t base_count() const noexcept { return base_count_; }

    std::vector<std::string> warnings;

    // Construction helpers used by the trainers and the file reader.
    static SubtokenVocabulary from_parts(Scheme scheme, std::vector<std::string> subtokens,
                                         std::size_t special_count, std::size_t base_count,
                                         std::vector<std::pair<std::string, std::string>> merges);

private:
    void index();

    Scheme scheme_ = Scheme::bpe;
    std::vector<std::string> subtokens_;
    std::unordered_map<std::string, TokenId> ids_;
    std::size_t special_count_ = 0;
    std::size_t base_count_ = 0;
    std::vector<std::pair<std::string, std::string>> merges_;
    std::unordered_map<std::string, std::size_t> merge_rank_;

    friend std::vector<TokenId> encode_word(std::string_view, const SubtokenVocabulary&);
};

/// Special images registered before any learned symbol: structural tokens,
/// literal sentinels, control codes for every language, then `extra`
/// (kept-literal images) in the given order.
std::vector<std::string> special_images(std::span<const std::string> extra);

/// Characters a non-special token may contain: printable ASCII except space.
bool is_base_char(char c) noexcept;

struct TrainOptions {
    std::size_t target_size = 2000;
    /// Kept-literal images to register as specials. Images of kept literals
    /// seen in the streams are registered as well.
    std::vector<std::string> kept_images;
};

/// Greedy byte-pair merges within token boundaries.
SubtokenVocabulary train_bpe(std::span<const lexnorm::TokenStream> streams, const TrainOptions& options);

/// Vocabulary of the most frequent casing-convention pieces.
SubtokenVocabulary train_casing(std::span<const lexnorm::TokenStream> streams, const TrainOptions& options);

/// Encodes one non-special token. Throws VocabError on characters outside the base set.
std::vector<TokenId> encode_word(std::string_view word, const SubtokenVocabulary& vocab);

/// Id of the special that stands for a token of structural/sentinel kind,
/// or nullopt for tokens that are split into subtokens.
std::optional<TokenId> special_id(const lexnorm::Token& token, const SubtokenVocabulary& vocab);

std::vector<TokenId> encode(const lexnorm::TokenStream& stream, const SubtokenVocabulary& vocab);
std::vector<TokenId> encode(std::span<const lexnorm::Token> tokens, const SubtokenVocabulary& vocab);

/// Concatenated surface text: subtoken images with end-of-token markers removed.
std::string decode(std::span<const TokenId> ids, const SubtokenVocabulary& vocab);

/// Groups ids into whole tokens using end-of-token markers; specials are
/// tokens of their own. A trailing unfinished token is returned as well.
std::vector<std::string> decode_tokens(std::span<const TokenId> ids, const SubtokenVocabulary& vocab);

/// Subtoken image without its end-of-token marker, and whether it had one.
std::pair<std::string_view, bool> strip_end_marker(std::string_view subtoken) noexcept;

struct CasingSplit {
    std::vector<std::string> parts;
    /// Underscore runs: separators[i] precedes parts[i]; separators.back() trails the last part.
    std::vector<std::string> separators;

    std::string reconstruct() const;
};

/// Splits at lower->upper boundaries, before the last capital of an
/// upper-case run followed by lower case, and at underscores.
CasingSplit split_by_casing(std::string_view identifier);

void write_vocabulary(std::ostream& out, const SubtokenVocabulary& vocab);
SubtokenVocabulary read_vocabulary(std::istream& in);

}  // namespace gptc::vocab
