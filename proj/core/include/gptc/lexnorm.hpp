#pragma once

#include "gptc/common.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gptc::lexnorm {

enum class TokenKind : std::uint8_t {
    identifier,
    keyword,
    punct,
    // Raw literal kinds, produced by lex() and replaced by normalize().
    string_literal,
    number_literal,
    comment,
    // Normalized kinds.
    str_lit_sentinel,
    num_lit_sentinel,
    comment_sentinel,
    kept_literal,
    // Structural kinds.
    bof,
    eof,
    eol,
    indent,
    dedent,
    lang_prefix,
};

std::string_view to_string(TokenKind kind) noexcept;

inline constexpr std::string_view kBof = "<BOF>";
inline constexpr std::string_view kEof = "<EOF>";
inline constexpr std::string_view kEol = "<EOL>";
inline constexpr std::string_view kIndent = "<INDENT>";
inline constexpr std::string_view kDedent = "<DEDENT>";
inline constexpr std::string_view kStrLit = "<STR_LIT>";
inline constexpr std::string_view kNumLit = "<NUM_LIT>";
inline constexpr std::string_view kComment = "<COMMENT>";
inline constexpr std::string_view kSep = "<SEP>";

/// `<STR_LIT:lit>` / `<NUM_LIT:lit>`.
std::string kept_string_image(std::string_view literal);
std::string kept_number_image(std::string_view literal);
/// Control-code prefix image, e.g. `<LANG:toy-py>`.
std::string lang_prefix_image(Language lang);

/// True for images of the form `<STR_LIT:...>` / `<NUM_LIT:...>`.
bool is_kept_image(std::string_view image) noexcept;
/// The `lit` part of a kept-literal image; empty view if not a kept image.
std::string_view kept_image_literal(std::string_view image) noexcept;
bool is_kept_string_image(std::string_view image) noexcept;

struct Token {
    TokenKind kind = TokenKind::identifier;
    /// Surface form. For string literals this is the decoded content without
    /// quotes; for sentinel and structural kinds the canonical image.
    std::string text;
    std::uint32_t line = 0;
    std::uint32_t column = 0;
};

/// Compares kind and text only.
bool same_token(const Token& a, const Token& b) noexcept;

struct Diagnostic {
    std::uint32_t line = 0;
    std::uint32_t column = 0;
    std::string message;
};

struct TokenStream {
    std::vector<Token> tokens;
    Language language = Language::toy_py;
    /// Recoverable problems, e.g. an unterminated string lexed to end of line.
    std::vector<Diagnostic> diagnostics;

    bool has_errors() const noexcept { return !diagnostics.empty(); }
};

bool same_tokens(const TokenStream& a, const TokenStream& b) noexcept;

class LexError : public Error {
public:
    LexError(std::uint32_t line, std::uint32_t column, const std::string& what);
    std::uint32_t line() const noexcept { return line_; }
    std::uint32_t column() const noexcept { return column_; }

private:
    std::uint32_t line_;
    std::uint32_t column_;
};

class RenderError : public Error {
public:
    using Error::Error;
};

struct LexOptions {
    /// When false the source is treated as a prefix being typed: no synthetic
    /// final `<EOL>`, no closing `<DEDENT>`s and no `<EOF>`.
    bool finalize = true;
};

bool is_keyword(std::string_view word, Language lang) noexcept;

TokenStream lex(std::string_view source, Language lang, LexOptions options = {});

struct KeptCounts {
    std::size_t strings = 20;
    std::size_t numbers = 5;
};

/// Most frequent string and number literals of a corpus, kept verbatim by
/// normalize(). Each list is ordered by descending count, ties ascending.
struct LiteralTable {
    std::vector<std::pair<std::string, std::uint64_t>> strings;
    std::vector<std::pair<std::string, std::uint64_t>> numbers;
    KeptCounts kept_counts;

    bool keeps_string(std::string_view literal) const noexcept;
    bool keeps_number(std::string_view literal) const noexcept;
    /// Every kept image (`<STR_LIT:..>` then `<NUM_LIT:..>`).
    std::vector<std::string> kept_images() const;
};

/// Whether a literal can be carried as a kept image without ambiguity.
bool keepable_literal(std::string_view literal) noexcept;

/// Counts raw literals over lexed (not yet normalized) streams.
LiteralTable build_literal_table(std::span<const TokenStream> streams, KeptCounts kept_counts);

void write_literal_table(std::ostream& out, const LiteralTable& table);
LiteralTable read_literal_table(std::istream& in);

/// True when token `index` of a toy-py stream is a docstring: a string
/// literal statement at the start of the file or of an indented block.
bool is_docstring(const TokenStream& stream, std::size_t index) noexcept;

/// Replaces literals and comments with sentinel or kept-literal tokens.
TokenStream normalize(const TokenStream& stream, const LiteralTable& table);

enum class RenderStyle : std::uint8_t {
    /// Sentinels printed as their images; re-lexes to the same stream.
    canonical,
    /// Sentinels printed as placeholder literals, as shown to a user.
    display,
};

/// Printable image of one atom (non-structural token).
std::string atom_image(const Token& token, Language lang, RenderStyle style = RenderStyle::canonical);

/// Canonical spacing rule between two consecutive atoms on one line.
bool space_between(const Token& prev, const Token& next) noexcept;

bool is_structural(TokenKind kind) noexcept;

std::string render(const TokenStream& stream, RenderStyle style = RenderStyle::canonical);

/// Renders the atoms of a single line (structural tokens are skipped) and
/// records the [begin, end) character span of every token in `spans`
/// (structural tokens get an empty span at their position).
std::string render_line(std::span<const Token> tokens, Language lang, RenderStyle style,
                        std::vector<std::pair<std::size_t, std::size_t>>* spans = nullptr);

}  // namespace gptc::lexnorm
