#include "gptc/lexnorm.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <istream>
#include <map>
#include <ostream>

namespace gptc::lexnorm {

std::string_view to_string(TokenKind kind) noexcept {
    switch (kind) {
    case TokenKind::identifier:
        return "identifier";
    case TokenKind::keyword:
        return "keyword";
    case TokenKind::punct:
        return "punct";
    case TokenKind::string_literal:
        return "string";
    case TokenKind::number_literal:
        return "number";
    case TokenKind::comment:
        return "comment";
    case TokenKind::str_lit_sentinel:
        return "str-lit-sentinel";
    case TokenKind::num_lit_sentinel:
        return "num-lit-sentinel";
    case TokenKind::comment_sentinel:
        return "comment-sentinel";
    case TokenKind::kept_literal:
        return "kept-literal";
    case TokenKind::bof:
        return "bof";
    case TokenKind::eof:
        return "eof";
    case TokenKind::eol:
        return "eol";
    case TokenKind::indent:
        return "indent";
    case TokenKind::dedent:
        return "dedent";
    case TokenKind::lang_prefix:
        return "lang-prefix";
    }
    return "unknown";
}

std::string kept_string_image(std::string_view literal) {
    return "<STR_LIT:" + std::string(literal) + ">";
}

std::string kept_number_image(std::string_view literal) {
    return "<NUM_LIT:" + std::string(literal) + ">";
}

std::string lang_prefix_image(Language lang) {
    return "<LANG:" + std::string(to_string(lang)) + ">";
}

bool is_kept_image(std::string_view image) noexcept {
    return image.size() >= 10 && image.back() == '>' &&
           (image.starts_with("<STR_LIT:") || image.starts_with("<NUM_LIT:"));
}

bool is_kept_string_image(std::string_view image) noexcept {
    return is_kept_image(image) && image.starts_with("<STR_LIT:");
}

std::string_view kept_image_literal(std::string_view image) noexcept {
    if (!is_kept_image(image)) {
        return {};
    }
    return image.substr(9, image.size() - 10);
}

bool same_token(const Token& a, const Token& b) noexcept {
    return a.kind == b.kind && a.text == b.text;
}

bool same_tokens(const TokenStream& a, const TokenStream& b) noexcept {
    return a.tokens.size() == b.tokens.size() &&
           std::equal(a.tokens.begin(), a.tokens.end(), b.tokens.begin(), same_token);
}

LexError::LexError(std::uint32_t line, std::uint32_t column, const std::string& what)
    : Error(std::to_string(line) + ":" + std::to_string(column) + ": " + what), line_(line), column_(column) {}

bool is_keyword(std::string_view word, Language lang) noexcept {
    static constexpr std::array<std::string_view, 6> kShared = {"if", "else", "def", "return", "for", "var"};
    if (std::find(kShared.begin(), kShared.end(), word) != kShared.end()) {
        return true;
    }
    if (lang == Language::toy_py) {
        return word == "in";
    }
    return word == "while";
}

bool is_structural(TokenKind kind) noexcept {
    switch (kind) {
    case TokenKind::bof:
    case TokenKind::eof:
    case TokenKind::eol:
    case TokenKind::indent:
    case TokenKind::dedent:
    case TokenKind::lang_prefix:
        return true;
    default:
        return false;
    }
}

namespace {

constexpr std::array<std::string_view, 14> kTwoCharPunct = {"==", "!=", "<=", ">=", "+=", "-=", "*=",
                                                            "/=", "->", "&&", "||", "**", "<<", ">>"};
constexpr std::string_view kOneCharPunct = "()[]{},:;.=+-*/%<>!&|^~@";

bool is_ident_start(char c) noexcept {
    return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
}

bool is_ident_char(char c) noexcept {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

class Lexer {
public:
    Lexer(std::string_view src, Language lang, LexOptions options) : src_(src), lang_(lang), options_(options) {
        out_.language = lang;
    }

    TokenStream run() {
        push(TokenKind::bof, std::string(kBof), 1, 1);
        while (pos_ < src_.size()) {
            lex_line();
        }
        if (options_.finalize) {
            if (line_has_content_) {
                push(TokenKind::eol, std::string(kEol), line_, column());
            }
            while (indents_.size() > 1) {
                indents_.pop_back();
                push(TokenKind::dedent, std::string(kDedent), line_, 1);
            }
            push(TokenKind::eof, std::string(kEof), line_, column());
        }
        return std::move(out_);
    }

private:
    std::uint32_t column() const noexcept { return static_cast<std::uint32_t>(pos_ - line_start_ + 1); }

    void push(TokenKind kind, std::string text, std::uint32_t line, std::uint32_t col) {
        out_.tokens.push_back(Token{kind, std::move(text), line, col});
    }

    [[noreturn]] void fail(const std::string& what) const { throw LexError(line_, column(), what); }

    void lex_line() {
        line_start_ = pos_;
        line_has_content_ = false;
        std::size_t width = 0;
        while (pos_ < src_.size() && (src_[pos_] == ' ' || src_[pos_] == '\t')) {
            width = src_[pos_] == '\t' ? (width / 4 + 1) * 4 : width + 1;
            ++pos_;
        }
        bool first_atom = true;
        while (pos_ < src_.size()) {
            const char c = src_[pos_];
            if (c == '\n') {
                push(TokenKind::eol, std::string(kEol), line_, column());
                ++pos_;
                ++line_;
                line_has_content_ = false;
                return;
            }
            if (c == ' ' || c == '\t' || c == '\r') {
                ++pos_;
                continue;
            }
            line_has_content_ = true;
            const bool comment = starts_comment();
            if (first_atom && !comment && lang_ == Language::toy_py) {
                apply_indentation(width);
            }
            first_atom = false;
            if (comment) {
                lex_comment();
            } else {
                lex_atom();
            }
        }
    }

    bool starts_comment() const noexcept {
        if (lang_ == Language::toy_py) {
            return src_[pos_] == '#';
        }
        return src_.substr(pos_, 2) == "//";
    }

    void apply_indentation(std::size_t width) {
        if (width > indents_.back()) {
            indents_.push_back(width);
            push(TokenKind::indent, std::string(kIndent), line_, 1);
            return;
        }
        while (width < indents_.back()) {
            indents_.pop_back();
            push(TokenKind::dedent, std::string(kDedent), line_, 1);
        }
        if (width != indents_.back()) {
            throw LexError(line_, 1, "inconsistent dedent");
        }
    }

    void lex_comment() {
        const auto col = column();
        std::size_t end = src_.find('\n', pos_);
        if (end == std::string_view::npos) {
            end = src_.size();
        }
        std::string text(trim(src_.substr(pos_, end - pos_)));
        pos_ = end;
        push(TokenKind::comment, std::move(text), line_, col);
    }

    void lex_atom() {
        const auto col = column();
        const char c = src_[pos_];
        if (is_ident_start(c)) {
            const std::size_t start = pos_;
            while (pos_ < src_.size() && is_ident_char(src_[pos_])) {
                ++pos_;
            }
            std::string word(src_.substr(start, pos_ - start));
            const auto kind = is_keyword(word, lang_) ? TokenKind::keyword : TokenKind::identifier;
            push(kind, std::move(word), line_, col);
            return;
        }
        if (std::isdigit(static_cast<unsigned char>(c))) {
            lex_number(col);
            return;
        }
        if (c == '"' || c == '\'') {
            lex_string(col);
            return;
        }
        if (c == '<' && lex_sentinel(col)) {
            return;
        }
        for (auto op : kTwoCharPunct) {
            if (src_.substr(pos_, 2) == op) {
                push(TokenKind::punct, std::string(op), line_, col);
                pos_ += 2;
                return;
            }
        }
        if (kOneCharPunct.find(c) != std::string_view::npos) {
            push(TokenKind::punct, std::string(1, c), line_, col);
            ++pos_;
            return;
        }
        std::string shown = std::isprint(static_cast<unsigned char>(c))
                                ? std::string(1, c)
                                : "\\x" + to_hex(static_cast<unsigned char>(c)).substr(14);
        fail("illegal character '" + shown + "'");
    }

    void lex_number(std::uint32_t col) {
        const std::size_t start = pos_;
        if (src_.substr(pos_, 2) == "0x" || src_.substr(pos_, 2) == "0X") {
            pos_ += 2;
            while (pos_ < src_.size() && std::isxdigit(static_cast<unsigned char>(src_[pos_]))) {
                ++pos_;
            }
        } else {
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
                ++pos_;
            }
            if (pos_ + 1 < src_.size() && src_[pos_] == '.' &&
                std::isdigit(static_cast<unsigned char>(src_[pos_ + 1]))) {
                ++pos_;
                while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
                    ++pos_;
                }
            }
        }
        if (pos_ < src_.size() && is_ident_char(src_[pos_])) {
            fail("malformed number literal");
        }
        push(TokenKind::number_literal, std::string(src_.substr(start, pos_ - start)), line_, col);
    }

    void lex_string(std::uint32_t col) {
        const char quote = src_[pos_++];
        std::string content;
        while (true) {
            if (pos_ >= src_.size() || src_[pos_] == '\n') {
                out_.diagnostics.push_back(Diagnostic{line_, col, "unterminated string literal"});
                break;
            }
            const char c = src_[pos_];
            if (c == quote) {
                ++pos_;
                break;
            }
            if (c == '\\' && pos_ + 1 < src_.size() && src_[pos_ + 1] != '\n') {
                const char e = src_[pos_ + 1];
                switch (e) {
                case 'n':
                    content += '\n';
                    break;
                case 't':
                    content += '\t';
                    break;
                case '\\':
                case '"':
                case '\'':
                    content += e;
                    break;
                default:
                    content += '\\';
                    content += e;
                }
                pos_ += 2;
                continue;
            }
            content += c;
            ++pos_;
        }
        push(TokenKind::string_literal, std::move(content), line_, col);
    }

    // Sentinel images produced by render() of a normalized stream.
    bool lex_sentinel(std::uint32_t col) {
        const auto rest = src_.substr(pos_);
        for (auto [image, kind] : {std::pair{kStrLit, TokenKind::str_lit_sentinel},
                                   std::pair{kNumLit, TokenKind::num_lit_sentinel},
                                   std::pair{kComment, TokenKind::comment_sentinel}}) {
            if (rest.starts_with(image)) {
                push(kind, std::string(image), line_, col);
                pos_ += image.size();
                return true;
            }
        }
        if (rest.starts_with("<STR_LIT:") || rest.starts_with("<NUM_LIT:")) {
            const std::size_t close = rest.find('>');
            const std::size_t newline = rest.find('\n');
            if (close != std::string_view::npos && close < newline) {
                push(TokenKind::kept_literal, std::string(rest.substr(0, close + 1)), line_, col);
                pos_ += close + 1;
                return true;
            }
        }
        return false;
    }

    std::string_view src_;
    Language lang_;
    LexOptions options_;
    TokenStream out_;
    std::size_t pos_ = 0;
    std::size_t line_start_ = 0;
    std::uint32_t line_ = 1;
    bool line_has_content_ = false;
    std::vector<std::size_t> indents_{0};
};

}  // namespace

TokenStream lex(std::string_view source, Language lang, LexOptions options) {
    return Lexer(source, lang, options).run();
}

// ---------------------------------------------------------------------------
// Literal table

bool keepable_literal(std::string_view literal) noexcept {
    return std::none_of(literal.begin(), literal.end(), [](char c) {
        const auto u = static_cast<unsigned char>(c);
        return c == '>' || u < 0x20 || u == 0x7f;
    });
}

bool LiteralTable::keeps_string(std::string_view literal) const noexcept {
    return std::any_of(strings.begin(), strings.end(), [&](const auto& e) { return e.first == literal; });
}

bool LiteralTable::keeps_number(std::string_view literal) const noexcept {
    return std::any_of(numbers.begin(), numbers.end(), [&](const auto& e) { return e.first == literal; });
}

std::vector<std::string> LiteralTable::kept_images() const {
    std::vector<std::string> out;
    for (const auto& [lit, count] : strings) {
        out.push_back(kept_string_image(lit));
    }
    for (const auto& [lit, count] : numbers) {
        out.push_back(kept_number_image(lit));
    }
    return out;
}

bool is_docstring(const TokenStream& stream, std::size_t index) noexcept {
    const auto& toks = stream.tokens;
    if (stream.language != Language::toy_py || index == 0 || index + 1 >= toks.size()) {
        return false;
    }
    if (toks[index].kind != TokenKind::string_literal && toks[index].kind != TokenKind::str_lit_sentinel &&
        !(toks[index].kind == TokenKind::kept_literal && is_kept_string_image(toks[index].text))) {
        return false;
    }
    const auto prev = toks[index - 1].kind;
    return (prev == TokenKind::bof || prev == TokenKind::indent) && toks[index + 1].kind == TokenKind::eol;
}

namespace {

std::vector<std::pair<std::string, std::uint64_t>> top_k(const std::map<std::string, std::uint64_t>& counts,
                                                         std::size_t k) {
    std::vector<std::pair<std::string, std::uint64_t>> items(counts.begin(), counts.end());
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) {
            return a.second > b.second;
        }
        return a.first < b.first;
    });
    if (items.size() > k) {
        items.resize(k);
    }
    return items;
}

}  // namespace

LiteralTable build_literal_table(std::span<const TokenStream> streams, KeptCounts kept_counts) {
    std::map<std::string, std::uint64_t> strings;
    std::map<std::string, std::uint64_t> numbers;
    for (const auto& stream : streams) {
        for (std::size_t i = 0; i < stream.tokens.size(); ++i) {
            const auto& tok = stream.tokens[i];
            if (!keepable_literal(tok.text)) {
                continue;
            }
            if (tok.kind == TokenKind::string_literal && !is_docstring(stream, i)) {
                ++strings[tok.text];
            } else if (tok.kind == TokenKind::number_literal) {
                ++numbers[tok.text];
            }
        }
    }
    LiteralTable table;
    table.kept_counts = kept_counts;
    table.strings = top_k(strings, kept_counts.strings);
    table.numbers = top_k(numbers, kept_counts.numbers);
    return table;
}

void write_literal_table(std::ostream& out, const LiteralTable& table) {
    out << "# kept string=" << table.kept_counts.strings << " number=" << table.kept_counts.numbers << '\n';
    for (const auto& [lit, count] : table.strings) {
        out << "string\t" << escape_field(lit) << '\t' << count << '\n';
    }
    for (const auto& [lit, count] : table.numbers) {
        out << "number\t" << escape_field(lit) << '\t' << count << '\n';
    }
}

LiteralTable read_literal_table(std::istream& in) {
    LiteralTable table;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        if (line.starts_with("# kept ")) {
            for (const auto& field : split(line.substr(7), ' ')) {
                const auto kv = split(field, '=');
                if (kv.size() == 2 && kv[0] == "string") {
                    table.kept_counts.strings = std::stoul(kv[1]);
                } else if (kv.size() == 2 && kv[0] == "number") {
                    table.kept_counts.numbers = std::stoul(kv[1]);
                }
            }
            continue;
        }
        const auto fields = split(line, '\t');
        if (fields.size() != 3) {
            throw Error("malformed literal table line '" + line + "'");
        }
        auto entry = std::pair{unescape_field(fields[1]), static_cast<std::uint64_t>(std::stoull(fields[2]))};
        if (fields[0] == "string") {
            table.strings.push_back(std::move(entry));
        } else if (fields[0] == "number") {
            table.numbers.push_back(std::move(entry));
        } else {
            throw Error("unknown literal kind '" + fields[0] + "'");
        }
    }
    return table;
}

TokenStream normalize(const TokenStream& stream, const LiteralTable& table) {
    TokenStream out;
    out.language = stream.language;
    out.diagnostics = stream.diagnostics;
    out.tokens.reserve(stream.tokens.size());
    for (std::size_t i = 0; i < stream.tokens.size(); ++i) {
        Token tok = stream.tokens[i];
        switch (tok.kind) {
        case TokenKind::string_literal:
            if (is_docstring(stream, i)) {
                tok.kind = TokenKind::comment_sentinel;
                tok.text = kComment;
            } else if (table.keeps_string(tok.text)) {
                tok.kind = TokenKind::kept_literal;
                tok.text = kept_string_image(tok.text);
            } else {
                tok.kind = TokenKind::str_lit_sentinel;
                tok.text = kStrLit;
            }
            break;
        case TokenKind::number_literal:
            if (table.keeps_number(tok.text)) {
                tok.kind = TokenKind::kept_literal;
                tok.text = kept_number_image(tok.text);
            } else {
                tok.kind = TokenKind::num_lit_sentinel;
                tok.text = kNumLit;
            }
            break;
        case TokenKind::comment:
            tok.kind = TokenKind::comment_sentinel;
            tok.text = kComment;
            break;
        case TokenKind::str_lit_sentinel:
        case TokenKind::kept_literal:
            if (is_docstring(stream, i)) {
                tok.kind = TokenKind::comment_sentinel;
                tok.text = kComment;
            }
            break;
        default:
            break;
        }
        out.tokens.push_back(std::move(tok));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

std::string quote_string(std::string_view content) {
    std::string out = "\"";
    for (char c : content) {
        switch (c) {
        case '\\':
            out += "\\\\";
            break;
        case '"':
            out += "\\\"";
            break;
        case '\n':
            out += "\\n";
            break;
        case '\t':
            out += "\\t";
            break;
        default:
            out += c;
        }
    }
    out += '"';
    return out;
}

bool is_punct(const Token& t, std::string_view text) noexcept {
    return t.kind == TokenKind::punct && t.text == text;
}

}  // namespace

std::string atom_image(const Token& token, Language lang, RenderStyle style) {
    switch (token.kind) {
    case TokenKind::string_literal:
        return quote_string(token.text);
    case TokenKind::str_lit_sentinel:
        return style == RenderStyle::display ? std::string("\"\"") : token.text;
    case TokenKind::num_lit_sentinel:
        return style == RenderStyle::display ? std::string("0") : token.text;
    case TokenKind::comment_sentinel:
        if (style == RenderStyle::display) {
            return lang == Language::toy_py ? "#" : "//";
        }
        return token.text;
    case TokenKind::kept_literal:
        if (style == RenderStyle::display) {
            const auto lit = kept_image_literal(token.text);
            return is_kept_string_image(token.text) ? quote_string(lit) : std::string(lit);
        }
        return token.text;
    default:
        return token.text;
    }
}

bool space_between(const Token& prev, const Token& next) noexcept {
    if (next.kind == TokenKind::punct) {
        static constexpr std::string_view kTight = ",:)]};.";
        if (next.text.size() == 1 && kTight.find(next.text[0]) != std::string_view::npos) {
            return false;
        }
        if (next.text == "(" || next.text == "[") {
            if (prev.kind == TokenKind::identifier || is_punct(prev, ")") || is_punct(prev, "]")) {
                return false;
            }
        }
    }
    if (prev.kind == TokenKind::punct && (prev.text == "(" || prev.text == "[" || prev.text == "{" || prev.text == ".")) {
        return false;
    }
    return true;
}

std::string render_line(std::span<const Token> tokens, Language lang, RenderStyle style,
                        std::vector<std::pair<std::size_t, std::size_t>>* spans) {
    std::string out;
    const Token* prev = nullptr;
    if (spans != nullptr) {
        spans->clear();
    }
    for (const auto& tok : tokens) {
        if (is_structural(tok.kind)) {
            if (spans != nullptr) {
                spans->emplace_back(out.size(), out.size());
            }
            continue;
        }
        if (prev != nullptr && space_between(*prev, tok)) {
            out += ' ';
        }
        const std::size_t begin = out.size();
        out += atom_image(tok, lang, style);
        if (spans != nullptr) {
            spans->emplace_back(begin, out.size());
        }
        prev = &tok;
    }
    return out;
}

std::string render(const TokenStream& stream, RenderStyle style) {
    std::string out;
    int level = 0;
    int brace_depth = 0;
    std::vector<Token> line;

    auto flush_line = [&](bool newline) {
        if (!line.empty()) {
            int indent = level;
            if (stream.language == Language::toy_c) {
                indent = brace_depth;
                if (is_punct(line.front(), "}")) {
                    indent = std::max(0, indent - 1);
                }
                for (const auto& t : line) {
                    if (is_punct(t, "{")) {
                        ++brace_depth;
                    } else if (is_punct(t, "}")) {
                        brace_depth = std::max(0, brace_depth - 1);
                    }
                }
            }
            out.append(static_cast<std::size_t>(indent) * 4, ' ');
            out += render_line(line, stream.language, style);
            line.clear();
        }
        if (newline) {
            out += '\n';
        }
    };

    for (const auto& tok : stream.tokens) {
        switch (tok.kind) {
        case TokenKind::bof:
        case TokenKind::eof:
        case TokenKind::lang_prefix:
            break;
        case TokenKind::eol:
            flush_line(true);
            break;
        case TokenKind::indent:
            ++level;
            break;
        case TokenKind::dedent:
            if (--level < 0) {
                throw RenderError("dedent without matching indent");
            }
            break;
        default:
            line.push_back(tok);
        }
    }
    flush_line(false);
    if (level != 0) {
        throw RenderError("unbalanced indentation: " + std::to_string(level) + " open indent(s) at end of stream");
    }
    return out;
}

}  // namespace gptc::lexnorm
