#include "gptc/lexnorm.hpp"
#include "gptc/synth.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <sstream>

using namespace gptc;
using namespace gptc::lexnorm;

namespace {

std::vector<TokenKind> kinds(const TokenStream& s) {
    std::vector<TokenKind> out;
    for (const auto& t : s.tokens) out.push_back(t.kind);
    return out;
}

std::vector<std::string> texts(const TokenStream& s) {
    std::vector<std::string> out;
    for (const auto& t : s.tokens) out.push_back(t.text);
    return out;
}

std::size_t count_kind(const TokenStream& s, TokenKind k) {
    return static_cast<std::size_t>(
        std::count_if(s.tokens.begin(), s.tokens.end(), [&](const Token& t) { return t.kind == k; }));
}

}  // namespace

TEST(Lex, SimpleAssignment) {
    const auto s = lex("x = 1\n", Language::toy_py);
    EXPECT_EQ(kinds(s), (std::vector<TokenKind>{TokenKind::bof, TokenKind::identifier, TokenKind::punct,
                                                TokenKind::number_literal, TokenKind::eol, TokenKind::eof}));
    const auto n = normalize(s, LiteralTable{});
    EXPECT_EQ(n.tokens[3].kind, TokenKind::num_lit_sentinel);
    EXPECT_EQ(n.tokens[3].text, "<NUM_LIT>");
}

TEST(Lex, EmptySource) {
    EXPECT_EQ(kinds(lex("", Language::toy_py)), (std::vector<TokenKind>{TokenKind::bof, TokenKind::eof}));
    EXPECT_EQ(kinds(lex("", Language::toy_c)), (std::vector<TokenKind>{TokenKind::bof, TokenKind::eof}));
}

TEST(Lex, IndentAndDedent) {
    const auto s = lex("if a:\n  b\n", Language::toy_py);
    const auto k = kinds(s);
    const auto first_eol = std::find(k.begin(), k.end(), TokenKind::eol);
    ASSERT_NE(first_eol, k.end());
    EXPECT_EQ(*(first_eol + 1), TokenKind::indent);
    EXPECT_EQ(k[k.size() - 2], TokenKind::dedent);
    EXPECT_EQ(k.back(), TokenKind::eof);
}

TEST(Lex, ToyCHasNoIndentTokens) {
    const auto s = lex("def f(a) {\n    return a;\n}\n", Language::toy_c);
    EXPECT_EQ(count_kind(s, TokenKind::indent), 0u);
    EXPECT_EQ(count_kind(s, TokenKind::dedent), 0u);
}

TEST(Lex, IllegalCharacterCarriesPosition) {
    try {
        lex("x = 1\ny = $\n", Language::toy_py);
        FAIL() << "expected LexError";
    } catch (const LexError& e) {
        EXPECT_EQ(e.line(), 2u);
        EXPECT_EQ(e.column(), 5u);
    }
}

TEST(Lex, UnterminatedStringFlagged) {
    const auto s = lex("x = \"abc\ny = 1\n", Language::toy_py);
    EXPECT_TRUE(s.has_errors());
    const auto it = std::find_if(s.tokens.begin(), s.tokens.end(),
                                 [](const Token& t) { return t.kind == TokenKind::string_literal; });
    ASSERT_NE(it, s.tokens.end());
    EXPECT_EQ(it->text, "abc");
    EXPECT_EQ(count_kind(s, TokenKind::eol), 2u);
}

TEST(Lex, KeywordsPerLanguage) {
    for (auto w : {"if", "else", "def", "return", "for", "var"}) {
        EXPECT_TRUE(is_keyword(w, Language::toy_py)) << w;
        EXPECT_TRUE(is_keyword(w, Language::toy_c)) << w;
    }
    EXPECT_FALSE(is_keyword("counter", Language::toy_py));
}

TEST(Lex, PrefixModeLeavesLineOpen) {
    const auto s = lex("def f(a):\n    x = a", Language::toy_py, LexOptions{false});
    EXPECT_EQ(s.tokens.back().kind, TokenKind::identifier);
    EXPECT_EQ(count_kind(s, TokenKind::eof), 0u);
}

TEST(LiteralTable, TopKByFrequency) {
    std::string src;
    for (int i = 0; i < 10; ++i) src += "s = \"__main__\"\n";
    for (int i = 0; i < 2; ++i) src += "t = \"x\"\n";
    const std::vector<TokenStream> streams = {lex(src, Language::toy_py)};
    const auto table = build_literal_table(streams, {1, 0});
    ASSERT_EQ(table.strings.size(), 1u);
    EXPECT_EQ(table.strings[0].first, "__main__");
    EXPECT_EQ(table.strings[0].second, 10u);
    EXPECT_TRUE(table.numbers.empty());
}

TEST(LiteralTable, TieBrokenAscending) {
    const std::vector<TokenStream> streams = {lex("a = \"b\"\na = \"a\"\na = \"b\"\na = \"a\"\na = \"b\"\na = \"a\"\n",
                                                  Language::toy_py)};
    const auto table = build_literal_table(streams, {1, 5});
    ASSERT_EQ(table.strings.size(), 1u);
    EXPECT_EQ(table.strings[0].first, "a");
}

TEST(LiteralTable, MatchesBruteForceCountAndIsNonIncreasing) {
    const auto files = synth::vocabulary_corpus(5);
    std::vector<TokenStream> streams;
    std::map<std::string, std::uint64_t> numbers;
    for (const auto& f : files) {
        streams.push_back(lex(f.source, f.language));
        for (const auto& t : streams.back().tokens) {
            if (t.kind == TokenKind::number_literal) ++numbers[t.text];
        }
    }
    const auto table = build_literal_table(streams, {20, 5});
    std::vector<std::pair<std::string, std::uint64_t>> oracle(numbers.begin(), numbers.end());
    std::stable_sort(oracle.begin(), oracle.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    oracle.resize(std::min<std::size_t>(5, oracle.size()));
    EXPECT_EQ(table.numbers, oracle);
    for (std::size_t i = 1; i < table.strings.size(); ++i) {
        EXPECT_GE(table.strings[i - 1].second, table.strings[i].second);
    }
}

TEST(LiteralTable, RoundTrip) {
    LiteralTable t;
    t.strings = {{"__main__", 10}, {"a\tb", 3}};
    t.numbers = {{"0", 7}};
    t.kept_counts = {2, 1};
    std::ostringstream out;
    write_literal_table(out, t);
    std::istringstream in(out.str());
    const auto back = read_literal_table(in);
    EXPECT_EQ(back.strings, t.strings);
    EXPECT_EQ(back.numbers, t.numbers);
}

TEST(Normalize, KeptString) {
    LiteralTable table;
    table.strings = {{"__main__", 1}};
    const auto n = normalize(lex("s = \"__main__\"\n", Language::toy_py), table);
    EXPECT_EQ(n.tokens[3].kind, TokenKind::kept_literal);
    EXPECT_EQ(n.tokens[3].text, "<STR_LIT:__main__>");
}

TEST(Normalize, UnkeptNumber) {
    const auto n = normalize(lex("n = 42\n", Language::toy_py), LiteralTable{});
    EXPECT_EQ(n.tokens[3].text, "<NUM_LIT>");
}

TEST(Normalize, CommentCollapses) {
    const auto n = normalize(lex("# secret key abc\n", Language::toy_py), LiteralTable{});
    EXPECT_EQ(count_kind(n, TokenKind::comment_sentinel), 1u);
    EXPECT_EQ(texts(n)[1], "<COMMENT>");
    const auto c = normalize(lex("// secret key abc\n", Language::toy_c), LiteralTable{});
    EXPECT_EQ(count_kind(c, TokenKind::comment_sentinel), 1u);
}

TEST(Normalize, DocstringBecomesComment) {
    const auto n = normalize(lex("def f(a):\n    \"does things\"\n    return a\n", Language::toy_py), LiteralTable{});
    EXPECT_EQ(count_kind(n, TokenKind::comment_sentinel), 1u);
    EXPECT_EQ(count_kind(n, TokenKind::str_lit_sentinel), 0u);
}

TEST(Normalize, IdentifiersUntouched) {
    const auto raw = lex("counter = total + 1\n", Language::toy_py);
    const auto n = normalize(raw, LiteralTable{});
    EXPECT_EQ(n.tokens[1].text, "counter");
    EXPECT_EQ(n.tokens[3].text, "total");
}

TEST(Normalize, PrivacyNoRawLiteralCharacters) {
    const auto files = synth::privacy_corpus(3);
    const auto literals = synth::literal_contents(files);
    ASSERT_FALSE(literals.empty());
    for (const auto& f : files) {
        const auto n = normalize(lex(f.source, f.language), LiteralTable{});
        for (const auto& t : n.tokens) {
            for (const auto& lit : literals) {
                EXPECT_EQ(t.text.find(lit), std::string::npos) << t.text;
            }
        }
    }
}

TEST(Render, SpacingRules) {
    const auto n = normalize(lex("x=1", Language::toy_py), LiteralTable{});
    EXPECT_EQ(render(n), "x = <NUM_LIT>\n");
    const auto call = lex("y = f( a ,b [ 0 ] )\n", Language::toy_py);
    EXPECT_EQ(render(normalize(call, LiteralTable{})), "y = f(a, b[<NUM_LIT>])\n");
}

TEST(Render, IndentWidthFour) {
    const auto s = lex("if a:\n  b\n", Language::toy_py);
    EXPECT_EQ(render(s), "if a:\n    b\n");
}

TEST(Render, ToyCBraceIndent) {
    const auto s = lex("def f(a) {\nif (a) {\nreturn a;\n}\n}\n", Language::toy_c);
    EXPECT_EQ(render(s), "def f(a) {\n    if (a) {\n        return a;\n    }\n}\n");
}

TEST(Render, DanglingIndentIsError) {
    auto s = lex("x\n", Language::toy_py);
    s.tokens.insert(s.tokens.begin() + 1, Token{TokenKind::indent, std::string(kIndent), 1, 1});
    EXPECT_THROW(render(s), RenderError);
}

TEST(Render, RoundTripStable) {
    for (const auto& f : synth::vocabulary_corpus(9)) {
        const auto once = lex(f.source, f.language);
        const auto twice = lex(render(once), f.language);
        ASSERT_TRUE(same_tokens(once, twice)) << f.source;
        const auto norm = normalize(once, LiteralTable{});
        const auto norm2 = lex(render(norm), f.language);
        ASSERT_TRUE(same_tokens(norm, norm2)) << render(norm);
        EXPECT_EQ(count_kind(once, TokenKind::indent), count_kind(once, TokenKind::dedent));
    }
}

TEST(Render, DisplayShowsPlaceholders) {
    const auto n = normalize(lex("print(\"hi\", 3)  # note\n", Language::toy_py), LiteralTable{});
    EXPECT_EQ(render(n, RenderStyle::display), "print(\"\", 0) #\n");
}
