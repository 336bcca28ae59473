#include "gptc/lexnorm.hpp"
#include "gptc/synth.hpp"
#include "gptc/vocab.hpp"

#include <gtest/gtest.h>

#include <map>
#include <random>
#include <sstream>

using namespace gptc;
using namespace gptc::vocab;
using lexnorm::LiteralTable;
using lexnorm::TokenKind;

namespace {

std::vector<lexnorm::TokenStream> normalized(const std::vector<std::string>& sources, Language lang) {
    std::vector<lexnorm::TokenStream> out;
    for (const auto& s : sources) {
        out.push_back(lexnorm::normalize(lexnorm::lex(s, lang), LiteralTable{}));
    }
    return out;
}

std::size_t floor_size() {
    return special_images({}).size() + 2 * (0x7e - 0x21 + 1);
}

bool is_word_kind(TokenKind k) {
    return k == TokenKind::identifier || k == TokenKind::keyword || k == TokenKind::punct;
}

/// Independent merge learner over string symbols.
std::vector<std::pair<std::string, std::string>> oracle_merges(std::span<const lexnorm::TokenStream> streams,
                                                               std::size_t max_merges) {
    std::map<std::string, std::uint64_t> counts;
    for (const auto& s : streams) {
        for (const auto& t : s.tokens) {
            if (is_word_kind(t.kind)) ++counts[t.text];
        }
    }
    std::vector<std::pair<std::vector<std::string>, std::uint64_t>> words;
    for (const auto& [w, c] : counts) {
        std::vector<std::string> syms;
        for (std::size_t i = 0; i < w.size(); ++i) {
            syms.push_back(std::string(1, w[i]) + (i + 1 == w.size() ? "</w>" : ""));
        }
        words.emplace_back(syms, c);
    }
    std::vector<std::pair<std::string, std::string>> merges;
    while (merges.size() < max_merges) {
        std::map<std::pair<std::string, std::string>, std::uint64_t> pairs;
        for (const auto& [syms, c] : words) {
            for (std::size_t i = 0; i + 1 < syms.size(); ++i) pairs[{syms[i], syms[i + 1]}] += c;
        }
        std::pair<std::string, std::string> best;
        std::uint64_t best_count = 0;
        for (const auto& [p, c] : pairs) {
            const bool better = c > best_count ||
                                (c == best_count && (p.first + p.second < best.first + best.second ||
                                                     (p.first + p.second == best.first + best.second && p.first < best.first)));
            if (better) {
                best = p;
                best_count = c;
            }
        }
        if (best_count < 2) break;
        merges.push_back(best);
        for (auto& [syms, c] : words) {
            std::vector<std::string> next;
            for (std::size_t i = 0; i < syms.size(); ++i) {
                if (i + 1 < syms.size() && syms[i] == best.first && syms[i + 1] == best.second) {
                    next.push_back(syms[i] + syms[i + 1]);
                    ++i;
                } else {
                    next.push_back(syms[i]);
                }
            }
            syms = next;
        }
    }
    return merges;
}

/// Applies every merge in learned order over the whole word.
std::vector<std::string> oracle_encode(const std::string& word,
                                       const std::vector<std::pair<std::string, std::string>>& merges) {
    std::vector<std::string> syms;
    for (std::size_t i = 0; i < word.size(); ++i) {
        syms.push_back(std::string(1, word[i]) + (i + 1 == word.size() ? "</w>" : ""));
    }
    for (const auto& [l, r] : merges) {
        std::vector<std::string> next;
        for (std::size_t i = 0; i < syms.size(); ++i) {
            if (i + 1 < syms.size() && syms[i] == l && syms[i + 1] == r) {
                next.push_back(l + r);
                ++i;
            } else {
                next.push_back(syms[i]);
            }
        }
        syms = next;
    }
    return syms;
}

std::vector<lexnorm::TokenStream> fixture_streams() {
    std::vector<lexnorm::TokenStream> out;
    for (const auto& f : synth::vocabulary_corpus(2)) {
        out.push_back(lexnorm::normalize(lexnorm::lex(f.source, f.language), LiteralTable{}));
    }
    return out;
}

}  // namespace

TEST(Bpe, FirstMergeIsMostFrequentPair) {
    const auto streams = normalized({"aaab aaab\n"}, Language::toy_py);
    TrainOptions o;
    o.target_size = floor_size() + 1;
    const auto v = train_bpe(streams, o);
    ASSERT_EQ(v.merges().size(), 1u);
    EXPECT_EQ(v.merges()[0], (std::pair<std::string, std::string>{"a", "a"}));
    EXPECT_EQ(v.size(), o.target_size);
}

TEST(Bpe, BaseSizeTargetMeansNoMerges) {
    const auto streams = normalized({"aaab aaab\n"}, Language::toy_py);
    TrainOptions o;
    o.target_size = floor_size();
    const auto v = train_bpe(streams, o);
    EXPECT_TRUE(v.merges().empty());
    EXPECT_EQ(v.size(), o.target_size);
}

TEST(Bpe, TargetBelowFloorRejected) {
    const auto streams = normalized({"a\n"}, Language::toy_py);
    TrainOptions o;
    o.target_size = 10;
    EXPECT_THROW(train_bpe(streams, o), VocabError);
}

TEST(Bpe, SmallCorpusWarns) {
    const auto streams = normalized({"abc\n"}, Language::toy_py);
    TrainOptions o;
    o.target_size = 5000;
    const auto v = train_bpe(streams, o);
    EXPECT_LT(v.size(), 5000u);
    EXPECT_FALSE(v.warnings.empty());
}

TEST(Bpe, SpecialsAreAtomic) {
    const auto streams = fixture_streams();
    TrainOptions o;
    o.target_size = 1200;
    const auto v = train_bpe(streams, o);
    for (const auto& s : streams) {
        const auto ids = encode(s, v);
        std::size_t eols = 0;
        for (auto id : ids) eols += id == v.eol() ? 1 : 0;
        std::size_t expected = 0;
        for (const auto& t : s.tokens) expected += t.kind == TokenKind::eol ? 1 : 0;
        EXPECT_EQ(eols, expected);
    }
    for (TokenId id = static_cast<TokenId>(v.special_count()); id < v.size(); ++id) {
        for (TokenId sp = 0; sp < v.special_count(); ++sp) {
            EXPECT_EQ(v.subtoken(id).find(v.subtoken(sp)), std::string::npos);
        }
    }
}

TEST(Bpe, MergesMatchOracle) {
    const auto streams = fixture_streams();
    TrainOptions o;
    o.target_size = 600;
    const auto v = train_bpe(streams, o);
    const auto oracle = oracle_merges(streams, v.merges().size());
    EXPECT_EQ(v.merges(), oracle);
    ASSERT_GT(v.merges().size(), 300u);
}

TEST(Bpe, EncodeMatchesSequentialMergeOracle) {
    const auto streams = fixture_streams();
    TrainOptions o;
    o.target_size = 900;
    const auto v = train_bpe(streams, o);
    std::size_t checked = 0;
    for (const auto& s : streams) {
        for (const auto& t : s.tokens) {
            if (!is_word_kind(t.kind)) continue;
            std::vector<std::string> got;
            for (auto id : encode_word(t.text, v)) got.push_back(v.subtoken(id));
            ASSERT_EQ(got, oracle_encode(t.text, v.merges())) << t.text;
            ++checked;
        }
    }
    EXPECT_GT(checked, 1000u);
}

TEST(Bpe, CounterHasCountPrefix) {
    std::vector<std::string> sources;
    for (int i = 0; i < 30; ++i) sources.push_back("count = count + counts\naccount = count\n");
    sources.push_back("counter = 1\n");
    const auto streams = normalized(sources, Language::toy_py);
    TrainOptions o;
    o.target_size = floor_size() + 8;
    const auto v = train_bpe(streams, o);
    const auto ids = encode_word("counter", v);
    EXPECT_EQ(v.subtoken(ids.front()), "count");
}

TEST(Bpe, OnlySpecialsEncodeInOrder) {
    const auto streams = fixture_streams();
    TrainOptions o;
    o.target_size = 400;
    const auto v = train_bpe(streams, o);
    const auto s = lexnorm::normalize(lexnorm::lex("# c\n\n", Language::toy_py), LiteralTable{});
    std::vector<TokenId> expected;
    for (const auto& t : s.tokens) expected.push_back(v.id_of(t.text));
    EXPECT_EQ(encode(s, v), expected);
}

TEST(Bpe, DecodeEncodeRoundTrip) {
    const auto streams = fixture_streams();
    TrainOptions o;
    o.target_size = 1500;
    const auto v = train_bpe(streams, o);
    for (const auto& s : streams) {
        std::string surface;
        for (const auto& t : s.tokens) surface += t.text;
        EXPECT_EQ(decode(encode(s, v), v), surface);
    }
    EXPECT_EQ(decode(std::vector<TokenId>{}, v), "");
    EXPECT_EQ(decode(std::vector<TokenId>{v.eol()}, v), "<EOL>");
    EXPECT_THROW(decode(std::vector<TokenId>{static_cast<TokenId>(v.size())}, v), VocabError);
}

TEST(Bpe, RandomIdsReencodeToSameSurface) {
    const auto streams = fixture_streams();
    TrainOptions o;
    o.target_size = 800;
    const auto v = train_bpe(streams, o);
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<TokenId> ids;
        const std::size_t n = 1 + rng() % 4;
        for (std::size_t i = 0; i < n; ++i) {
            TokenId id;
            do {
                id = static_cast<TokenId>(v.special_count() + rng() % (v.size() - v.special_count()));
            } while (i + 1 < n && strip_end_marker(v.subtoken(id)).second);
            ids.push_back(id);
        }
        const std::string word = decode(ids, v);
        const bool final = strip_end_marker(v.subtoken(ids.back())).second;
        if (!final) continue;
        EXPECT_EQ(decode(encode_word(word, v), v), word);
    }
}

TEST(Bpe, MonotoneCompression) {
    const auto streams = fixture_streams();
    std::size_t previous = SIZE_MAX;
    for (std::size_t size : {400u, 401u, 450u, 600u, 900u}) {
        TrainOptions o;
        o.target_size = size;
        const auto v = train_bpe(streams, o);
        std::size_t total = 0;
        for (const auto& s : streams) total += encode(s, v).size();
        EXPECT_LE(total, previous);
        previous = total;
    }
}

TEST(Bpe, KeptLiteralsAreSpecials) {
    LiteralTable table;
    table.strings = {{"__main__", 3}};
    const auto s = lexnorm::normalize(lexnorm::lex("x = \"__main__\"\n", Language::toy_py), table);
    const std::vector<lexnorm::TokenStream> streams = {s};
    TrainOptions o;
    o.target_size = 300;
    o.kept_images = table.kept_images();
    const auto v = train_bpe(streams, o);
    const auto id = v.id_of("<STR_LIT:__main__>");
    EXPECT_TRUE(v.is_special(id));
    const auto ids = encode(s, v);
    EXPECT_NE(std::find(ids.begin(), ids.end(), id), ids.end());
    EXPECT_TRUE(v.lang_prefix(Language::toy_py).has_value());
    EXPECT_TRUE(v.lang_prefix(Language::toy_c).has_value());
}

TEST(Bpe, FileRoundTrip) {
    const auto streams = fixture_streams();
    TrainOptions o;
    o.target_size = 500;
    const auto v = train_bpe(streams, o);
    std::ostringstream out;
    write_vocabulary(out, v);
    EXPECT_EQ(out.str().rfind("bpe-vocab v1 size=500", 0), 0u);
    std::istringstream in(out.str());
    const auto back = read_vocabulary(in);
    ASSERT_EQ(back.size(), v.size());
    for (TokenId id = 0; id < v.size(); ++id) EXPECT_EQ(back.subtoken(id), v.subtoken(id));
    EXPECT_EQ(back.merges(), v.merges());
    for (const auto& s : streams) EXPECT_EQ(encode(s, back), encode(s, v));
}

TEST(Casing, CamelCase) {
    EXPECT_EQ(split_by_casing("camelCase").parts, (std::vector<std::string>{"camel", "Case"}));
    EXPECT_EQ(split_by_casing("PascalCaseName").parts, (std::vector<std::string>{"Pascal", "Case", "Name"}));
}

TEST(Casing, SnakeCase) {
    const auto s = split_by_casing("snake_case_id");
    EXPECT_EQ(s.parts, (std::vector<std::string>{"snake", "case", "id"}));
    EXPECT_EQ(s.reconstruct(), "snake_case_id");
}

TEST(Casing, Acronym) {
    EXPECT_EQ(split_by_casing("HTTPServer").parts, (std::vector<std::string>{"HTTP", "Server"}));
}

TEST(Casing, ReconstructsOriginal) {
    for (auto id : {"__init__", "a", "getHTTPResponseCode", "x_y__z_", "ABC", "lower"}) {
        EXPECT_EQ(split_by_casing(id).reconstruct(), id);
    }
}

TEST(Casing, VocabularyRoundTrip) {
    const auto streams = fixture_streams();
    TrainOptions o;
    o.target_size = 700;
    const auto v = train_casing(streams, o);
    EXPECT_EQ(v.scheme(), Scheme::casing);
    for (const auto& s : streams) {
        std::string surface;
        for (const auto& t : s.tokens) surface += t.text;
        EXPECT_EQ(decode(encode(s, v), v), surface);
    }
    std::ostringstream out;
    write_vocabulary(out, v);
    std::istringstream in(out.str());
    const auto back = read_vocabulary(in);
    for (const auto& s : streams) EXPECT_EQ(encode(s, back), encode(s, v));
}
