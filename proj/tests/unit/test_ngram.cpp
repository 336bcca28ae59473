#include "gptc/ngram.hpp"
#include "oracles/oracles.hpp"

#include <gtest/gtest.h>

#include <map>
#include <numeric>
#include <random>
#include <sstream>

using namespace gptc;
using namespace gptc::ngram;

namespace {

constexpr TokenId a = 0, b = 1, c = 2, d = 3;

std::vector<std::vector<TokenId>> random_corpus(std::uint64_t seed, std::size_t vocab) {
    std::mt19937_64 rng(seed);
    std::vector<std::vector<TokenId>> seqs;
    for (int i = 0; i < 12; ++i) {
        std::vector<TokenId> s;
        const std::size_t len = rng() % 30;
        for (std::size_t j = 0; j < len; ++j) s.push_back(static_cast<TokenId>(rng() % vocab));
        seqs.push_back(s);
    }
    return seqs;
}

}  // namespace

TEST(NGram, BigramExample) {
    const std::vector<std::vector<TokenId>> seqs = {{a, a, b, a, a, c}};
    const auto m = train_ngram(seqs, 2, 4);
    const std::vector<TokenId> ctx = {b, a};
    const auto p = m.next_distribution(ctx, Smoothing::strict);
    EXPECT_DOUBLE_EQ(p[a], 0.5);
    EXPECT_DOUBLE_EQ(p[b], 0.25);
    EXPECT_DOUBLE_EQ(p[c], 0.25);
    EXPECT_DOUBLE_EQ(p[d], 0.0);
}

TEST(NGram, SingleObservation) {
    const std::vector<std::vector<TokenId>> seqs = {{0, 1}};
    const auto m = train_ngram(seqs, 2, 2);
    const std::vector<TokenId> ctx = {0};
    EXPECT_DOUBLE_EQ(m.next_distribution(ctx, Smoothing::strict)[1], 1.0);
}

TEST(NGram, TrigramExample) {
    const std::vector<std::vector<TokenId>> seqs = {{a, b, c, a, b, d}};
    const auto m = train_ngram(seqs, 3, 4);
    const std::vector<TokenId> ctx = {a, b};
    const auto p = m.next_distribution(ctx, Smoothing::strict);
    EXPECT_DOUBLE_EQ(p[c], 0.5);
    EXPECT_DOUBLE_EQ(p[d], 0.5);
}

TEST(NGram, DeterministicContextIsOneHot) {
    const std::vector<std::vector<TokenId>> seqs = {{a, b, a, b, a, b}};
    const auto m = train_ngram(seqs, 2, 4);
    const std::vector<TokenId> ctx = {a};
    EXPECT_EQ(m.next_distribution(ctx, Smoothing::strict), (std::vector<double>{0, 1, 0, 0}));
}

TEST(NGram, UnseenContextStrictIsUniform) {
    const std::vector<std::vector<TokenId>> seqs = {{a, b, c}};
    const auto m = train_ngram(seqs, 2, 4);
    const std::vector<TokenId> ctx = {d};
    for (double p : m.next_distribution(ctx, Smoothing::strict)) EXPECT_DOUBLE_EQ(p, 0.25);
}

TEST(NGram, UnseenContextBacksOffToUnigram) {
    const std::vector<std::vector<TokenId>> seqs = {{a, a, a, b, c, d, d}};
    const TokenId e = 4;
    const auto m = train_ngram(seqs, 3, 5);
    const std::vector<TokenId> ctx = {d, e};  // e never occurs, so only unigram counts apply
    const auto p = m.next_distribution(ctx, Smoothing::backoff);
    EXPECT_NEAR(p[a] / p[b], 3.0, 1e-12);
    EXPECT_NEAR(p[d] / p[b], 2.0, 1e-12);
    EXPECT_NEAR(p[c], p[b], 1e-12);
    EXPECT_GT(p[e], 0.0);
    EXPECT_LT(p[e], p[b]);
    double sum = 0.0;
    for (double x : p) sum += x;
    EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(NGram, BackoffGivesMassToUnseenTruth) {
    const std::vector<std::vector<TokenId>> seqs = {{a, b, a, b, c}};
    const auto m = train_ngram(seqs, 2, 5);
    const std::vector<TokenId> ctx = {a};
    const auto strict = m.next_distribution(ctx, Smoothing::strict);
    const auto backoff = m.next_distribution(ctx, Smoothing::backoff);
    EXPECT_EQ(strict[c], 0.0);
    EXPECT_GT(backoff[c], 0.0);
    EXPECT_GT(backoff[4], 0.0);
    EXPECT_NEAR(std::accumulate(backoff.begin(), backoff.end(), 0.0), 1.0, 1e-12);
    EXPECT_GT(backoff[b], backoff[c]);
}

TEST(NGram, CountsMatchBruteForce) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        for (std::size_t n : {2u, 3u, 5u}) {
            const auto seqs = random_corpus(seed, 6);
            const auto m = train_ngram(seqs, n, 6);
            const auto expected = oracle::ngram_windows(seqs, n);
            for (std::size_t k = 1; k <= n; ++k) {
                std::map<Context, std::map<TokenId, std::uint64_t>> got;
                for (const auto& [ctx, nexts] : m.table(k)) {
                    for (const auto& [next, count] : nexts) got[ctx][next] = count;
                }
                const auto it = expected.find(k);
                EXPECT_EQ(got, it == expected.end() ? decltype(got){} : it->second) << "k=" << k;
            }
            std::size_t short_seqs = 0;
            for (const auto& s : seqs) short_seqs += s.size() < n ? 1 : 0;
            EXPECT_EQ(m.skipped_sequences, short_seqs);
        }
    }
}

TEST(NGram, SeenContextDistributionsSumToOne) {
    const auto seqs = random_corpus(9, 7);
    const auto m = train_ngram(seqs, 3, 7);
    for (const auto& [ctx, nexts] : m.table(3)) {
        for (auto mode : {Smoothing::strict, Smoothing::backoff}) {
            const auto p = m.next_distribution(ctx, mode);
            EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-9);
            for (double x : p) EXPECT_GE(x, 0.0);
        }
        std::uint64_t total = 0;
        for (const auto& [next, count] : nexts) {
            EXPECT_GE(count, 1u);
            total += count;
        }
        EXPECT_EQ(m.context_total(ctx), total);
    }
}

TEST(NGram, WindowsDoNotCrossFiles) {
    const std::vector<std::vector<TokenId>> seqs = {{a, b}, {c, d}};
    const auto m = train_ngram(seqs, 2, 4);
    const std::vector<TokenId> ctx = {b};
    EXPECT_EQ(m.table(2).count(Context{b}), 0u);
    for (double p : m.next_distribution(ctx, Smoothing::strict)) EXPECT_DOUBLE_EQ(p, 0.25);
}

TEST(NGram, OrderOneRejected) {
    const std::vector<std::vector<TokenId>> seqs = {{a}};
    EXPECT_THROW(train_ngram(seqs, 1, 4), NGramError);
}

TEST(NGram, OrderSensitivity) {
    const std::vector<std::vector<TokenId>> seqs = {{a, b, c, d, b, b, c, a}};
    const auto m3 = train_ngram(seqs, 3, 4);
    const auto m5 = train_ngram(seqs, 5, 4);
    bool differs = false;
    for (std::size_t i = 4; i < seqs[0].size(); ++i) {
        const std::span<const TokenId> ctx(seqs[0].data(), i);
        differs = differs || m3.next_distribution(ctx, Smoothing::strict) != m5.next_distribution(ctx, Smoothing::strict);
    }
    EXPECT_TRUE(differs);
}

TEST(NGram, CompleteFollowsChain) {
    const std::vector<std::vector<TokenId>> seqs = {{0, 1, 2, 3, 4, 5}};
    const auto m = train_ngram(seqs, 2, 6);
    const std::vector<TokenId> ctx = {0};
    const std::vector<TokenId> breaks = {5};
    EXPECT_EQ(complete_ngram(m, ctx, 10, breaks), (std::vector<TokenId>{1, 2, 3, 4}));
    EXPECT_TRUE(complete_ngram(m, ctx, 0, breaks).empty());
    const std::vector<TokenId> ctx4 = {4};
    EXPECT_TRUE(complete_ngram(m, ctx4, 10, breaks).empty());
}

TEST(NGram, CompleteTiesToLowestId) {
    const std::vector<std::vector<TokenId>> seqs = {{0, 3}, {0, 2}};
    const auto m = train_ngram(seqs, 2, 4);
    const std::vector<TokenId> ctx = {0};
    EXPECT_EQ(complete_ngram(m, ctx, 1, {}), (std::vector<TokenId>{2}));
}

TEST(NGram, FileRoundTrip) {
    const auto seqs = random_corpus(3, 5);
    const auto m = train_ngram(seqs, 3, 5);
    std::ostringstream out;
    write_ngram(out, m);
    EXPECT_EQ(out.str().rfind("ngram v1 n=3 vocab=5", 0), 0u);
    std::istringstream in(out.str());
    const auto back = read_ngram(in);
    for (std::size_t k = 1; k <= 3; ++k) EXPECT_EQ(back.table(k), m.table(k));
}
