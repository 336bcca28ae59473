#include "gptc/decoder.hpp"
#include "oracles/oracles.hpp"

#include <gtest/gtest.h>

using namespace gptc;
using namespace gptc::decoder;

namespace {

/// Wraps a TableModel and counts invocations independently of the decoder.
class CountingModel : public TableModel {
public:
    using TableModel::TableModel;
    LogProbRows next_log_probs(std::span<const std::vector<TokenId>> prefixes) override {
        ++calls;
        return TableModel::next_log_probs(prefixes);
    }
    std::unique_ptr<DecoderState> begin(std::span<const TokenId> context, std::vector<double>& lp) override {
        ++calls;
        return TableModel::begin(context, lp);
    }
    LogProbRows advance(std::span<DecoderState* const> states, std::span<const TokenId> tokens) override {
        ++calls;
        return TableModel::advance(states, tokens);
    }
    std::size_t calls = 0;
};

std::vector<TokenId> greedy(TableModel& m, std::vector<TokenId> ctx, std::size_t L) {
    std::vector<TokenId> out;
    for (std::size_t i = 0; i < L; ++i) {
        const auto lp = m.log_probs(ctx);
        const auto best = static_cast<TokenId>(std::max_element(lp.begin(), lp.end()) - lp.begin());
        out.push_back(best);
        ctx.push_back(best);
    }
    return out;
}

}  // namespace

TEST(Beam, WidthOneIsGreedy) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        TableModel m(7, seed);
        DecodeRequest r;
        r.context_ids = {1, 2};
        r.beam_width = 1;
        r.max_len = 6;
        const auto res = beam_search(m, r);
        ASSERT_EQ(res.hypotheses.size(), 1u);
        EXPECT_EQ(res.hypotheses[0].ids, greedy(m, r.context_ids, 6));
    }
}

TEST(Beam, FullWidthMatchesExhaustive) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        TableModel m(4, seed);
        DecodeRequest r;
        r.context_ids = {0};
        r.beam_width = 64;
        r.max_len = 3;
        r.break_ids = seed % 2 == 0 ? std::vector<TokenId>{} : std::vector<TokenId>{3};
        const auto best = oracle::exhaustive_best([&](const std::vector<TokenId>& p) { return m.log_probs(p); },
                                                  r.context_ids, 4, 3, r.break_ids);
        for (auto mode : {Mode::sequential, Mode::parallel, Mode::cached}) {
            r.mode = mode;
            const auto res = beam_search(m, r);
            ASSERT_FALSE(res.hypotheses.empty());
            EXPECT_EQ(res.hypotheses[0].ids, best.ids) << "seed " << seed;
            EXPECT_NEAR(res.hypotheses[0].log_prob, best.log_prob, 1e-12);
        }
    }
}

TEST(Beam, BreakEndsHypothesis) {
    TableModel m(5, 3);
    DecodeRequest r;
    r.context_ids = {0};
    r.beam_width = 5;
    r.max_len = 8;
    r.break_ids = {2};
    const auto res = beam_search(m, r);
    for (const auto& h : res.hypotheses) {
        for (std::size_t i = 0; i + 1 < h.ids.size(); ++i) EXPECT_NE(h.ids[i], 2u);
        if (!h.ids.empty() && h.ids.back() == 2u) EXPECT_TRUE(h.finished);
        EXPECT_LE(h.ids.size(), 8u);
    }
}

TEST(Beam, ScoresSortedAndConsistent) {
    TableModel m(9, 4);
    DecodeRequest r;
    r.context_ids = {1, 5};
    r.beam_width = 6;
    r.max_len = 5;
    const auto res = beam_search(m, r);
    ASSERT_EQ(res.hypotheses.size(), 6u);
    for (std::size_t i = 1; i < res.hypotheses.size(); ++i) {
        EXPECT_GE(res.hypotheses[i - 1].log_prob, res.hypotheses[i].log_prob);
    }
    for (const auto& h : res.hypotheses) {
        double sum = 0.0;
        std::vector<TokenId> prefix = r.context_ids;
        for (std::size_t i = 0; i < h.ids.size(); ++i) {
            const double lp = m.log_probs(prefix)[h.ids[i]];
            EXPECT_NEAR(h.step_log_probs[i], lp, 1e-12);
            EXPECT_LE(lp, 0.0);
            sum += lp;
            prefix.push_back(h.ids[i]);
        }
        EXPECT_NEAR(h.log_prob, sum, 1e-12);
    }
}

TEST(Beam, ModesAgreeAndCallCounts) {
    const std::pair<std::size_t, std::size_t> configs[] = {{10, 1}, {10, 10}, {25, 15}, {4, 3}};
    for (const auto& [L, k] : configs) {
        CountingModel m(40, L * 100 + k);
        DecodeRequest r;
        r.context_ids = {3, 1, 4};
        r.beam_width = k;
        r.max_len = L;
        const auto rep = mode_equivalence_check(m, r);
        EXPECT_TRUE(rep.equivalent) << rep.diagnostic;
        EXPECT_LE(rep.parallel.stats.model_calls, L);
        EXPECT_LE(rep.cached.stats.model_calls, L);
        EXPECT_EQ(rep.parallel.stats.model_calls, rep.parallel.stats.steps);
        EXPECT_EQ(rep.sequential.stats.model_calls, rep.sequential.stats.rows);
        if (k > 1) EXPECT_GT(rep.sequential.stats.model_calls, L);

        m.calls = 0;
        r.mode = Mode::parallel;
        const auto res = beam_search(m, r);
        EXPECT_EQ(m.calls, res.stats.model_calls);
    }
}

TEST(Beam, Deterministic) {
    TableModel m(12, 8);
    DecodeRequest r;
    r.context_ids = {2};
    r.beam_width = 4;
    r.max_len = 7;
    const auto a = beam_search(m, r);
    const auto b = beam_search(m, r);
    ASSERT_EQ(a.hypotheses.size(), b.hypotheses.size());
    for (std::size_t i = 0; i < a.hypotheses.size(); ++i) {
        EXPECT_EQ(a.hypotheses[i].ids, b.hypotheses[i].ids);
        EXPECT_EQ(a.hypotheses[i].log_prob, b.hypotheses[i].log_prob);
    }
}

TEST(Beam, InvalidRequests) {
    TableModel m(5, 1);
    DecodeRequest r;
    r.beam_width = 0;
    EXPECT_THROW(beam_search(m, r), DecodeError);
    r.beam_width = 2;
    r.max_len = 0;
    EXPECT_THROW(beam_search(m, r), DecodeError);
}

TEST(Beam, TransformerModesAgree) {
    model::ModelConfig c;
    c.n_layers = 2;
    c.d_model = 16;
    c.d_x = 16;
    c.n_heads = 2;
    c.n_ctx = 16;
    c.vocab_size = 20;
    const auto p = model::init_params<float>(c, 11);
    TransformerModel m(p);
    DecodeRequest r;
    r.context_ids = {1, 2, 3, 4};
    r.beam_width = 3;
    r.max_len = 5;
    const auto rep = mode_equivalence_check(m, r);
    EXPECT_TRUE(rep.equivalent) << rep.diagnostic;
    EXPECT_EQ(rep.cached.stats.model_calls, 5u);

    r.max_len = 13;
    EXPECT_THROW(beam_search(m, r), model::ContextLengthError);
}

TEST(Beam, TransformerScoreSequenceMatchesForward) {
    model::ModelConfig c;
    c.n_layers = 1;
    c.d_model = 8;
    c.d_x = 8;
    c.n_heads = 2;
    c.n_ctx = 8;
    c.vocab_size = 10;
    const auto p = model::init_params<float>(c, 2);
    TransformerModel m(p);
    const std::vector<TokenId> ids = {0, 3, 5, 1};
    const auto scores = m.score_sequence(ids);
    ASSERT_EQ(scores.size(), 3u);
    for (std::size_t t = 1; t < ids.size(); ++t) {
        const std::vector<std::vector<TokenId>> prefix = {std::vector<TokenId>(ids.begin(), ids.begin() + static_cast<long>(t))};
        EXPECT_NEAR(scores[t - 1], m.next_log_probs(prefix)[0][ids[t]], 1e-5);
    }
}
