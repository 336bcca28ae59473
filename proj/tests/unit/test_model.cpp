#include "gptc/lexnorm.hpp"
#include "gptc/model.hpp"
#include "gptc/vocab.hpp"
#include "oracles/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace gptc;
using namespace gptc::model;

namespace {

ModelConfig micro(LangMode mode = LangMode::none) {
    ModelConfig c;
    c.n_layers = 1;
    c.d_model = 8;
    c.d_x = 8;
    c.n_heads = 2;
    c.n_ctx = 8;
    c.vocab_size = 11;
    c.keep_prob = 1.0;
    c.lang_mode = mode;
    c.n_lang = mode == LangMode::none || mode == LangMode::control_codes ? 0 : 2;
    return c;
}

ModelConfig small(std::size_t layers = 2) {
    ModelConfig c;
    c.n_layers = layers;
    c.d_model = 16;
    c.d_x = 16;
    c.n_heads = 4;
    c.n_ctx = 24;
    c.vocab_size = 30;
    return c;
}

std::vector<TokenId> random_ids(std::mt19937_64& rng, std::size_t n, std::size_t vocab) {
    std::vector<TokenId> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back(static_cast<TokenId>(rng() % vocab));
    return ids;
}

vocab::SubtokenVocabulary tiny_vocab() {
    const std::vector<lexnorm::TokenStream> streams = {
        lexnorm::normalize(lexnorm::lex("x = y\n", Language::toy_py), lexnorm::LiteralTable{})};
    vocab::TrainOptions o;
    o.target_size = vocab::special_images({}).size() + 188;
    return vocab::train_bpe(streams, o);
}

}  // namespace

TEST(ModelConfig, Validation) {
    auto c = small();
    EXPECT_NO_THROW(c.validate());
    c.n_heads = 3;
    EXPECT_THROW(c.validate(), ModelError);
    c = small();
    c.n_ctx = 1;
    EXPECT_THROW(c.validate(), ModelError);
    c = small();
    c.lang_mode = LangMode::embedding;
    c.n_lang = 1;
    EXPECT_THROW(c.validate(), ModelError);
    c.n_lang = 2;
    EXPECT_NO_THROW(c.validate());
    c = small();
    c.d_x = 8;
    EXPECT_THROW(c.validate(), ModelError);
}

TEST(ModelConfig, LineRoundTrip) {
    auto c = small();
    c.lang_mode = LangMode::double_heads;
    c.n_lang = 2;
    c.lambda = 0.25;
    EXPECT_EQ(ModelConfig::from_line(c.to_line()), c);
}

TEST(ModelInit, DeterministicAndCounted) {
    const auto c = small();
    const auto p1 = init_params<float>(c, 5);
    const auto p2 = init_params<float>(c, 5);
    const auto p3 = init_params<float>(c, 6);
    EXPECT_EQ(params_digest(p1), params_digest(p2));
    EXPECT_NE(params_digest(p1), params_digest(p3));
    EXPECT_EQ(p1.element_count(), count_params(c));
    EXPECT_TRUE(p1.all_finite());
    EXPECT_LE(p1.a.maxCoeff(), 0.05f);
    EXPECT_GE(p1.a.minCoeff(), -0.05f);
    EXPECT_FLOAT_EQ(p1.blocks[0].ln1_g.minCoeff(), 1.0f);
    EXPECT_FLOAT_EQ(p1.b.cwiseAbs().maxCoeff(), 0.0f);
}

TEST(ModelInit, BruteForceElementSum) {
    for (auto mode : {LangMode::none, LangMode::embedding, LangMode::double_heads}) {
        auto c = small(3);
        c.lang_mode = mode;
        c.n_lang = mode == LangMode::none ? 0 : 3;
        const auto p = init_params<float>(c, 1);
        std::size_t sum = 0;
        p.for_each_tensor([&](const std::string&, const Mat<float>& m) { sum += static_cast<std::size_t>(m.size()); });
        EXPECT_EQ(sum, count_params(c));
        std::size_t shapes = 0;
        for (const auto& s : tensor_shapes(c)) shapes += s.rows * s.cols;
        EXPECT_EQ(shapes, sum);
    }
}

TEST(ModelInit, ZeroLayerFormula) {
    auto c = small();
    c.n_layers = 0;
    const std::size_t V = c.vocab_size, d = c.d_model, dx = c.d_x, N = c.n_ctx;
    EXPECT_EQ(count_params(c), dx * (V + N) + d * dx + V);
}

TEST(ModelInit, LinearInLayers) {
    auto c = small();
    c.n_layers = 0;
    const auto base = count_params(c);
    c.n_layers = 2;
    const auto two = count_params(c) - base;
    c.n_layers = 4;
    const auto four = count_params(c) - base;
    EXPECT_EQ(four, 2 * two);
    EXPECT_EQ(two / 2, 12 * c.d_model * c.d_model + 13 * c.d_model);
}

TEST(ModelInit, TyingSavings) {
    ModelConfig c;
    EXPECT_EQ(count_params(c, false) - count_params(c, true), 239616u);
    for (const auto& s : tensor_shapes(c)) {
        if (s.name == "wte") continue;
        EXPECT_FALSE(s.rows == c.vocab_size && s.cols == c.d_x) << s.name;
        EXPECT_FALSE(s.rows == c.d_x && s.cols == c.vocab_size) << s.name;
    }
}

TEST(Forward, SoftmaxNormalized) {
    const auto c = small();
    const auto p = init_params<float>(c, 2);
    std::mt19937_64 rng(1);
    const auto ids = random_ids(rng, 10, c.vocab_size);
    const auto logits = forward<float>(p, ids);
    ASSERT_EQ(logits.rows(), 10);
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
        const auto row = logits.row(t).cast<double>();
        const double m = row.maxCoeff();
        const double z = (row.array() - m).exp().sum();
        EXPECT_NEAR((row.array() - m).exp().sum() / z, 1.0, 1e-6);
        EXPECT_TRUE(row.allFinite());
    }
}

TEST(Forward, Causality) {
    const auto c = small();
    const auto p = init_params<float>(c, 3);
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        auto ids = random_ids(rng, 12, c.vocab_size);
        const auto before = forward<float>(p, ids);
        const std::size_t t = rng() % 11;
        for (std::size_t j = t + 1; j < ids.size(); ++j) ids[j] = static_cast<TokenId>((ids[j] + 1) % c.vocab_size);
        const auto after = forward<float>(p, ids);
        for (std::size_t r = 0; r <= t; ++r) {
            EXPECT_TRUE((before.row(static_cast<Eigen::Index>(r)).array() == after.row(static_cast<Eigen::Index>(r)).array()).all());
        }
    }
}

TEST(Forward, IncrementalCacheMatchesFull) {
    const auto c = small();
    const auto p = init_params<float>(c, 4);
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const auto ids = random_ids(rng, 1 + rng() % c.n_ctx, c.vocab_size);
        const auto full = forward<float>(p, ids);
        auto cache = make_cache<float>(c);
        Mat<float> last;
        for (auto id : ids) last = forward<float>(p, std::span<const TokenId>(&id, 1), -1, &cache);
        EXPECT_EQ(cache.length(), ids.size());
        EXPECT_LT((last.row(0) - full.row(full.rows() - 1)).cwiseAbs().maxCoeff(), 1e-5f);
    }
}

TEST(Forward, DoublePrecisionCacheTight) {
    const auto c = small();
    const auto p = init_params<double>(c, 4);
    std::mt19937_64 rng(8);
    const auto ids = random_ids(rng, 15, c.vocab_size);
    const auto full = forward<double>(p, ids);
    auto cache = make_cache<double>(c);
    Mat<double> last;
    for (auto id : ids) last = forward<double>(p, std::span<const TokenId>(&id, 1), -1, &cache);
    EXPECT_LT((last.row(0) - full.row(full.rows() - 1)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Forward, BatchedLastMatchesSingle) {
    const auto c = small();
    const auto p = init_params<float>(c, 4);
    std::mt19937_64 rng(4);
    std::vector<std::vector<TokenId>> seqs;
    for (int i = 0; i < 4; ++i) seqs.push_back(random_ids(rng, 3 + i * 2, c.vocab_size));
    std::vector<std::span<const TokenId>> spans(seqs.begin(), seqs.end());
    const std::vector<int> langs(seqs.size(), -1);
    const auto batch = forward_last_batch<float>(p, spans, langs, {});
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        const auto single = forward<float>(p, seqs[i]);
        EXPECT_LT((batch.row(static_cast<Eigen::Index>(i)) - single.row(single.rows() - 1)).cwiseAbs().maxCoeff(), 1e-5f);
    }
}

TEST(Forward, ContextOverflow) {
    const auto c = small();
    const auto p = init_params<float>(c, 4);
    const std::vector<TokenId> ids(c.n_ctx + 1, 1);
    EXPECT_THROW(forward<float>(p, ids), ContextLengthError);
    auto cache = make_cache<float>(c);
    const std::vector<TokenId> fill(c.n_ctx, 1);
    forward<float>(p, fill, -1, &cache);
    const TokenId one = 1;
    EXPECT_THROW(forward<float>(p, std::span<const TokenId>(&one, 1), -1, &cache), ContextLengthError);
}

TEST(Loss, UniformLogitsGiveLogV) {
    const auto c = small();
    auto p = init_params<double>(c, 1);
    p.w_e.setZero();
    p.b.setZero();
    const std::vector<Sample> batch = {{{3, 7}, -1}};
    EXPECT_NEAR(loss<double>(p, batch, nullptr), std::log(static_cast<double>(c.vocab_size)), 1e-12);
}

TEST(Loss, EmptyBatchRejected) {
    const auto p = init_params<double>(small(), 1);
    EXPECT_THROW(loss<double>(p, std::span<const Sample>{}, nullptr), ModelError);
}

TEST(Loss, GradientCheckAllModes) {
    for (auto mode : {LangMode::none, LangMode::embedding, LangMode::double_heads}) {
        auto p = init_params<double>(micro(mode), 3);
        for (auto& b : p.blocks) {
            b.ln1_g.array() += 0.3;
            b.ln2_b.array() += 0.1;
            b.b_qkv.setRandom();
            b.b_qkv *= 0.1;
        }
        p.b.setRandom();
        p.b *= 0.1;
        const std::vector<Sample> batch = {{{1, 4, 2, 7, 3}, 0}, {{5, 5, 9, 0}, 1}};
        for (const auto& r : oracle::gradient_check(p, batch)) {
            EXPECT_LT(r.rel_error, 1e-3) << to_string(mode) << " " << r.name;
        }
    }
}

TEST(Loss, DoubleHeadsLambdaZeroEqualsPlain) {
    auto c = micro(LangMode::double_heads);
    c.lambda = 0.0;
    const auto dh = init_params<double>(c, 7);
    auto plain_c = micro(LangMode::none);
    auto plain = init_params<double>(plain_c, 7);
    plain.w_e = dh.w_e;
    plain.w_p = dh.w_p;
    plain.blocks = dh.blocks;
    plain.a = dh.a;
    plain.b = dh.b;
    const std::vector<Sample> batch = {{{1, 4, 2, 7, 3}, 0}, {{5, 5, 9, 0}, 1}};
    EXPECT_NEAR(loss<double>(dh, batch, nullptr), loss<double>(plain, batch, nullptr), 1e-9);
}

TEST(Classify, ProbabilitiesAndCapability) {
    auto c = small();
    c.lang_mode = LangMode::double_heads;
    c.n_lang = 2;
    const auto p = init_params<float>(c, 2);
    const std::vector<TokenId> ids = {1, 2, 3};
    const auto [idx, probs] = classify_language<float>(p, ids);
    ASSERT_EQ(probs.size(), 2u);
    EXPECT_NEAR(probs[0] + probs[1], 1.0, 1e-6);
    EXPECT_TRUE(idx == 0 || idx == 1);
    const auto plain = init_params<float>(small(), 2);
    EXPECT_THROW(classify_language<float>(plain, ids), CapabilityError);
}

TEST(Classify, UntrainedNearChance) {
    auto c = small();
    c.lang_mode = LangMode::double_heads;
    c.n_lang = 2;
    const auto p = init_params<float>(c, 9);
    std::mt19937_64 rng(10);
    std::size_t correct = 0;
    const std::size_t n = 240;
    for (std::size_t i = 0; i < n; ++i) {
        const auto ids = random_ids(rng, 1 + rng() % 20, c.vocab_size);
        correct += classify_language<float>(p, ids).first == static_cast<int>(i % 2) ? 1 : 0;
    }
    EXPECT_NEAR(static_cast<double>(correct) / n, 0.5, 0.15);
}

TEST(Distill, BlockMapAndCopy) {
    EXPECT_EQ(distill_block_map(4, 2), (std::vector<std::size_t>{0, 2}));
    EXPECT_EQ(distill_block_map(6, 3), (std::vector<std::size_t>{0, 2, 4}));
    const auto teacher = init_params<float>(small(4), 3);
    const auto student = distill_init(teacher, 2);
    EXPECT_EQ(student.config.n_layers, 2u);
    EXPECT_TRUE(student.w_e == teacher.w_e);
    EXPECT_TRUE(student.a == teacher.a);
    EXPECT_TRUE(student.b == teacher.b);
    EXPECT_TRUE(student.blocks[1].w_qkv == teacher.blocks[2].w_qkv);
    const std::vector<TokenId> ids = {1, 2, 3, 4};
    EXPECT_TRUE(forward<float>(student, ids).allFinite());
    EXPECT_THROW(distill_init(teacher, 4), ModelError);
    EXPECT_THROW(distill_init(teacher, 0), ModelError);
}

TEST(ControlCode, PrependAfterBof) {
    const auto v = tiny_vocab();
    const std::vector<TokenId> ids = {v.bof(), v.eol(), v.eof()};
    const auto out = prepend_control_code(ids, Language::toy_py, v, LangMode::control_codes);
    ASSERT_EQ(out.size(), 5u);
    EXPECT_EQ(out[0], v.bof());
    EXPECT_EQ(out[1], *v.lang_prefix(Language::toy_py));
    EXPECT_EQ(out[2], v.sep());
    EXPECT_THROW(prepend_control_code(out, Language::toy_py, v, LangMode::control_codes), ModelError);
    EXPECT_EQ(prepend_control_code(ids, Language::toy_py, v, LangMode::none), ids);
    EXPECT_EQ(prepend_control_code(ids, Language::toy_c, v, LangMode::embedding), ids);
}

TEST(Checkpoint, RoundTripAndDigest) {
    auto c = small();
    c.lang_mode = LangMode::double_heads;
    c.n_lang = 2;
    const auto p = init_params<float>(c, 12);
    std::stringstream buf;
    save_checkpoint(buf, p);
    EXPECT_EQ(buf.str().rfind("gptc-ckpt v1\n", 0), 0u);
    const auto back = load_checkpoint(buf);
    EXPECT_EQ(back.config, p.config);
    EXPECT_EQ(params_digest(back), params_digest(p));
    EXPECT_TRUE(back.cls == p.cls);
}

TEST(Checkpoint, CorruptRejected) {
    std::stringstream bad("gptc-ckpt v2\n");
    EXPECT_THROW(load_checkpoint(bad), ModelError);
    const auto p = init_params<float>(small(), 12);
    std::stringstream buf;
    save_checkpoint(buf, p);
    std::stringstream truncated(buf.str().substr(0, buf.str().size() / 2));
    EXPECT_THROW(load_checkpoint(truncated), ModelError);
}
