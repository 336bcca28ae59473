#include "gptc/model.hpp"

#include "gptc/vocab.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace gptc::model {

std::string_view to_string(LangMode mode) noexcept {
    switch (mode) {
    case LangMode::none: return "none";
    case LangMode::embedding: return "embedding";
    case LangMode::control_codes: return "control_codes";
    case LangMode::double_heads: return "double_heads";
    }
    return "none";
}

LangMode parse_lang_mode(std::string_view name) {
    for (auto m : {LangMode::none, LangMode::embedding, LangMode::control_codes, LangMode::double_heads}) {
        if (name == to_string(m)) {
            return m;
        }
    }
    throw ModelError("unknown language mode '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
        throw ModelError("d_model must be a positive multiple of n_heads");
    }
    if (d_x != d_model) {
        throw ModelError("d_x must equal d_model");
    }
    if (n_ctx < 2) {
        throw ModelError("N_ctx must be at least 2");
    }
    if (vocab_size == 0) {
        throw ModelError("vocabulary size must be positive");
    }
    if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
        throw ModelError("dropout keep probability must lie in (0, 1]");
    }
    if ((lang_mode == LangMode::embedding || lang_mode == LangMode::double_heads) && n_lang < 2) {
        throw ModelError("language mode " + std::string(to_string(lang_mode)) + " needs N_lang >= 2");
    }
}

std::string ModelConfig::to_line() const {
    return "config n_layers=" + std::to_string(n_layers) + " d_model=" + std::to_string(d_model) +
           " d_x=" + std::to_string(d_x) + " n_heads=" + std::to_string(n_heads) + " n_ctx=" + std::to_string(n_ctx) +
           " vocab=" + std::to_string(vocab_size) + " keep=" + std::to_string(keep_prob) +
           " lang_mode=" + std::string(to_string(lang_mode)) + " n_lang=" + std::to_string(n_lang) +
           " lambda=" + std::to_string(lambda);
}

ModelConfig ModelConfig::from_line(std::string_view line) {
    const auto fields = gptc::split(line, ' ');
    if (fields.empty() || fields[0] != "config") {
        throw ModelError("bad config line");
    }
    ModelConfig c;
    for (std::size_t i = 1; i < fields.size(); ++i) {
        const auto eq = fields[i].find('=');
        if (eq == std::string::npos) {
            throw ModelError("bad config field '" + fields[i] + "'");
        }
        const std::string key = fields[i].substr(0, eq);
        const std::string value = fields[i].substr(eq + 1);
        if (key == "n_layers") c.n_layers = std::stoul(value);
        else if (key == "d_model") c.d_model = std::stoul(value);
        else if (key == "d_x") c.d_x = std::stoul(value);
        else if (key == "n_heads") c.n_heads = std::stoul(value);
        else if (key == "n_ctx") c.n_ctx = std::stoul(value);
        else if (key == "vocab") c.vocab_size = std::stoul(value);
        else if (key == "keep") c.keep_prob = std::stod(value);
        else if (key == "lang_mode") c.lang_mode = parse_lang_mode(value);
        else if (key == "n_lang") c.n_lang = std::stoul(value);
        else if (key == "lambda") c.lambda = std::stod(value);
        else throw ModelError("unknown config field '" + key + "'");
    }
    c.validate();
    return c;
}

std::vector<TensorShape> tensor_shapes(const ModelConfig& c) {
    const std::size_t d = c.d_model;
    std::vector<TensorShape> shapes = {{"wte", c.vocab_size, c.d_x}, {"wpe", c.n_ctx, c.d_x}};
    if (c.lang_mode == LangMode::embedding) {
        shapes.push_back({"wle", c.n_lang, c.d_x});
    }
    for (std::size_t i = 0; i < c.n_layers; ++i) {
        const std::string p = "h." + std::to_string(i) + ".";
        shapes.push_back({p + "ln_1.g", 1, d});
        shapes.push_back({p + "ln_1.b", 1, d});
        shapes.push_back({p + "attn.w_qkv", d, 3 * d});
        shapes.push_back({p + "attn.b_qkv", 1, 3 * d});
        shapes.push_back({p + "attn.w_o", d, d});
        shapes.push_back({p + "attn.b_o", 1, d});
        shapes.push_back({p + "ln_2.g", 1, d});
        shapes.push_back({p + "ln_2.b", 1, d});
        shapes.push_back({p + "mlp.w_fc", d, 4 * d});
        shapes.push_back({p + "mlp.b_fc", 1, 4 * d});
        shapes.push_back({p + "mlp.w_proj", 4 * d, d});
        shapes.push_back({p + "mlp.b_proj", 1, d});
    }
    shapes.push_back({"proj_a", d, c.d_x});
    shapes.push_back({"out_bias", 1, c.vocab_size});
    if (c.lang_mode == LangMode::double_heads) {
        shapes.push_back({"cls_head", d, c.n_lang});
    }
    return shapes;
}

std::size_t count_params(const ModelConfig& c, bool tied) {
    const std::size_t d = c.d_model;
    std::size_t total = c.d_x * (c.vocab_size + c.n_ctx) + c.n_layers * (12 * d * d + 13 * d) + c.vocab_size;
    total += tied ? d * c.d_x : d * c.vocab_size;
    if (c.lang_mode == LangMode::embedding) {
        total += c.n_lang * c.d_x;
    }
    if (c.lang_mode == LangMode::double_heads) {
        total += d * c.n_lang;
    }
    return total;
}

template <typename S>
std::size_t ModelParams<S>::element_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const std::string&, const Mat<S>& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
}

template <typename S>
ModelParams<S> ModelParams<S>::zeros_like() const {
    ModelParams<S> z = *this;
    z.for_each_tensor([](const std::string&, Mat<S>& m) { m.setZero(); });
    return z;
}

template <typename S>
bool ModelParams<S>::all_finite() const {
    bool ok = true;
    for_each_tensor([&](const std::string&, const Mat<S>& m) { ok = ok && m.allFinite(); });
    return ok;
}

namespace {

double normal01(std::mt19937_64& rng) {
    // Box-Muller on our own uniform draws, independent of the library's normal_distribution.
    double u1 = uniform01(rng);
    while (u1 <= 0.0) {
        u1 = uniform01(rng);
    }
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <typename S>
Mat<S> normal_matrix(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
    Mat<S> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = static_cast<S>(stddev * normal01(rng));
    }
    return m;
}

template <typename S>
Mat<S> constant_row(std::size_t cols, S value) {
    return Mat<S>::Constant(1, static_cast<Eigen::Index>(cols), value);
}

}  // namespace

template <typename S>
ModelParams<S> init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    const std::size_t d = config.d_model;
    constexpr double sd = 0.02;
    ModelParams<S> p;
    p.config = config;
    p.w_e = normal_matrix<S>(config.vocab_size, config.d_x, sd, rng);
    p.w_p = normal_matrix<S>(config.n_ctx, config.d_x, sd, rng);
    if (config.lang_mode == LangMode::embedding) {
        p.w_l = normal_matrix<S>(config.n_lang, config.d_x, sd, rng);
    }
    for (std::size_t i = 0; i < config.n_layers; ++i) {
        BlockParams<S> b;
        b.ln1_g = constant_row<S>(d, S(1));
        b.ln1_b = constant_row<S>(d, S(0));
        b.w_qkv = normal_matrix<S>(d, 3 * d, sd, rng);
        b.b_qkv = constant_row<S>(3 * d, S(0));
        b.w_o = normal_matrix<S>(d, d, sd, rng);
        b.b_o = constant_row<S>(d, S(0));
        b.ln2_g = constant_row<S>(d, S(1));
        b.ln2_b = constant_row<S>(d, S(0));
        b.w_fc = normal_matrix<S>(d, 4 * d, sd, rng);
        b.b_fc = constant_row<S>(4 * d, S(0));
        b.w_proj = normal_matrix<S>(4 * d, d, sd, rng);
        b.b_proj = constant_row<S>(d, S(0));
        p.blocks.push_back(std::move(b));
    }
    p.a.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(config.d_x));
    for (Eigen::Index i = 0; i < p.a.size(); ++i) {
        p.a.data()[i] = static_cast<S>(-0.05 + 0.1 * uniform01(rng));
    }
    p.b = constant_row<S>(config.vocab_size, S(0));
    if (config.lang_mode == LangMode::double_heads) {
        p.cls = normal_matrix<S>(d, config.n_lang, sd, rng);
    }
    return p;
}

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& params) {
    ModelParams<To> out;
    out.config = params.config;
    out.w_e = params.w_e.template cast<To>();
    out.w_p = params.w_p.template cast<To>();
    out.w_l = params.w_l.template cast<To>();
    for (const auto& b : params.blocks) {
        BlockParams<To> c;
        c.ln1_g = b.ln1_g.template cast<To>();
        c.ln1_b = b.ln1_b.template cast<To>();
        c.w_qkv = b.w_qkv.template cast<To>();
        c.b_qkv = b.b_qkv.template cast<To>();
        c.w_o = b.w_o.template cast<To>();
        c.b_o = b.b_o.template cast<To>();
        c.ln2_g = b.ln2_g.template cast<To>();
        c.ln2_b = b.ln2_b.template cast<To>();
        c.w_fc = b.w_fc.template cast<To>();
        c.b_fc = b.b_fc.template cast<To>();
        c.w_proj = b.w_proj.template cast<To>();
        c.b_proj = b.b_proj.template cast<To>();
        out.blocks.push_back(std::move(c));
    }
    out.a = params.a.template cast<To>();
    out.b = params.b.template cast<To>();
    out.cls = params.cls.template cast<To>();
    return out;
}

template <typename S>
KVCache<S> make_cache(const ModelConfig& config) {
    KVCache<S> cache;
    const auto d = static_cast<Eigen::Index>(config.d_model);
    cache.k.assign(config.n_layers, Mat<S>(0, d));
    cache.v.assign(config.n_layers, Mat<S>(0, d));
    return cache;
}

// ---------------------------------------------------------------------------
// Shared kernels

namespace {

constexpr double kLnEps = 1e-5;

template <typename S>
S gelu(S x) {
    const S c = static_cast<S>(0.7978845608028654);  // sqrt(2/pi)
    return S(0.5) * x * (S(1) + std::tanh(c * (x + S(0.044715) * x * x * x)));
}

template <typename S>
S gelu_grad(S x) {
    const S c = static_cast<S>(0.7978845608028654);
    const S t = std::tanh(c * (x + S(0.044715) * x * x * x));
    return S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * c * (S(1) + S(3) * S(0.044715) * x * x);
}

/// Row-wise normalization; returns x-hat and stores 1/sigma per row.
template <typename S>
Mat<S> normalize_rows(const Mat<S>& x, Eigen::Matrix<S, Eigen::Dynamic, 1>* rstd_out) {
    const Eigen::Index n = x.cols();
    Mat<S> out(x.rows(), n);
    if (rstd_out != nullptr) {
        rstd_out->resize(x.rows());
    }
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const S mean = x.row(r).mean();
        const auto centered = (x.row(r).array() - mean).matrix();
        const S var = centered.squaredNorm() / static_cast<S>(n);
        const S rstd = S(1) / std::sqrt(var + static_cast<S>(kLnEps));
        out.row(r) = centered * rstd;
        if (rstd_out != nullptr) {
            (*rstd_out)(r) = rstd;
        }
    }
    return out;
}

template <typename S>
Mat<S> layer_norm(const Mat<S>& x, const Mat<S>& g, const Mat<S>& b) {
    Mat<S> y = normalize_rows<S>(x, nullptr);
    y.array().rowwise() *= g.row(0).array();
    y.rowwise() += b.row(0);
    return y;
}

/// Backward of the parameter-free part: given dL/dx-hat, returns dL/dx.
template <typename S>
Mat<S> normalize_rows_backward(const Mat<S>& dxhat, const Mat<S>& xhat, const Eigen::Matrix<S, Eigen::Dynamic, 1>& rstd) {
    const auto n = static_cast<S>(xhat.cols());
    Mat<S> dx(xhat.rows(), xhat.cols());
    for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
        const S mean_d = dxhat.row(r).sum() / n;
        const S mean_dx = dxhat.row(r).dot(xhat.row(r)) / n;
        dx.row(r) = rstd(r) * (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx).matrix();
    }
    return dx;
}

template <typename S>
void softmax_row_inplace(Eigen::Ref<Mat<S>> row) {
    const S mx = row.maxCoeff();
    row = (row.array() - mx).exp().matrix();
    row /= row.sum();
}

template <typename S>
void check_lang(const ModelConfig& c, int lang) {
    if (c.lang_mode == LangMode::embedding) {
        if (lang < 0 || static_cast<std::size_t>(lang) >= c.n_lang) {
            throw ModelError("language index required and must be < N_lang in embedding mode");
        }
    }
}

template <typename S>
void check_ids(const ModelConfig& c, std::span<const TokenId> ids) {
    for (TokenId id : ids) {
        if (id >= c.vocab_size) {
            throw ModelError("token id " + std::to_string(id) + " outside the vocabulary");
        }
    }
}

/// Embedding rows for `ids` at absolute positions offset, offset+1, ...
template <typename S>
Mat<S> embed(const ModelParams<S>& p, std::span<const TokenId> ids, std::size_t offset, int lang) {
    const auto d = p.w_e.cols();
    Mat<S> x(static_cast<Eigen::Index>(ids.size()), d);
    for (std::size_t t = 0; t < ids.size(); ++t) {
        x.row(static_cast<Eigen::Index>(t)) =
            p.w_e.row(ids[t]) + p.w_p.row(static_cast<Eigen::Index>(offset + t));
        if (p.config.lang_mode == LangMode::embedding) {
            x.row(static_cast<Eigen::Index>(t)) += p.w_l.row(lang);
        }
    }
    return x;
}

}  // namespace

// ---------------------------------------------------------------------------
// Inference

namespace {

/// Final normalized hidden rows for stacked sequences.
template <typename S>
Mat<S> hidden_batch(const ModelParams<S>& p, std::span<const std::span<const TokenId>> seqs, std::span<const int> langs,
                    std::span<KVCache<S>* const> caches, std::vector<Eigen::Index>& row_offsets) {
    const ModelConfig& c = p.config;
    const std::size_t batch = seqs.size();
    const auto d = static_cast<Eigen::Index>(c.d_model);
    const auto heads = static_cast<Eigen::Index>(c.n_heads);
    const Eigen::Index dh = d / heads;
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));

    std::vector<std::size_t> past(batch, 0);
    row_offsets.assign(batch + 1, 0);
    for (std::size_t b = 0; b < batch; ++b) {
        KVCache<S>* cache = caches.empty() ? nullptr : caches[b];
        if (cache != nullptr && cache->layers() != c.n_layers) {
            throw ModelError("cache layer count does not match the model");
        }
        past[b] = cache == nullptr ? 0 : cache->length();
        if (past[b] + seqs[b].size() > c.n_ctx) {
            throw ContextLengthError("sequence of " + std::to_string(past[b] + seqs[b].size()) +
                                     " positions exceeds N_ctx=" + std::to_string(c.n_ctx));
        }
        const int lang = langs.empty() ? -1 : langs[b];
        check_lang<S>(c, lang);
        check_ids<S>(c, seqs[b]);
        row_offsets[b + 1] = row_offsets[b] + static_cast<Eigen::Index>(seqs[b].size());
    }

    Mat<S> x(row_offsets[batch], d);
    for (std::size_t b = 0; b < batch; ++b) {
        const int lang = langs.empty() ? -1 : langs[b];
        x.middleRows(row_offsets[b], row_offsets[b + 1] - row_offsets[b]) = embed<S>(p, seqs[b], past[b], lang);
    }

    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const auto& blk = p.blocks[l];
        Mat<S> u = layer_norm<S>(x, blk.ln1_g, blk.ln1_b);
        Mat<S> qkv = u * blk.w_qkv;
        qkv.rowwise() += blk.b_qkv.row(0);
        Mat<S> o(x.rows(), d);
        for (std::size_t b = 0; b < batch; ++b) {
            const Eigen::Index r0 = row_offsets[b];
            const Eigen::Index tn = row_offsets[b + 1] - r0;
            const auto pn = static_cast<Eigen::Index>(past[b]);
            KVCache<S>* cache = caches.empty() ? nullptr : caches[b];
            Mat<S> keys(pn + tn, d);
            Mat<S> vals(pn + tn, d);
            if (pn > 0) {
                keys.topRows(pn) = cache->k[l];
                vals.topRows(pn) = cache->v[l];
            }
            keys.bottomRows(tn) = qkv.block(r0, d, tn, d);
            vals.bottomRows(tn) = qkv.block(r0, 2 * d, tn, d);
            for (Eigen::Index h = 0; h < heads; ++h) {
                const auto q = qkv.block(r0, h * dh, tn, dh);
                Mat<S> scores = (q * keys.middleCols(h * dh, dh).transpose()) * scale;
                for (Eigen::Index t = 0; t < tn; ++t) {
                    const Eigen::Index visible = pn + t + 1;
                    auto row = scores.row(t);
                    const S mx = row.head(visible).maxCoeff();
                    row.head(visible) = (row.head(visible).array() - mx).exp().matrix();
                    row.head(visible) /= row.head(visible).sum();
                    row.tail(pn + tn - visible).setZero();
                }
                o.block(r0, h * dh, tn, dh) = scores * vals.middleCols(h * dh, dh);
            }
            if (cache != nullptr) {
                cache->k[l] = std::move(keys);
                cache->v[l] = std::move(vals);
            }
        }
        Mat<S> attn = o * blk.w_o;
        attn.rowwise() += blk.b_o.row(0);
        x += attn;
        Mat<S> u2 = layer_norm<S>(x, blk.ln2_g, blk.ln2_b);
        Mat<S> f = u2 * blk.w_fc;
        f.rowwise() += blk.b_fc.row(0);
        f = f.unaryExpr([](S v) { return gelu(v); });
        Mat<S> m = f * blk.w_proj;
        m.rowwise() += blk.b_proj.row(0);
        x += m;
    }
    return normalize_rows<S>(x, nullptr);
}

template <typename S>
Mat<S> logits_from_hidden(const ModelParams<S>& p, const Mat<S>& z) {
    const Mat<S> pred = z * p.a;
    Mat<S> logits = pred * p.w_e.transpose();
    logits.rowwise() += p.b.row(0);
    return logits;
}

}  // namespace

template <typename S>
Mat<S> forward(const ModelParams<S>& params, std::span<const TokenId> ids, int lang, KVCache<S>* cache) {
    const std::span<const TokenId> seqs[] = {ids};
    const int langs[] = {lang};
    KVCache<S>* const caches[] = {cache};
    std::vector<Eigen::Index> offsets;
    const Mat<S> z = hidden_batch<S>(params, seqs, langs, caches, offsets);
    return logits_from_hidden<S>(params, z);
}

template <typename S>
Mat<S> forward_last_batch(const ModelParams<S>& params, std::span<const std::span<const TokenId>> seqs,
                          std::span<const int> langs, std::span<KVCache<S>* const> caches) {
    for (const auto& s : seqs) {
        if (s.empty()) {
            throw ModelError("forward_last_batch needs non-empty sequences");
        }
    }
    if (!langs.empty() && langs.size() != seqs.size()) {
        throw ModelError("one language per sequence expected");
    }
    if (!caches.empty() && caches.size() != seqs.size()) {
        throw ModelError("one cache slot per sequence expected");
    }
    std::vector<Eigen::Index> offsets;
    const Mat<S> z = hidden_batch<S>(params, seqs, langs, caches, offsets);
    Mat<S> last(static_cast<Eigen::Index>(seqs.size()), z.cols());
    for (std::size_t b = 0; b < seqs.size(); ++b) {
        last.row(static_cast<Eigen::Index>(b)) = z.row(offsets[b + 1] - 1);
    }
    return logits_from_hidden<S>(params, last);
}

// ---------------------------------------------------------------------------
// Training forward / backward

namespace {

template <typename S>
using Col = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
struct BlockActs {
    Mat<S> x_in, xhat1, u, qkv, o, drop1, x1, xhat2, u2, f, g, drop2;
    Col<S> rstd1, rstd2;
    std::vector<Mat<S>> probs;  // per head, T x T
};

template <typename S>
Mat<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double keep, std::mt19937_64& rng) {
    Mat<S> mask(rows, cols);
    const S scale = static_cast<S>(1.0 / keep);
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
        mask.data()[i] = uniform01(rng) < keep ? scale : S(0);
    }
    return mask;
}

/// Forward and backward for one sequence. Returns the summed LM negative
/// log-likelihood (not averaged) and the classification loss; `lm_weight`
/// and `cls_weight` scale the gradients.
template <typename S>
std::pair<double, double> sequence_pass(const ModelParams<S>& p, const Sample& sample, ModelParams<S>* grads,
                                        double lm_weight, double cls_weight, bool training, std::mt19937_64& rng,
                                        const Mat<float>* teacher_probs, double soft_weight, double temperature) {
    const ModelConfig& c = p.config;
    const std::span<const TokenId> ids(sample.ids);
    const auto tn = static_cast<Eigen::Index>(ids.size());
    const auto d = static_cast<Eigen::Index>(c.d_model);
    const auto heads = static_cast<Eigen::Index>(c.n_heads);
    const Eigen::Index dh = d / heads;
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    const bool drop = training && c.keep_prob < 1.0;
    if (ids.size() > c.n_ctx) {
        throw ContextLengthError("training sample of " + std::to_string(ids.size()) + " positions exceeds N_ctx");
    }
    check_lang<S>(c, sample.lang);
    check_ids<S>(c, ids);

    Mat<S> x = embed<S>(p, ids, 0, sample.lang);
    Mat<S> drop0;
    if (drop) {
        drop0 = dropout_mask<S>(tn, d, c.keep_prob, rng);
        x.array() *= drop0.array();
    }

    std::vector<BlockActs<S>> acts(c.n_layers);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const auto& blk = p.blocks[l];
        auto& a = acts[l];
        a.x_in = x;
        a.xhat1 = normalize_rows<S>(x, &a.rstd1);
        a.u = a.xhat1;
        a.u.array().rowwise() *= blk.ln1_g.row(0).array();
        a.u.rowwise() += blk.ln1_b.row(0);
        a.qkv = a.u * blk.w_qkv;
        a.qkv.rowwise() += blk.b_qkv.row(0);
        a.o.resize(tn, d);
        a.probs.resize(static_cast<std::size_t>(heads));
        for (Eigen::Index h = 0; h < heads; ++h) {
            Mat<S> s = (a.qkv.middleCols(h * dh, dh) * a.qkv.middleCols(d + h * dh, dh).transpose()) * scale;
            for (Eigen::Index t = 0; t < tn; ++t) {
                auto row = s.row(t);
                const S mx = row.head(t + 1).maxCoeff();
                row.head(t + 1) = (row.head(t + 1).array() - mx).exp().matrix();
                row.head(t + 1) /= row.head(t + 1).sum();
                row.tail(tn - t - 1).setZero();
            }
            a.o.middleCols(h * dh, dh) = s * a.qkv.middleCols(2 * d + h * dh, dh);
            a.probs[static_cast<std::size_t>(h)] = std::move(s);
        }
        Mat<S> attn = a.o * blk.w_o;
        attn.rowwise() += blk.b_o.row(0);
        if (drop) {
            a.drop1 = dropout_mask<S>(tn, d, c.keep_prob, rng);
            attn.array() *= a.drop1.array();
        }
        a.x1 = x + attn;
        a.xhat2 = normalize_rows<S>(a.x1, &a.rstd2);
        a.u2 = a.xhat2;
        a.u2.array().rowwise() *= blk.ln2_g.row(0).array();
        a.u2.rowwise() += blk.ln2_b.row(0);
        a.f = a.u2 * blk.w_fc;
        a.f.rowwise() += blk.b_fc.row(0);
        a.g = a.f.unaryExpr([](S v) { return gelu(v); });
        Mat<S> m = a.g * blk.w_proj;
        m.rowwise() += blk.b_proj.row(0);
        if (drop) {
            a.drop2 = dropout_mask<S>(tn, d, c.keep_prob, rng);
            m.array() *= a.drop2.array();
        }
        x = a.x1 + m;
    }
    Col<S> rstd_f;
    const Mat<S> z = normalize_rows<S>(x, &rstd_f);
    const Mat<S> pred = z * p.a;
    Mat<S> logits = pred * p.w_e.transpose();
    logits.rowwise() += p.b.row(0);

    // LM loss over positions 0..T-2 predicting ids[1..T-1].
    double nll = 0.0;
    Mat<S> dlogits = Mat<S>::Zero(tn, logits.cols());
    for (Eigen::Index t = 0; t + 1 < tn; ++t) {
        Mat<S> row = logits.row(t);
        const S mx = row.maxCoeff();
        const S lse = mx + std::log((row.array() - mx).exp().sum());
        const TokenId target = ids[static_cast<std::size_t>(t + 1)];
        nll += static_cast<double>(lse - row(0, target));
        if (grads != nullptr) {
            Mat<S> probs = (row.array() - lse).exp().matrix();
            Mat<S> g = probs;
            g(0, target) -= S(1);
            g *= static_cast<S>(lm_weight);
            if (teacher_probs != nullptr && soft_weight > 0.0) {
                // Gradient of T^2 * KL(teacher_T || student_T) w.r.t. logits.
                Mat<S> soft = (row.array() / static_cast<S>(temperature)).matrix();
                softmax_row_inplace<S>(soft);
                const Mat<S> teach = teacher_probs->row(t).template cast<S>();
                g = g * static_cast<S>(1.0 - soft_weight) +
                    (soft - teach) * static_cast<S>(soft_weight * temperature * lm_weight);
            }
            dlogits.row(t) = g;
        }
    }

    double cls_loss = 0.0;
    Mat<S> dz = Mat<S>::Zero(tn, d);
    Mat<S> dcls_row;
    if (c.lang_mode == LangMode::double_heads && tn > 0) {
        if (sample.lang < 0 || static_cast<std::size_t>(sample.lang) >= c.n_lang) {
            throw ModelError("double_heads training needs a language label per sample");
        }
        Mat<S> cl = z.row(tn - 1) * p.cls;
        const S mx = cl.maxCoeff();
        const S lse = mx + std::log((cl.array() - mx).exp().sum());
        cls_loss = static_cast<double>(lse - cl(0, sample.lang));
        if (grads != nullptr) {
            Mat<S> g = (cl.array() - lse).exp().matrix();
            g(0, sample.lang) -= S(1);
            g *= static_cast<S>(cls_weight);
            grads->cls += z.row(tn - 1).transpose() * g;
            dz.row(tn - 1) += g * p.cls.transpose();
        }
    }
    if (grads == nullptr) {
        return {nll, cls_loss};
    }

    // Output layer.
    grads->b += dlogits.colwise().sum();
    grads->w_e += dlogits.transpose() * pred;
    const Mat<S> dpred = dlogits * p.w_e;
    grads->a += z.transpose() * dpred;
    dz += dpred * p.a.transpose();
    Mat<S> dx = normalize_rows_backward<S>(dz, z, rstd_f);

    for (std::size_t li = c.n_layers; li-- > 0;) {
        const auto& blk = p.blocks[li];
        auto& gb = grads->blocks[li];
        const auto& a = acts[li];
        // MLP branch.
        Mat<S> dm = dx;
        if (drop) {
            dm.array() *= a.drop2.array();
        }
        gb.b_proj += dm.colwise().sum();
        gb.w_proj += a.g.transpose() * dm;
        Mat<S> df = dm * blk.w_proj.transpose();
        df.array() *= a.f.unaryExpr([](S v) { return gelu_grad(v); }).array();
        gb.b_fc += df.colwise().sum();
        gb.w_fc += a.u2.transpose() * df;
        Mat<S> du2 = df * blk.w_fc.transpose();
        gb.ln2_g += (du2.array() * a.xhat2.array()).matrix().colwise().sum();
        gb.ln2_b += du2.colwise().sum();
        du2.array().rowwise() *= blk.ln2_g.row(0).array();
        Mat<S> dx1 = dx + normalize_rows_backward<S>(du2, a.xhat2, a.rstd2);

        // Attention branch.
        Mat<S> dattn = dx1;
        if (drop) {
            dattn.array() *= a.drop1.array();
        }
        gb.b_o += dattn.colwise().sum();
        gb.w_o += a.o.transpose() * dattn;
        const Mat<S> d_o = dattn * blk.w_o.transpose();
        Mat<S> dqkv(tn, 3 * d);
        for (Eigen::Index h = 0; h < heads; ++h) {
            const Mat<S>& pr = a.probs[static_cast<std::size_t>(h)];
            const auto q = a.qkv.middleCols(h * dh, dh);
            const auto k = a.qkv.middleCols(d + h * dh, dh);
            const auto v = a.qkv.middleCols(2 * d + h * dh, dh);
            const auto doh = d_o.middleCols(h * dh, dh);
            const Mat<S> dp = doh * v.transpose();
            dqkv.middleCols(2 * d + h * dh, dh) = pr.transpose() * doh;
            Mat<S> ds = pr.array() * (dp.colwise() - (dp.array() * pr.array()).matrix().rowwise().sum()).array();
            ds *= scale;
            dqkv.middleCols(h * dh, dh) = ds * k;
            dqkv.middleCols(d + h * dh, dh) = ds.transpose() * q;
        }
        gb.b_qkv += dqkv.colwise().sum();
        gb.w_qkv += a.u.transpose() * dqkv;
        Mat<S> du = dqkv * blk.w_qkv.transpose();
        gb.ln1_g += (du.array() * a.xhat1.array()).matrix().colwise().sum();
        gb.ln1_b += du.colwise().sum();
        du.array().rowwise() *= blk.ln1_g.row(0).array();
        dx = dx1 + normalize_rows_backward<S>(du, a.xhat1, a.rstd1);
    }

    if (drop) {
        dx.array() *= drop0.array();
    }
    for (Eigen::Index t = 0; t < tn; ++t) {
        grads->w_e.row(ids[static_cast<std::size_t>(t)]) += dx.row(t);
        grads->w_p.row(t) += dx.row(t);
        if (c.lang_mode == LangMode::embedding) {
            grads->w_l.row(sample.lang) += dx.row(t);
        }
    }
    return {nll, cls_loss};
}

template <typename S>
double batch_loss(const ModelParams<S>& params, std::span<const Sample> batch, ModelParams<S>* grads,
                  const LossOptions& options, const SoftTargets* soft) {
    if (batch.empty()) {
        throw ModelError("empty batch");
    }
    params.config.validate();
    std::size_t positions = 0;
    for (const auto& s : batch) {
        positions += s.ids.empty() ? 0 : s.ids.size() - 1;
    }
    if (positions == 0) {
        throw ModelError("batch has no predicted positions");
    }
    const bool heads = params.config.lang_mode == LangMode::double_heads;
    const double lambda = heads ? params.config.lambda : 0.0;
    const double lm_weight = 1.0 / static_cast<double>(positions);
    const double cls_weight = lambda / static_cast<double>(batch.size());
    std::mt19937_64 rng(options.dropout_seed);
    double nll = 0.0;
    double cls = 0.0;
    for (const auto& s : batch) {
        Mat<float> teacher_probs;
        const Mat<float>* tp = nullptr;
        if constexpr (std::is_same_v<S, float>) {
            if (soft != nullptr && soft->teacher != nullptr && grads != nullptr) {
                teacher_probs = forward<float>(*soft->teacher, s.ids, s.lang, nullptr);
                teacher_probs /= static_cast<float>(soft->temperature);
                for (Eigen::Index r = 0; r < teacher_probs.rows(); ++r) {
                    softmax_row_inplace<float>(teacher_probs.row(r));
                }
                tp = &teacher_probs;
            }
        }
        const auto [n, cl] = sequence_pass<S>(params, s, grads, lm_weight, cls_weight, options.training, rng, tp,
                                              soft != nullptr ? soft->weight : 0.0,
                                              soft != nullptr ? soft->temperature : 1.0);
        nll += n;
        cls += cl;
    }
    return nll / static_cast<double>(positions) + lambda * cls / static_cast<double>(batch.size());
}

}  // namespace

template <typename S>
double loss(const ModelParams<S>& params, std::span<const Sample> batch, ModelParams<S>* grads,
            const LossOptions& options) {
    return batch_loss<S>(params, batch, grads, options, nullptr);
}

double distill_loss(const ModelParams<float>& params, std::span<const Sample> batch, ModelParams<float>* grads,
                    const LossOptions& options, const SoftTargets& soft) {
    return batch_loss<float>(params, batch, grads, options, &soft);
}

template <typename S>
std::pair<int, std::vector<double>> classify_language(const ModelParams<S>& params, std::span<const TokenId> ids) {
    if (params.config.lang_mode != LangMode::double_heads) {
        throw CapabilityError("classify_language needs a double_heads model, this one is " +
                              std::string(to_string(params.config.lang_mode)));
    }
    if (ids.empty()) {
        throw ModelError("cannot classify an empty sequence");
    }
    const std::span<const TokenId> seqs[] = {ids};
    std::vector<Eigen::Index> offsets;
    const Mat<S> z = hidden_batch<S>(params, seqs, {}, {}, offsets);
    Mat<S> cl = z.row(z.rows() - 1) * params.cls;
    softmax_row_inplace<S>(cl);
    std::vector<double> probs(static_cast<std::size_t>(cl.cols()));
    for (Eigen::Index i = 0; i < cl.cols(); ++i) {
        probs[static_cast<std::size_t>(i)] = static_cast<double>(cl(0, i));
    }
    const auto best = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    return {best, probs};
}

std::vector<std::size_t> distill_block_map(std::size_t teacher_layers, std::size_t student_layers) {
    if (student_layers == 0 || student_layers >= teacher_layers) {
        throw ModelError("student must have fewer blocks than the teacher (" + std::to_string(student_layers) +
                         " vs " + std::to_string(teacher_layers) + ")");
    }
    std::vector<std::size_t> map(student_layers);
    for (std::size_t i = 0; i < student_layers; ++i) {
        map[i] = i * teacher_layers / student_layers;
    }
    return map;
}

ModelParams<float> distill_init(const ModelParams<float>& teacher, std::size_t student_layers) {
    const auto map = distill_block_map(teacher.config.n_layers, student_layers);
    ModelParams<float> student = teacher;
    student.config.n_layers = student_layers;
    student.blocks.clear();
    for (std::size_t src : map) {
        student.blocks.push_back(teacher.blocks[src]);
    }
    return student;
}

std::vector<TokenId> prepend_control_code(std::span<const TokenId> ids, Language lang,
                                          const vocab::SubtokenVocabulary& vocab, LangMode mode) {
    std::vector<TokenId> out(ids.begin(), ids.end());
    if (mode != LangMode::control_codes) {
        return out;
    }
    const auto prefix = vocab.lang_prefix(lang);
    if (!prefix) {
        throw ModelError("language " + std::string(gptc::to_string(lang)) + " has no registered control code");
    }
    const TokenId sep = vocab.sep();
    const std::size_t at = !out.empty() && out.front() == vocab.bof() ? 1 : 0;
    for (auto l : kAllLanguages) {
        const auto code = vocab.lang_prefix(l);
        if (code && out.size() > at && out[at] == *code) {
            throw ModelError("sequence already carries a control code");
        }
    }
    out.insert(out.begin() + static_cast<std::ptrdiff_t>(at), {*prefix, sep});
    return out;
}

// Explicit instantiations.
template struct ModelParams<float>;
template struct ModelParams<double>;
template ModelParams<float> init_params<float>(const ModelConfig&, std::uint64_t);
template ModelParams<double> init_params<double>(const ModelConfig&, std::uint64_t);
template ModelParams<double> cast_params<double, float>(const ModelParams<float>&);
template ModelParams<float> cast_params<float, double>(const ModelParams<double>&);
template ModelParams<float> cast_params<float, float>(const ModelParams<float>&);
template ModelParams<double> cast_params<double, double>(const ModelParams<double>&);
template KVCache<float> make_cache<float>(const ModelConfig&);
template KVCache<double> make_cache<double>(const ModelConfig&);
template Mat<float> forward<float>(const ModelParams<float>&, std::span<const TokenId>, int, KVCache<float>*);
template Mat<double> forward<double>(const ModelParams<double>&, std::span<const TokenId>, int, KVCache<double>*);
template Mat<float> forward_last_batch<float>(const ModelParams<float>&, std::span<const std::span<const TokenId>>,
                                              std::span<const int>, std::span<KVCache<float>* const>);
template Mat<double> forward_last_batch<double>(const ModelParams<double>&, std::span<const std::span<const TokenId>>,
                                                std::span<const int>, std::span<KVCache<double>* const>);
template double loss<float>(const ModelParams<float>&, std::span<const Sample>, ModelParams<float>*, const LossOptions&);
template double loss<double>(const ModelParams<double>&, std::span<const Sample>, ModelParams<double>*,
                             const LossOptions&);
template std::pair<int, std::vector<double>> classify_language<float>(const ModelParams<float>&,
                                                                      std::span<const TokenId>);
template std::pair<int, std::vector<double>> classify_language<double>(const ModelParams<double>&,
                                                                       std::span<const TokenId>);

}  // namespace gptc::model
