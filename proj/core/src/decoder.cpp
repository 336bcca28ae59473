#include "gptc/decoder.hpp"

#include "gptc/vocab.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace gptc::decoder {

std::unique_ptr<DecoderState> DecoderModel::begin(std::span<const TokenId>, std::vector<double>&) {
    throw DecodeError("model does not support cached decoding");
}

LogProbRows DecoderModel::advance(std::span<DecoderState* const>, std::span<const TokenId>) {
    throw DecodeError("model does not support cached decoding");
}

std::vector<double> DecoderModel::score_sequence(std::span<const TokenId> ids) {
    std::vector<double> out;
    for (std::size_t t = 1; t < ids.size(); ++t) {
        const std::vector<TokenId> prefix(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(t));
        const auto rows = next_log_probs(std::span<const std::vector<TokenId>>(&prefix, 1));
        out.push_back(rows.at(0).at(ids[t]));
    }
    return out;
}

std::string_view to_string(Mode mode) noexcept {
    switch (mode) {
    case Mode::sequential: return "sequential";
    case Mode::parallel: return "parallel";
    case Mode::cached: return "cached";
    }
    return "cached";
}

Mode parse_mode(std::string_view name) {
    for (auto m : {Mode::sequential, Mode::parallel, Mode::cached}) {
        if (name == to_string(m)) {
            return m;
        }
    }
    throw DecodeError("unknown decode mode '" + std::string(name) + "'");
}

bool better(const Hypothesis& a, const Hypothesis& b) noexcept {
    if (a.log_prob != b.log_prob) {
        return a.log_prob > b.log_prob;
    }
    return std::lexicographical_compare(a.ids.begin(), a.ids.end(), b.ids.begin(), b.ids.end());
}

namespace {

struct Active {
    Hypothesis hyp;
    std::unique_ptr<DecoderState> state;
};

struct Candidate {
    std::size_t parent;
    TokenId token;
    double score;
};

/// Indices of the `k` largest finite entries of a row, best first, ties to lower id.
std::vector<TokenId> top_tokens(const std::vector<double>& row, std::size_t k) {
    std::vector<TokenId> idx;
    idx.reserve(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (std::isfinite(row[i])) {
            idx.push_back(static_cast<TokenId>(i));
        }
    }
    const auto cmp = [&](TokenId a, TokenId b) { return row[a] != row[b] ? row[a] > row[b] : a < b; };
    if (idx.size() > k) {
        std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), cmp);
        idx.resize(k);
    } else {
        std::sort(idx.begin(), idx.end(), cmp);
    }
    return idx;
}

}  // namespace

DecodeResult beam_search(DecoderModel& model, const DecodeRequest& request) {
    if (request.beam_width == 0) {
        throw DecodeError("beam width must be at least 1");
    }
    if (request.max_len == 0) {
        throw DecodeError("max_len must be at least 1");
    }
    if (request.context_ids.size() + request.max_len > model.max_context()) {
        throw model::ContextLengthError("context of " + std::to_string(request.context_ids.size()) +
                                        " ids plus max_len " + std::to_string(request.max_len) +
                                        " exceeds the model context of " + std::to_string(model.max_context()));
    }
    if (request.mode == Mode::cached && !model.supports_cache()) {
        throw DecodeError("model does not support cached decoding");
    }
    const std::size_t k = request.beam_width;
    const auto is_break = [&](TokenId t) {
        return std::find(request.break_ids.begin(), request.break_ids.end(), t) != request.break_ids.end();
    };

    DecodeResult result;
    result.stats.mode = request.mode;
    std::vector<Active> active(1);
    std::vector<Hypothesis> pool;

    for (std::size_t step = 0; step < request.max_len && !active.empty(); ++step) {
        LogProbRows rows;
        if (request.mode == Mode::cached) {
            if (step == 0) {
                rows.emplace_back();
                active[0].state = model.begin(request.context_ids, rows[0]);
            } else {
                std::vector<DecoderState*> states;
                std::vector<TokenId> tokens;
                for (auto& a : active) {
                    states.push_back(a.state.get());
                    tokens.push_back(a.hyp.ids.back());
                }
                rows = model.advance(states, tokens);
            }
            ++result.stats.model_calls;
            result.stats.rows += active.size();
        } else {
            std::vector<std::vector<TokenId>> prefixes;
            for (const auto& a : active) {
                std::vector<TokenId> p = request.context_ids;
                p.insert(p.end(), a.hyp.ids.begin(), a.hyp.ids.end());
                prefixes.push_back(std::move(p));
            }
            if (request.mode == Mode::parallel) {
                rows = model.next_log_probs(prefixes);
                ++result.stats.model_calls;
            } else {
                for (const auto& p : prefixes) {
                    auto one = model.next_log_probs(std::span<const std::vector<TokenId>>(&p, 1));
                    rows.push_back(std::move(one.at(0)));
                    ++result.stats.model_calls;
                }
            }
            result.stats.rows += active.size();
        }
        if (rows.size() != active.size()) {
            throw DecodeError("model returned " + std::to_string(rows.size()) + " rows for " +
                              std::to_string(active.size()) + " hypotheses");
        }
        ++result.stats.steps;

        std::vector<Candidate> cands;
        for (std::size_t h = 0; h < active.size(); ++h) {
            for (TokenId t : top_tokens(rows[h], k)) {
                cands.push_back({h, t, active[h].hyp.log_prob + rows[h][t]});
            }
        }
        const auto cand_less = [&](const Candidate& a, const Candidate& b) {
            if (a.score != b.score) {
                return a.score > b.score;
            }
            const auto& ia = active[a.parent].hyp.ids;
            const auto& ib = active[b.parent].hyp.ids;
            // Compare parent ids followed by the new token.
            const std::size_t n = std::min(ia.size(), ib.size());
            for (std::size_t i = 0; i < n; ++i) {
                if (ia[i] != ib[i]) {
                    return ia[i] < ib[i];
                }
            }
            return a.token < b.token;
        };
        std::sort(cands.begin(), cands.end(), cand_less);
        if (cands.size() > k) {
            cands.resize(k);
        }

        std::vector<std::size_t> remaining_children(active.size(), 0);
        for (const auto& c : cands) {
            if (!is_break(c.token)) {
                ++remaining_children[c.parent];
            }
        }
        std::vector<Active> next;
        for (const auto& c : cands) {
            const Hypothesis& parent = active[c.parent].hyp;
            Hypothesis h;
            h.ids = parent.ids;
            h.ids.push_back(c.token);
            h.step_log_probs = parent.step_log_probs;
            h.step_log_probs.push_back(rows[c.parent][c.token]);
            h.log_prob = c.score;
            if (is_break(c.token) || step + 1 == request.max_len) {
                h.finished = true;
                pool.push_back(std::move(h));
                continue;
            }
            Active a{std::move(h), nullptr};
            if (request.mode == Mode::cached) {
                auto& owner = active[c.parent].state;
                if (--remaining_children[c.parent] == 0) {
                    a.state = std::move(owner);
                } else {
                    a.state = owner->clone();
                }
            }
            next.push_back(std::move(a));
        }
        active = std::move(next);
    }

    for (auto& a : active) {
        pool.push_back(std::move(a.hyp));
    }
    std::sort(pool.begin(), pool.end(), better);
    if (pool.size() > k) {
        pool.resize(k);
    }
    result.hypotheses = std::move(pool);
    return result;
}

namespace {

std::string compare_results(const DecodeResult& a, const DecodeResult& b, double tol, std::string_view name) {
    if (a.hypotheses.size() != b.hypotheses.size()) {
        return std::string(name) + ": " + std::to_string(b.hypotheses.size()) + " hypotheses vs " +
               std::to_string(a.hypotheses.size());
    }
    for (std::size_t r = 0; r < a.hypotheses.size(); ++r) {
        const auto& x = a.hypotheses[r];
        const auto& y = b.hypotheses[r];
        const std::size_t n = std::min(x.ids.size(), y.ids.size());
        for (std::size_t s = 0; s < n; ++s) {
            if (x.ids[s] != y.ids[s]) {
                return std::string(name) + ": rank " + std::to_string(r) + " diverges at step " + std::to_string(s);
            }
        }
        if (x.ids.size() != y.ids.size()) {
            return std::string(name) + ": rank " + std::to_string(r) + " diverges at step " + std::to_string(n);
        }
        if (std::abs(x.log_prob - y.log_prob) > tol) {
            std::ostringstream os;
            os << name << ": rank " << r << " score " << y.log_prob << " vs " << x.log_prob;
            return os.str();
        }
    }
    return {};
}

}  // namespace

ModeReport mode_equivalence_check(DecoderModel& model, DecodeRequest request, double tolerance) {
    ModeReport report;
    request.mode = Mode::sequential;
    report.sequential = beam_search(model, request);
    request.mode = Mode::parallel;
    report.parallel = beam_search(model, request);
    if (model.supports_cache()) {
        request.mode = Mode::cached;
        report.cached = beam_search(model, request);
    } else {
        report.cached = report.parallel;
    }
    std::string diag = compare_results(report.sequential, report.parallel, tolerance, "parallel");
    if (diag.empty()) {
        diag = compare_results(report.sequential, report.cached, tolerance, "cached");
    }
    report.equivalent = diag.empty();
    report.diagnostic = std::move(diag);
    return report;
}

std::vector<TokenId> default_break_ids(const vocab::SubtokenVocabulary& vocab, Language lang) {
    std::vector<TokenId> ids = {vocab.eol()};
    if (lang == Language::toy_c) {
        if (auto id = vocab.find("}" + std::string(vocab::kEndOfToken))) {
            ids.push_back(*id);
        }
    }
    return ids;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<double> log_softmax_row(const model::Mat<float>& logits, Eigen::Index r) {
    const auto row = logits.row(r).cast<double>();
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    std::vector<double> out(static_cast<std::size_t>(row.size()));
    for (Eigen::Index i = 0; i < row.size(); ++i) {
        out[static_cast<std::size_t>(i)] = row(i) - lse;
    }
    return out;
}

struct TransformerState : DecoderState {
    model::KVCache<float> cache;
    std::unique_ptr<DecoderState> clone() const override { return std::make_unique<TransformerState>(*this); }
};

}  // namespace

TransformerModel::TransformerModel(const model::ModelParams<float>& params, int lang) : params_(params), lang_(lang) {}

std::size_t TransformerModel::vocab_size() const { return params_.config.vocab_size; }
std::size_t TransformerModel::max_context() const { return params_.config.n_ctx; }

LogProbRows TransformerModel::next_log_probs(std::span<const std::vector<TokenId>> prefixes) {
    std::vector<std::span<const TokenId>> seqs(prefixes.begin(), prefixes.end());
    const std::vector<int> langs(prefixes.size(), lang_);
    const auto logits = model::forward_last_batch<float>(params_, seqs, langs, {});
    LogProbRows rows;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        rows.push_back(log_softmax_row(logits, r));
    }
    return rows;
}

std::vector<double> TransformerModel::score_sequence(std::span<const TokenId> ids) {
    std::vector<double> out;
    if (ids.size() < 2) {
        return out;
    }
    const auto logits = model::forward<float>(params_, ids, lang_, nullptr);
    for (std::size_t t = 1; t < ids.size(); ++t) {
        out.push_back(log_softmax_row(logits, static_cast<Eigen::Index>(t - 1))[ids[t]]);
    }
    return out;
}

std::unique_ptr<DecoderState> TransformerModel::begin(std::span<const TokenId> context, std::vector<double>& log_probs) {
    if (context.empty()) {
        throw DecodeError("cached decoding needs a non-empty context");
    }
    auto state = std::make_unique<TransformerState>();
    state->cache = model::make_cache<float>(params_.config);
    const auto logits = model::forward<float>(params_, context, lang_, &state->cache);
    log_probs = log_softmax_row(logits, logits.rows() - 1);
    return state;
}

LogProbRows TransformerModel::advance(std::span<DecoderState* const> states, std::span<const TokenId> tokens) {
    std::vector<std::span<const TokenId>> seqs;
    std::vector<model::KVCache<float>*> caches;
    for (std::size_t i = 0; i < states.size(); ++i) {
        seqs.emplace_back(&tokens[i], 1);
        caches.push_back(&dynamic_cast<TransformerState&>(*states[i]).cache);
    }
    const std::vector<int> langs(states.size(), lang_);
    const auto logits = model::forward_last_batch<float>(params_, seqs, langs, caches);
    LogProbRows rows;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        rows.push_back(log_softmax_row(logits, r));
    }
    return rows;
}

// ---------------------------------------------------------------------------

namespace {

struct HistoryState : DecoderState {
    std::vector<TokenId> history;
    std::unique_ptr<DecoderState> clone() const override { return std::make_unique<HistoryState>(*this); }
};

std::vector<double> log_of(const std::vector<double>& p) {
    std::vector<double> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        out[i] = p[i] > 0.0 ? std::log(p[i]) : -std::numeric_limits<double>::infinity();
    }
    return out;
}

}  // namespace

NGramAdaptor::NGramAdaptor(const ngram::NGramModel& model, ngram::Smoothing mode) : model_(model), mode_(mode) {}

LogProbRows NGramAdaptor::next_log_probs(std::span<const std::vector<TokenId>> prefixes) {
    LogProbRows rows;
    for (const auto& p : prefixes) {
        rows.push_back(log_of(model_.next_distribution(p, mode_)));
    }
    return rows;
}

std::vector<double> NGramAdaptor::score_sequence(std::span<const TokenId> ids) {
    std::vector<double> out;
    for (std::size_t t = 1; t < ids.size(); ++t) {
        const auto dist = model_.next_distribution(ids.first(t), mode_);
        out.push_back(dist[ids[t]] > 0.0 ? std::log(dist[ids[t]]) : -std::numeric_limits<double>::infinity());
    }
    return out;
}

std::unique_ptr<DecoderState> NGramAdaptor::begin(std::span<const TokenId> context, std::vector<double>& log_probs) {
    auto state = std::make_unique<HistoryState>();
    const std::size_t keep = std::min(context.size(), model_.order() - 1);
    state->history.assign(context.end() - static_cast<std::ptrdiff_t>(keep), context.end());
    log_probs = log_of(model_.next_distribution(state->history, mode_));
    return state;
}

LogProbRows NGramAdaptor::advance(std::span<DecoderState* const> states, std::span<const TokenId> tokens) {
    LogProbRows rows;
    for (std::size_t i = 0; i < states.size(); ++i) {
        auto& h = dynamic_cast<HistoryState&>(*states[i]).history;
        h.push_back(tokens[i]);
        if (h.size() > model_.order() - 1) {
            h.erase(h.begin());
        }
        rows.push_back(log_of(model_.next_distribution(h, mode_)));
    }
    return rows;
}

// ---------------------------------------------------------------------------

TableModel::TableModel(std::size_t vocab_size, std::uint64_t seed, std::size_t order)
    : vocab_size_(vocab_size), seed_(seed), order_(order) {
    if (vocab_size == 0) {
        throw DecodeError("vocabulary must not be empty");
    }
}

std::vector<double> TableModel::log_probs(std::span<const TokenId> prefix) const {
    if (order_ != 0 && prefix.size() > order_) {
        prefix = prefix.last(order_);
    }
    std::uint64_t h = seed_ ^ 0x9e3779b97f4a7c15ULL;
    for (TokenId id : prefix) {
        h = fnv1a(std::string_view(reinterpret_cast<const char*>(&id), sizeof id), h);
    }
    h ^= static_cast<std::uint64_t>(prefix.size()) * 0x100000001b3ULL;
    std::mt19937_64 rng(h);
    std::vector<double> w(vocab_size_);
    double sum = 0.0;
    for (auto& x : w) {
        // Skewed weights so that greedy and beam paths differ.
        const double u = uniform01(rng);
        x = u * u * u + 1e-3;
        sum += x;
    }
    for (auto& x : w) {
        x = std::log(x / sum);
    }
    return w;
}

LogProbRows TableModel::next_log_probs(std::span<const std::vector<TokenId>> prefixes) {
    LogProbRows rows;
    for (const auto& p : prefixes) {
        rows.push_back(log_probs(p));
    }
    return rows;
}

std::unique_ptr<DecoderState> TableModel::begin(std::span<const TokenId> context, std::vector<double>& lp) {
    auto state = std::make_unique<HistoryState>();
    state->history.assign(context.begin(), context.end());
    lp = log_probs(state->history);
    return state;
}

LogProbRows TableModel::advance(std::span<DecoderState* const> states, std::span<const TokenId> tokens) {
    LogProbRows rows;
    for (std::size_t i = 0; i < states.size(); ++i) {
        auto& h = dynamic_cast<HistoryState&>(*states[i]).history;
        h.push_back(tokens[i]);
        rows.push_back(log_probs(h));
    }
    return rows;
}

}  // namespace gptc::decoder
