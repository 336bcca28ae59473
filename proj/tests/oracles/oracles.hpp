#pragma once

// Independent reference implementations used by unit and acceptance tests.

#include "gptc/decoder.hpp"
#include "gptc/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace oracle {

/// Full-table LCS length.
inline std::size_t lcs(std::string_view a, std::string_view b) {
    std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            t[i][j] = a[i - 1] == b[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
        }
    }
    return t[a.size()][b.size()];
}

/// Full-table Levenshtein distance.
inline std::size_t levenshtein(std::string_view a, std::string_view b) {
    std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
    for (std::size_t i = 0; i <= a.size(); ++i) t[i][0] = i;
    for (std::size_t j = 0; j <= b.size(); ++j) t[0][j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t sub = t[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            t[i][j] = std::min({t[i - 1][j] + 1, t[i][j - 1] + 1, sub});
        }
    }
    return t[a.size()][b.size()];
}

struct TensorCheck {
    std::string name;
    double rel_error = 0.0;
};

/// Central finite differences against the analytic gradient of `loss` for
/// every parameter tensor: ||fd - an|| / sqrt(||fd||^2 + ||an||^2).
inline std::vector<TensorCheck> gradient_check(gptc::model::ModelParams<double> params,
                                               const std::vector<gptc::model::Sample>& batch, double eps = 1e-3) {
    using namespace gptc::model;
    auto grads = params.zeros_like();
    loss<double>(params, batch, &grads);
    std::vector<Mat<double>*> ps;
    std::vector<const Mat<double>*> gs;
    std::vector<std::string> names;
    params.for_each_tensor([&](const std::string& n, Mat<double>& m) {
        ps.push_back(&m);
        names.push_back(n);
    });
    grads.for_each_tensor([&](const std::string&, const Mat<double>& m) { gs.push_back(&m); });
    std::vector<TensorCheck> out;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        double diff2 = 0.0;
        double norm2 = 0.0;
        for (Eigen::Index j = 0; j < ps[i]->size(); ++j) {
            const double orig = ps[i]->data()[j];
            ps[i]->data()[j] = orig + eps;
            const double up = loss<double>(params, batch, nullptr);
            ps[i]->data()[j] = orig - eps;
            const double down = loss<double>(params, batch, nullptr);
            ps[i]->data()[j] = orig;
            const double fd = (up - down) / (2 * eps);
            const double an = gs[i]->data()[j];
            diff2 += (fd - an) * (fd - an);
            norm2 += fd * fd + an * an;
        }
        out.push_back({names[i], norm2 > 0 ? std::sqrt(diff2) / std::sqrt(norm2) : 0.0});
    }
    return out;
}

struct PathScore {
    std::vector<gptc::TokenId> ids;
    double log_prob = -std::numeric_limits<double>::infinity();
};

/// Best path over every continuation of length <= L (paths stop at a break
/// id) by exhaustive enumeration. `lp(prefix)` gives next-token log-probs.
inline PathScore exhaustive_best(const std::function<std::vector<double>(const std::vector<gptc::TokenId>&)>& lp,
                                 const std::vector<gptc::TokenId>& context, std::size_t vocab, std::size_t L,
                                 const std::vector<gptc::TokenId>& breaks) {
    PathScore best;
    std::function<void(std::vector<gptc::TokenId>&, double)> rec = [&](std::vector<gptc::TokenId>& path, double score) {
        const bool ended = !path.empty() && std::find(breaks.begin(), breaks.end(), path.back()) != breaks.end();
        if (ended || path.size() == L) {
            if (score > best.log_prob || (score == best.log_prob && path < best.ids)) {
                best = {path, score};
            }
            return;
        }
        std::vector<gptc::TokenId> prefix = context;
        prefix.insert(prefix.end(), path.begin(), path.end());
        const auto dist = lp(prefix);
        for (gptc::TokenId t = 0; t < vocab; ++t) {
            if (!std::isfinite(dist[t])) continue;
            path.push_back(t);
            rec(path, score + dist[t]);
            path.pop_back();
        }
    };
    std::vector<gptc::TokenId> path;
    rec(path, 0.0);
    return best;
}

/// Brute-force n-gram window scan: order -> context -> next -> count.
inline std::map<std::size_t, std::map<std::vector<gptc::TokenId>, std::map<gptc::TokenId, std::uint64_t>>>
ngram_windows(const std::vector<std::vector<gptc::TokenId>>& seqs, std::size_t n) {
    std::map<std::size_t, std::map<std::vector<gptc::TokenId>, std::map<gptc::TokenId, std::uint64_t>>> out;
    for (const auto& s : seqs) {
        if (s.size() < n) continue;
        for (std::size_t k = 1; k <= n; ++k) {
            for (std::size_t i = 0; i + k <= s.size(); ++i) {
                std::vector<gptc::TokenId> ctx(s.begin() + static_cast<long>(i), s.begin() + static_cast<long>(i + k - 1));
                ++out[k][ctx][s[i + k - 1]];
            }
        }
    }
    return out;
}

}  // namespace oracle
