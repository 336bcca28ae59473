#include "gptc/ngram.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <string>

namespace gptc::ngram {

NGramModel::NGramModel(std::size_t n, std::size_t vocab_size)
    : n_(n), vocab_size_(vocab_size), tables_(n), totals_(n) {
    if (n < 1) {
        throw NGramError("n-gram order must be at least 1");
    }
    if (vocab_size == 0) {
        throw NGramError("vocabulary size must be positive");
    }
}

const std::map<Context, NextCounts>& NGramModel::table(std::size_t k) const {
    if (k < 1 || k > n_) {
        throw NGramError("order " + std::to_string(k) + " outside [1, " + std::to_string(n_) + "]");
    }
    return tables_[k - 1];
}

std::uint64_t NGramModel::context_total(std::span<const TokenId> context) const {
    const std::size_t k = context.size() + 1;
    if (k > n_) {
        return 0;
    }
    const auto& totals = totals_[k - 1];
    auto it = totals.find(Context(context.begin(), context.end()));
    return it == totals.end() ? 0 : it->second;
}

void NGramModel::add_count(std::span<const TokenId> context, TokenId next, std::uint64_t count) {
    const std::size_t k = context.size() + 1;
    if (k > n_) {
        throw NGramError("context longer than n-1");
    }
    if (next >= vocab_size_) {
        throw NGramError("id " + std::to_string(next) + " outside the vocabulary");
    }
    Context ctx(context.begin(), context.end());
    tables_[k - 1][ctx][next] += count;
    totals_[k - 1][ctx] += count;
}

void NGramModel::add_sequence(std::span<const TokenId> ids) {
    if (ids.size() < n_) {
        ++skipped_sequences;
        return;
    }
    for (std::size_t k = 1; k <= n_; ++k) {
        for (std::size_t i = 0; i + k <= ids.size(); ++i) {
            add_count(ids.subspan(i, k - 1), ids[i + k - 1], 1);
        }
    }
}

std::vector<double> NGramModel::backoff_scores(std::span<const TokenId> context, std::size_t k) const {
    if (k == 0) {
        return std::vector<double>(vocab_size_, 1.0 / static_cast<double>(vocab_size_));
    }
    std::vector<double> scores = backoff_scores(context, k - 1);
    for (double& s : scores) {
        s *= kBackoffFactor;
    }
    const auto ctx = context.last(k - 1);
    const Context key(ctx.begin(), ctx.end());
    const auto it = tables_[k - 1].find(key);
    if (it != tables_[k - 1].end()) {
        const auto total = static_cast<double>(totals_[k - 1].at(key));
        for (const auto& [next, count] : it->second) {
            scores[next] = static_cast<double>(count) / total;
        }
    }
    return scores;
}

std::vector<double> NGramModel::next_distribution(std::span<const TokenId> context, Smoothing mode) const {
    if (n_ == 0) {
        throw NGramError("empty model");
    }
    if (mode == Smoothing::strict) {
        std::vector<double> dist(vocab_size_, 0.0);
        if (context.size() >= n_ - 1) {
            const auto ctx = context.last(n_ - 1);
            const Context key(ctx.begin(), ctx.end());
            const auto it = tables_[n_ - 1].find(key);
            if (it != tables_[n_ - 1].end()) {
                const auto total = static_cast<double>(totals_[n_ - 1].at(key));
                for (const auto& [next, count] : it->second) {
                    dist[next] = static_cast<double>(count) / total;
                }
                return dist;
            }
        }
        std::fill(dist.begin(), dist.end(), 1.0 / static_cast<double>(vocab_size_));
        return dist;
    }
    const std::size_t k = std::min(n_, context.size() + 1);
    std::vector<double> scores = backoff_scores(context, k);
    double sum = 0.0;
    for (double s : scores) {
        sum += s;
    }
    for (double& s : scores) {
        s /= sum;
    }
    return scores;
}

NGramModel train_ngram(std::span<const std::vector<TokenId>> sequences, std::size_t n, std::size_t vocab_size) {
    if (n < 2) {
        throw NGramError("n-gram order must be at least 2");
    }
    NGramModel model(n, vocab_size);
    for (const auto& seq : sequences) {
        model.add_sequence(seq);
    }
    return model;
}

std::vector<TokenId> complete_ngram(const NGramModel& model, std::span<const TokenId> context, std::size_t max_len,
                                    std::span<const TokenId> break_ids, Smoothing mode) {
    std::vector<TokenId> history(context.begin(), context.end());
    std::vector<TokenId> out;
    while (out.size() < max_len) {
        const auto dist = model.next_distribution(history, mode);
        const auto best = static_cast<TokenId>(std::max_element(dist.begin(), dist.end()) - dist.begin());
        if (std::find(break_ids.begin(), break_ids.end(), best) != break_ids.end()) {
            break;
        }
        out.push_back(best);
        history.push_back(best);
    }
    return out;
}

void write_ngram(std::ostream& out, const NGramModel& model) {
    out << "ngram v1 n=" << model.order() << " vocab=" << model.vocab_size() << '\n';
    for (std::size_t k = 1; k <= model.order(); ++k) {
        for (const auto& [ctx, nexts] : model.table(k)) {
            std::string key;
            for (std::size_t i = 0; i < ctx.size(); ++i) {
                if (i != 0) {
                    key += ',';
                }
                key += std::to_string(ctx[i]);
            }
            for (const auto& [next, count] : nexts) {
                out << key << '\t' << next << '\t' << count << '\n';
            }
        }
    }
}

NGramModel read_ngram(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || !line.starts_with("ngram v1 ")) {
        throw NGramError("bad n-gram header");
    }
    std::size_t n = 0;
    std::size_t vocab = 0;
    for (const auto& field : gptc::split(line, ' ')) {
        if (field.starts_with("n=")) {
            n = std::stoul(field.substr(2));
        } else if (field.starts_with("vocab=")) {
            vocab = std::stoul(field.substr(6));
        }
    }
    NGramModel model(n, vocab);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const auto fields = gptc::split(line, '\t');
        if (fields.size() != 3) {
            throw NGramError("n-gram line " + std::to_string(line_no) + ": expected 3 fields");
        }
        Context ctx;
        if (!fields[0].empty()) {
            for (const auto& id : gptc::split(fields[0], ',')) {
                ctx.push_back(static_cast<TokenId>(std::stoul(id)));
            }
        }
        model.add_count(ctx, static_cast<TokenId>(std::stoul(fields[1])), std::stoull(fields[2]));
    }
    return model;
}

}  // namespace gptc::ngram
