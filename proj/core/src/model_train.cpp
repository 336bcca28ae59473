#include "gptc/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>

namespace gptc::model {

double learning_rate(const TrainSchedule& s, std::size_t step, std::size_t steps_per_epoch) {
    steps_per_epoch = std::max<std::size_t>(steps_per_epoch, 1);
    const std::size_t epoch = step / steps_per_epoch;
    const std::size_t warmup_steps = s.warmup_epochs * steps_per_epoch;
    if (step < warmup_steps) {
        return s.base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    }
    if (s.cosine) {
        const std::size_t total = std::max(s.epochs * steps_per_epoch, warmup_steps + 1);
        const double progress =
            static_cast<double>(step - warmup_steps) / static_cast<double>(total - warmup_steps);
        return s.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
    }
    return s.base_lr * std::pow(s.decay, static_cast<double>(epoch));
}

namespace {

struct Moments {
    ModelParams<float> m;
    ModelParams<float> v;
};

double global_norm(const ModelParams<float>& g) {
    double sq = 0.0;
    g.for_each_tensor([&](const std::string&, const Mat<float>& t) { sq += t.cast<double>().squaredNorm(); });
    return std::sqrt(sq);
}

void adamw_step(ModelParams<float>& params, ModelParams<float>& grads, Moments& mo, const TrainSchedule& s,
                double lr, std::size_t t) {
    const double norm = global_norm(grads);
    if (s.clip_norm > 0.0 && norm > s.clip_norm) {
        const auto f = static_cast<float>(s.clip_norm / norm);
        grads.for_each_tensor([&](const std::string&, Mat<float>& g) { g *= f; });
    }
    const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(t));
    std::vector<Mat<float>*> ps;
    std::vector<Mat<float>*> gs;
    std::vector<Mat<float>*> ms;
    std::vector<Mat<float>*> vs;
    params.for_each_tensor([&](const std::string&, Mat<float>& x) { ps.push_back(&x); });
    grads.for_each_tensor([&](const std::string&, Mat<float>& x) { gs.push_back(&x); });
    mo.m.for_each_tensor([&](const std::string&, Mat<float>& x) { ms.push_back(&x); });
    mo.v.for_each_tensor([&](const std::string&, Mat<float>& x) { vs.push_back(&x); });
    const auto b1 = static_cast<float>(s.beta1);
    const auto b2 = static_cast<float>(s.beta2);
    const auto step_size = static_cast<float>(lr / bc1);
    const auto rbc2 = static_cast<float>(1.0 / std::sqrt(bc2));
    const auto eps = static_cast<float>(s.epsilon);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        auto& p = *ps[i];
        const auto& g = *gs[i];
        auto& m = *ms[i];
        auto& v = *vs[i];
        m = b1 * m + (1.0f - b1) * g;
        v = b2 * v + (1.0f - b2) * g.cwiseProduct(g);
        if (p.rows() > 1 && p.cols() > 1 && s.weight_decay > 0.0) {
            p *= static_cast<float>(1.0 - lr * s.weight_decay);
        }
        p.array() -= step_size * m.array() / (v.array().sqrt() * rbc2 + eps);
    }
}

}  // namespace

TrainResult train(ModelParams<float>& params, std::span<const Sample> samples, const TrainSchedule& schedule,
                  const StepCallback& on_step) {
    TrainResult result;
    if (schedule.epochs == 0 || samples.empty()) {
        result.message = "no training steps";
        return result;
    }
    if (schedule.batch_size == 0) {
        throw ModelError("batch size must be positive");
    }
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        groups[samples[i].lang].push_back(i);
    }
    std::vector<int> langs;
    for (const auto& [lang, _] : groups) {
        langs.push_back(lang);
    }
    const std::size_t steps_per_epoch = (samples.size() + schedule.batch_size - 1) / schedule.batch_size;

    std::mt19937_64 rng(schedule.seed);
    std::map<int, std::size_t> cursor;
    for (auto& [lang, idx] : groups) {
        deterministic_shuffle(idx, rng);
        cursor[lang] = 0;
    }

    Moments mo{params.zeros_like(), params.zeros_like()};
    ModelParams<float> grads = params.zeros_like();
    ModelParams<float> last_good = params;
    std::vector<Sample> batch;

    for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
        double epoch_sum = 0.0;
        std::size_t epoch_steps = 0;
        for (std::size_t s = 0; s < steps_per_epoch; ++s) {
            if (schedule.max_steps != 0 && result.steps >= schedule.max_steps) {
                break;
            }
            const int lang = langs[static_cast<std::size_t>(rng() % langs.size())];
            auto& idx = groups[lang];
            auto& cur = cursor[lang];
            batch.clear();
            for (std::size_t b = 0; b < schedule.batch_size && b < idx.size(); ++b) {
                if (cur == idx.size()) {
                    deterministic_shuffle(idx, rng);
                    cur = 0;
                }
                batch.push_back(samples[idx[cur++]]);
            }
            grads.for_each_tensor([](const std::string&, Mat<float>& g) { g.setZero(); });
            const LossOptions opts{true, rng()};
            const double l = schedule.soft.teacher != nullptr ? distill_loss(params, batch, &grads, opts, schedule.soft)
                                                              : loss<float>(params, batch, &grads, opts);
            if (!std::isfinite(l)) {
                params = last_good;
                result.diverged = true;
                result.message = "loss diverged at step " + std::to_string(result.steps) +
                                 "; restored parameters of the last good step";
                return result;
            }
            last_good = params;
            const double lr = learning_rate(schedule, result.steps, steps_per_epoch);
            adamw_step(params, grads, mo, schedule, lr, result.steps + 1);
            ++result.steps;
            result.loss_history.push_back(l);
            epoch_sum += l;
            ++epoch_steps;
            if (on_step) {
                on_step(result.steps, l, lr);
            }
        }
        if (epoch_steps == 0) {
            break;
        }
        result.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_steps));
        if (schedule.target_loss > 0.0 && result.epoch_loss.back() < schedule.target_loss) {
            result.message = "target loss reached after epoch " + std::to_string(epoch + 1);
            break;
        }
    }
    if (!params.all_finite()) {
        params = last_good;
        result.diverged = true;
        result.message = "non-finite parameters; restored parameters of the last good step";
    }
    return result;
}

double evaluate_loss(const ModelParams<float>& params, std::span<const Sample> samples) {
    return loss<float>(params, samples, nullptr, {});
}

}  // namespace gptc::model
