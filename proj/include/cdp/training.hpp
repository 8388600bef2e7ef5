#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "cdp/data.hpp"
#include "cdp/model.hpp"
#include "cdp/schedule.hpp"

namespace cdp {

struct TrainConfig {
    double sigma = 1.0 / 6.0;  // history perturbation std
    std::size_t batch_size = 64;
    std::size_t epochs = 30;
    double learning_rate = 1e-4;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(sigma > 0.0 && sigma < 1.0))
            throw std::invalid_argument("train: sigma must be in (0, 1), got " +
                                        std::to_string(sigma));
        if (batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
        if (epochs == 0) throw std::invalid_argument("train: epochs must be positive");
        if (learning_rate <= 0.0)
            throw std::invalid_argument("train: learning_rate must be positive");
    }
};

template <typename T>
struct TrainingSample {
    nk::Tensor<T> history;  // [L, action_dim], normalized
    nk::Tensor<T> targets;  // [M, action_dim], normalized
    nk::Tensor<T> obs;      // [obs_dim]
    std::size_t offset = 0;
};

// Window of L history + M target actions ending at the observation boundary.
// start may go down to -L; indices before the episode start repeat the first
// action/observation. The cyclic temporal offset is drawn uniformly.
template <typename T>
TrainingSample<T> sample_window(const Episode& ep, std::ptrdiff_t start,
                                const PolicyGeometry& geom, std::size_t temporal_period,
                                const NormStats& norm, Rng& rng) {
    const std::ptrdiff_t L = static_cast<std::ptrdiff_t>(geom.history_len);
    const std::ptrdiff_t M = static_cast<std::ptrdiff_t>(geom.target_len);
    const std::ptrdiff_t len = static_cast<std::ptrdiff_t>(ep.length());
    if (start < -L || start + L + M > len)
        throw std::out_of_range("sample_window: window [" + std::to_string(start) + ", " +
                                std::to_string(start + L + M) + ") outside episode of length " +
                                std::to_string(len));
    const std::size_t a_dim = ep.actions.front().size();
    auto action_at = [&](std::ptrdiff_t i) -> const std::vector<double>& {
        return ep.actions[static_cast<std::size_t>(std::max<std::ptrdiff_t>(i, 0))];
    };

    TrainingSample<T> s;
    s.history = nk::Tensor<T>::zeros({geom.history_len, a_dim});
    for (std::ptrdiff_t i = 0; i < L; ++i) {
        const auto& a = action_at(start + i);
        for (std::size_t d = 0; d < a_dim; ++d)
            s.history.at(static_cast<std::size_t>(i), d) =
                static_cast<T>(norm.normalize_one(a[d], d));
    }
    s.targets = nk::Tensor<T>::zeros({geom.target_len, a_dim});
    for (std::ptrdiff_t i = 0; i < M; ++i) {
        const auto& a = action_at(start + L + i);
        for (std::size_t d = 0; d < a_dim; ++d)
            s.targets.at(static_cast<std::size_t>(i), d) =
                static_cast<T>(norm.normalize_one(a[d], d));
    }
    const auto& o = ep.observations[static_cast<std::size_t>(std::max<std::ptrdiff_t>(
        start + L, 0))];
    std::vector<T> ov(o.begin(), o.end());
    s.obs = nk::Tensor<T>::from({o.size()}, std::move(ov));
    s.offset = rng.uniform_index(temporal_period);
    return s;
}

// History perturbation: add N(0, sigma^2) elementwise so the model learns the
// coarse temporal dynamics rather than exact history values.
template <typename T>
nk::Tensor<T> perturb_history(const nk::Tensor<T>& history, double sigma, Rng& rng) {
    if (!(sigma > 0.0 && sigma < 1.0))
        throw std::invalid_argument("perturb_history: sigma must be in (0, 1), got " +
                                    std::to_string(sigma));
    nk::Tensor<T> out = nk::Tensor<T>::zeros(history.shape());
    for (std::size_t i = 0; i < out.numel(); ++i)
        out.at(i) = history.at(i) + static_cast<T>(rng.normal(0.0, sigma));
    return out;
}

// Diffusion objective for one sample: draw (t, noise), noise the targets,
// run the denoiser on the perturbed history, MSE against the clean targets.
// Supervision covers only the M target tokens.
template <typename T>
nk::Tensor<T> loss(const ModelParams<T>& params, const TrainingSample<T>& sample,
                   const NoiseSchedule& sched, const ModelConfig& cfg, double sigma, Rng& rng,
                   nk::Tape<T>* tape, const AttentionMask* mask = nullptr) {
    const std::size_t t = rng.uniform_index(sched.num_steps);
    nk::Tensor<T> noise = nk::Tensor<T>::randn(sample.targets.shape(), rng);
    auto x_t = q_sample(sample.targets, t, noise, sched);
    nk::Tensor<T> hist;
    if (cfg.geom.history_len > 0) hist = perturb_history(sample.history, sigma, rng);
    auto pred = forward(hist, x_t, sample.obs, t, sample.offset, params, cfg, tape, mask);
    return nk::mse(pred, sample.targets, tape);
}

// Adam with cosine learning-rate decay over the full run.
template <typename T>
class Adam {
public:
    Adam(double lr, std::size_t total_steps)
        : base_lr_(lr), total_steps_(std::max<std::size_t>(total_steps, 1)) {}

    void step(ModelParams<T>& params) {
        ++t_;
        const double prog = static_cast<double>(t_ - 1) / static_cast<double>(total_steps_);
        const double lr = base_lr_ * 0.5 * (1.0 + std::cos(3.14159265358979323846 *
                                                           std::min(prog, 1.0)));
        const double b1c = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double b2c = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (auto& [name, p] : params.named) {
            if (!p.requires_grad()) continue;
            auto& state = moments_[name];
            if (state.m.empty()) {
                state.m.assign(p.numel(), 0.0);
                state.v.assign(p.numel(), 0.0);
            }
            const auto& g = p.grad();
            for (std::size_t i = 0; i < p.numel(); ++i) {
                const double gi = static_cast<double>(g[i]);
                state.m[i] = beta1_ * state.m[i] + (1.0 - beta1_) * gi;
                state.v[i] = beta2_ * state.v[i] + (1.0 - beta2_) * gi * gi;
                const double mhat = state.m[i] / b1c;
                const double vhat = state.v[i] / b2c;
                p.at(i) -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    double base_lr_;
    std::size_t total_steps_;
    std::size_t t_ = 0;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::map<std::string, Moments> moments_;
};

struct MetricRow {
    std::size_t epoch = 0;
    double loss = 0.0;
    double val_loss = 0.0;
};

template <typename T>
struct TrainResult {
    ModelParams<T> params;
    NormStats norm;
    std::vector<MetricRow> metrics;
};

// Full optimization loop: every valid window of every training episode once
// per epoch in shuffled order, one (t, noise, perturbation) draw per sample
// per step, Adam updates. Deterministic given the seed. About one in ten
// episodes (at least one, when there are two or more) is held out for the
// validation loss, which is computed with fixed draws so epochs compare.
template <typename T>
TrainResult<T> train(const std::vector<Episode>& dataset, const TrainConfig& tcfg,
                     const ModelConfig& cfg, const NoiseSchedule& sched,
                     const ModelParams<T>* resume_from = nullptr,
                     std::vector<MetricRow>* live_metrics = nullptr) {
    tcfg.validate();
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");

    TrainResult<T> result;
    result.norm = NormStats::fit(dataset);

    const std::size_t n_val = dataset.size() >= 2 ? std::max<std::size_t>(1, dataset.size() / 10)
                                                  : 0;
    const std::size_t n_train = dataset.size() - n_val;

    struct WindowRef {
        std::size_t episode;
        std::ptrdiff_t start;
    };
    auto enumerate_windows = [&](std::size_t begin, std::size_t end) {
        std::vector<WindowRef> w;
        const std::ptrdiff_t L = static_cast<std::ptrdiff_t>(cfg.geom.history_len);
        const std::ptrdiff_t M = static_cast<std::ptrdiff_t>(cfg.geom.target_len);
        for (std::size_t e = begin; e < end; ++e) {
            const std::ptrdiff_t len = static_cast<std::ptrdiff_t>(dataset[e].length());
            for (std::ptrdiff_t s = -L; s + L + M <= len; ++s) w.push_back({e, s});
        }
        return w;
    };
    std::vector<WindowRef> train_windows = enumerate_windows(0, n_train);
    std::vector<WindowRef> val_windows =
        n_val > 0 ? enumerate_windows(n_train, dataset.size()) : std::vector<WindowRef>{};
    if (train_windows.empty())
        throw std::invalid_argument("train: no training window fits the geometry (episodes "
                                    "shorter than target_len?)");

    Rng init_rng(tcfg.seed, "init");
    result.params = resume_from ? *resume_from : init_params<T>(cfg, init_rng);

    if (sched.num_steps != cfg.diffusion_steps)
        throw std::invalid_argument("train: schedule has " + std::to_string(sched.num_steps) +
                                    " steps, model expects " +
                                    std::to_string(cfg.diffusion_steps));
    const AttentionMask mask = build_training_mask(cfg.geom);

    const std::size_t steps_per_epoch =
        (train_windows.size() + tcfg.batch_size - 1) / tcfg.batch_size;
    Adam<T> opt(tcfg.learning_rate, steps_per_epoch * tcfg.epochs);
    Rng noise_rng(tcfg.seed, "noise");

    for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
        Rng data_rng(tcfg.seed, "data", epoch);
        std::vector<WindowRef> order = train_windows;
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[data_rng.uniform_index(i)]);

        double epoch_loss = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += tcfg.batch_size) {
            const std::size_t bsz = std::min(tcfg.batch_size, order.size() - b0);
            nk::Tape<T> tape;
            result.params.zero_grads();
            nk::Tensor<T> total;
            for (std::size_t i = 0; i < bsz; ++i) {
                const auto& w = order[b0 + i];
                auto sample = sample_window<T>(dataset[w.episode], w.start, cfg.geom,
                                               cfg.temporal_period, result.norm, data_rng);
                auto li = loss(result.params, sample, sched, cfg, tcfg.sigma, noise_rng, &tape,
                               &mask);
                total = total.defined() ? nk::add(total, li, &tape) : li;
            }
            auto batch_loss = nk::scale(total, T(1) / static_cast<T>(bsz), &tape);
            tape.backward(batch_loss);
            opt.step(result.params);
            epoch_loss += static_cast<double>(batch_loss.item());
            ++n_batches;
        }
        epoch_loss /= static_cast<double>(std::max<std::size_t>(n_batches, 1));

        double val_loss = epoch_loss;
        if (!val_windows.empty()) {
            Rng val_rng(tcfg.seed, "val");
            val_loss = 0.0;
            std::size_t n_eval = std::min<std::size_t>(val_windows.size(), 128);
            for (std::size_t i = 0; i < n_eval; ++i) {
                const auto& w = val_windows[i];
                auto sample = sample_window<T>(dataset[w.episode], w.start, cfg.geom,
                                               cfg.temporal_period, result.norm, val_rng);
                auto li = loss(result.params, sample, sched, cfg, tcfg.sigma, val_rng, nullptr,
                               &mask);
                val_loss += static_cast<double>(li.item());
            }
            val_loss /= static_cast<double>(n_eval);
        }
        result.metrics.push_back({epoch, epoch_loss, val_loss});
        if (live_metrics) live_metrics->push_back(result.metrics.back());
    }
    return result;
}

}  // namespace cdp
