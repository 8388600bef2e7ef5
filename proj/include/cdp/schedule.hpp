#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdp/tensor.hpp"

namespace cdp {

enum class ScheduleKind { linear, cosine };

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "linear") return ScheduleKind::linear;
    if (s == "cosine") return ScheduleKind::cosine;
    throw std::invalid_argument("schedule: unknown kind '" + s + "' (linear|cosine)");
}

inline const char* to_string(ScheduleKind k) {
    return k == ScheduleKind::linear ? "linear" : "cosine";
}

// Forward-noising schedule. Schedule math is kept in double regardless of the
// model precision; coefficient casts happen at the tensor boundary.
struct NoiseSchedule {
    std::size_t num_steps = 0;  // T
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;

    double alpha_bar_prev(std::size_t t) const { return t == 0 ? 1.0 : alpha_bars[t - 1]; }
};

// kind == linear: betas equally spaced over [beta_min, beta_max].
// kind == cosine: squared-cosine alpha-bar profile, f(u) = cos((u/T + s)/(1+s) * pi/2)^2
// with s = 0.008 and beta_t = 1 - f(t+1)/f(t), capped at 0.999. The beta range
// arguments are range-checked but do not shape the cosine profile.
inline NoiseSchedule make_schedule(std::size_t T, ScheduleKind kind, double beta_min,
                                   double beta_max) {
    if (T < 2) throw std::invalid_argument("schedule: T must be >= 2");
    if (!(0.0 < beta_min && beta_min < beta_max && beta_max < 1.0)) {
        throw std::invalid_argument("schedule: need 0 < beta_min < beta_max < 1, got [" +
                                    std::to_string(beta_min) + ", " + std::to_string(beta_max) +
                                    "]");
    }
    NoiseSchedule s;
    s.num_steps = T;
    s.betas.resize(T);
    if (kind == ScheduleKind::linear) {
        for (std::size_t t = 0; t < T; ++t)
            s.betas[t] = beta_min + (beta_max - beta_min) * static_cast<double>(t) /
                                        static_cast<double>(T - 1);
    } else {
        const double off = 0.008;
        const double half_pi = 1.57079632679489661923;
        auto f = [&](double u) {
            const double c = std::cos((u / static_cast<double>(T) + off) / (1.0 + off) * half_pi);
            return c * c;
        };
        for (std::size_t t = 0; t < T; ++t) {
            const double b = 1.0 - f(static_cast<double>(t) + 1.0) / f(static_cast<double>(t));
            s.betas[t] = std::min(b, 0.999);
        }
    }
    s.alphas.resize(T);
    s.alpha_bars.resize(T);
    double prod = 1.0;
    for (std::size_t t = 0; t < T; ++t) {
        s.alphas[t] = 1.0 - s.betas[t];
        prod *= s.alphas[t];
        s.alpha_bars[t] = prod;
    }
    for (std::size_t t = 0; t < T; ++t) {
        if (!(s.alpha_bars[t] > 0.0 && s.alpha_bars[t] < 1.0) ||
            (t > 0 && s.alpha_bars[t] >= s.alpha_bars[t - 1])) {
            throw std::invalid_argument("schedule: alpha_bars not strictly decreasing in (0,1)");
        }
    }
    return s;
}

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise.
template <typename T>
nk::Tensor<T> q_sample(const nk::Tensor<T>& x0, std::size_t t, const nk::Tensor<T>& noise,
                       const NoiseSchedule& sched) {
    if (t >= sched.num_steps)
        throw std::out_of_range("q_sample: t " + std::to_string(t) + " out of range, T = " +
                                std::to_string(sched.num_steps));
    if (x0.shape() != noise.shape())
        throw std::invalid_argument("q_sample: noise shape " + noise.shape_string() +
                                    " does not match x0 " + x0.shape_string());
    const T a = static_cast<T>(std::sqrt(sched.alpha_bars[t]));
    const T b = static_cast<T>(std::sqrt(1.0 - sched.alpha_bars[t]));
    nk::Tensor<T> out = nk::Tensor<T>::zeros(x0.shape());
    for (std::size_t i = 0; i < out.numel(); ++i)
        out.at(i) = a * x0.at(i) + b * noise.at(i);
    return out;
}

// One reverse step under x0-parameterization: the DDPM posterior mean of
// x_{t-1} given (x_t, predicted x0), plus posterior-variance noise when
// sampling stochastically. t == 0 returns x0_pred exactly.
template <typename T>
nk::Tensor<T> denoise_step_x0(const nk::Tensor<T>& x_t, const nk::Tensor<T>& x0_pred,
                              std::size_t t, const NoiseSchedule& sched, bool stochastic,
                              const nk::Tensor<T>* noise = nullptr) {
    if (t >= sched.num_steps)
        throw std::out_of_range("denoise_step_x0: t " + std::to_string(t) + " out of range");
    if (x_t.shape() != x0_pred.shape())
        throw std::invalid_argument("denoise_step_x0: shape mismatch " + x_t.shape_string() +
                                    " vs " + x0_pred.shape_string());
    if (t == 0) return x0_pred.clone();
    if (stochastic && noise == nullptr)
        throw std::invalid_argument("denoise_step_x0: stochastic step at t > 0 requires noise");

    const double beta_t = sched.betas[t];
    const double abar_t = sched.alpha_bars[t];
    const double abar_prev = sched.alpha_bar_prev(t);
    const double alpha_t = sched.alphas[t];
    const double coef_x0 = std::sqrt(abar_prev) * beta_t / (1.0 - abar_t);
    const double coef_xt = std::sqrt(alpha_t) * (1.0 - abar_prev) / (1.0 - abar_t);
    const double post_var = (1.0 - abar_prev) / (1.0 - abar_t) * beta_t;
    const T c0 = static_cast<T>(coef_x0);
    const T ct = static_cast<T>(coef_xt);
    const T sd = static_cast<T>(std::sqrt(post_var));

    nk::Tensor<T> out = nk::Tensor<T>::zeros(x_t.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        T v = c0 * x0_pred.at(i) + ct * x_t.at(i);
        if (stochastic) v += sd * noise->at(i);
        out.at(i) = v;
    }
    return out;
}

}  // namespace cdp
