#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "cdp/tensor.hpp"

namespace cdp {

// One recorded trajectory: (observation, action) per environment tick.
struct Episode {
    std::vector<std::vector<double>> observations;
    std::vector<std::vector<double>> actions;
    bool success = false;

    std::size_t length() const { return actions.size(); }

    void check() const {
        if (observations.size() != actions.size())
            throw std::invalid_argument("episode: observation/action count mismatch");
    }
};

// JSON-lines, one episode per line: {"obs": [[...]], "act": [[...]], "success": bool}
void save_episodes_jsonl(const std::string& path, const std::vector<Episode>& episodes);
std::vector<Episode> load_episodes_jsonl(const std::string& path);

// Per-dimension min-max action normalization to [-1, 1], fitted on the
// training set and stored in the checkpoint. Dimensions with zero range map
// to 0.
struct NormStats {
    std::vector<double> min_v;
    std::vector<double> max_v;

    std::size_t dim() const { return min_v.size(); }

    static NormStats fit(const std::vector<Episode>& episodes);
    static NormStats identity(std::size_t dim);  // maps [-1,1] to itself

    double normalize_one(double v, std::size_t d) const {
        const double range = max_v[d] - min_v[d];
        if (range <= 0.0) return 0.0;
        return 2.0 * (v - min_v[d]) / range - 1.0;
    }
    double denormalize_one(double v, std::size_t d) const {
        const double range = max_v[d] - min_v[d];
        if (range <= 0.0) return min_v[d];
        return (v + 1.0) * 0.5 * range + min_v[d];
    }

    template <typename T>
    nk::Tensor<T> normalize(const nk::Tensor<T>& actions) const {
        nk::Tensor<T> out = nk::Tensor<T>::zeros(actions.shape());
        const std::size_t d = dim();
        for (std::size_t i = 0; i < actions.numel(); ++i)
            out.at(i) = static_cast<T>(normalize_one(static_cast<double>(actions.at(i)), i % d));
        return out;
    }

    template <typename T>
    nk::Tensor<T> denormalize(const nk::Tensor<T>& actions) const {
        nk::Tensor<T> out = nk::Tensor<T>::zeros(actions.shape());
        const std::size_t d = dim();
        for (std::size_t i = 0; i < actions.numel(); ++i)
            out.at(i) =
                static_cast<T>(denormalize_one(static_cast<double>(actions.at(i)), i % d));
        return out;
    }
};

}  // namespace cdp
