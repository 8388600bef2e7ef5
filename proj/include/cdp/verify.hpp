#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdp/masking.hpp"
#include "cdp/tensor.hpp"

// Independent oracles and the runtime property suite behind `cdp verify`.
// Every oracle re-derives its expected values from first principles (naive
// loops, extended precision, rule enumeration) and never calls the
// implementation path it checks.
namespace cdp::verify {

// Naive triple-loop matmul with long double accumulation.
nk::Tensor<double> matmul_oracle(const nk::Tensor<double>& a, const nk::Tensor<double>& b);

// Masked softmax computed by excluding blocked entries and normalizing in
// long double.
nk::Tensor<double> softmax_oracle(const nk::Tensor<double>& logits, const AttentionMask& mask);

// Layer norm with mean/variance computed in long double.
nk::Tensor<double> layer_norm_oracle(const nk::Tensor<double>& x,
                                     const nk::Tensor<double>& gain,
                                     const nk::Tensor<double>& bias, double eps);

// Direct rule enumeration of the training/inference visibility rules.
bool training_mask_cell(const PolicyGeometry& g, std::size_t row, std::size_t col);
bool inference_mask_cell(const PolicyGeometry& g, std::size_t row, std::size_t col);

// Closed-form squared-cosine alpha-bar (long double), ignoring the final
// clipped step.
double cosine_alpha_bar_oracle(std::size_t t, std::size_t T);

// Central finite differences for a scalar function of one tensor entry.
// Returns (f(x+h) - f(x-h)) / 2h with the entry restored afterwards.
template <typename F>
double central_difference(F&& f, nk::Tensor<double>& x, std::size_t i, double h = 1e-5) {
    const double orig = x.at(i);
    x.at(i) = orig + h;
    const double fp = f();
    x.at(i) = orig - h;
    const double fm = f();
    x.at(i) = orig;
    return (fp - fm) / (2.0 * h);
}

// Gradient comparison rule used everywhere: absolute agreement for
// near-zero gradients, relative error below 1e-4 otherwise.
inline bool gradients_match(double analytic, double numeric, double rel_tol = 1e-4,
                            double abs_tol = 1e-7) {
    const double diff = std::abs(analytic - numeric);
    if (diff <= abs_tol) return true;
    return diff / std::max(std::abs(analytic), std::abs(numeric)) < rel_tol;
}

struct PropertyResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct VerifyOptions {
    std::uint64_t seed = 0;
    bool inject_mask_fault = false;  // negative-control fixture
};

std::vector<PropertyResult> run_property_suite(const VerifyOptions& opts);

}  // namespace cdp::verify
