#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdp/masking.hpp"
#include "cdp/tape.hpp"
#include "cdp/tensor.hpp"

// Fixed op set used by the model: matmul, elementwise add/scale/mul, masked
// softmax, layer norm, GELU, row gather (embedding lookup), row/column
// concat and slice, MSE. Each op optionally records its backward pass on a
// tape; with a null tape the op runs pure forward and the output carries no
// gradient state.
namespace cdp::nk {

namespace detail {

template <typename T>
inline bool track(const Tape<T>* tape, std::initializer_list<const Tensor<T>*> inputs) {
    if (!tape) return false;
    for (const Tensor<T>* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_string() +
                                    " vs " + b.shape_string());
    }
}

template <typename T>
inline void check_rank2(const Tensor<T>& a, const char* op) {
    if (a.rank() != 2) {
        throw std::invalid_argument(std::string(op) + ": expected rank-2 tensor, got " +
                                    a.shape_string());
    }
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
    detail::check_rank2(a, "matmul");
    detail::check_rank2(b, "matmul");
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: inner dimensions differ, " + a.shape_string() +
                                    " x " + b.shape_string());
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor<T> out = Tensor<T>::zeros({m, n});
    const T* pa = a.data();
    const T* pb = b.data();
    T* pc = out.values().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T av = pa[i * k + kk];
            const T* brow = pb + kk * n;
            T* crow = pc + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    if (detail::track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record([a, b, out]() mutable {
            const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
            const std::vector<T>& go = out.grad();
            if (a.requires_grad()) {
                std::vector<T>& ga = a.grad();
                const T* pb = b.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        T acc = T(0);
                        const T* grow = go.data() + i * n;
                        const T* brow = pb + kk * n;
                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        ga[i * k + kk] += acc;
                    }
            }
            if (b.requires_grad()) {
                std::vector<T>& gb = b.grad();
                const T* pa = a.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        const T av = pa[i * k + kk];
                        const T* grow = go.data() + i * n;
                        T* gbrow = gb.data() + kk * n;
                        for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                    }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, Tape<T>* tape = nullptr) {
    detail::check_rank2(x, "transpose");
    const std::size_t m = x.rows(), n = x.cols();
    Tensor<T> out = Tensor<T>::zeros({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(j, i) = x.at(i, j);
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record([x, out]() mutable {
            if (!x.requires_grad()) return;
            const std::size_t m = x.rows(), n = x.cols();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    x.grad()[i * n + j] += out.grad()[j * m + i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
    detail::check_same_shape(a, b, "add");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i)
        out.at(i) = a.at(i) + b.at(i);
    if (detail::track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record([a, b, out]() mutable {
            const std::vector<T>& go = out.grad();
            if (a.requires_grad())
                for (std::size_t i = 0; i < go.size(); ++i) a.grad()[i] += go[i];
            if (b.requires_grad())
                for (std::size_t i = 0; i < go.size(); ++i) b.grad()[i] += go[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
    detail::check_same_shape(a, b, "sub");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i)
        out.at(i) = a.at(i) - b.at(i);
    if (detail::track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record([a, b, out]() mutable {
            const std::vector<T>& go = out.grad();
            if (a.requires_grad())
                for (std::size_t i = 0; i < go.size(); ++i) a.grad()[i] += go[i];
            if (b.requires_grad())
                for (std::size_t i = 0; i < go.size(); ++i) b.grad()[i] -= go[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
    detail::check_same_shape(a, b, "mul");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i)
        out.at(i) = a.at(i) * b.at(i);
    if (detail::track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record([a, b, out]() mutable {
            const std::vector<T>& go = out.grad();
            if (a.requires_grad())
                for (std::size_t i = 0; i < go.size(); ++i) a.grad()[i] += go[i] * b.at(i);
            if (b.requires_grad())
                for (std::size_t i = 0; i < go.size(); ++i) b.grad()[i] += go[i] * a.at(i);
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s, Tape<T>* tape = nullptr) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = x.at(i) * s;
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record([x, out, s]() mutable {
            if (!x.requires_grad()) return;
            for (std::size_t i = 0; i < out.numel(); ++i) x.grad()[i] += out.grad()[i] * s;
        });
    }
    return out;
}

// x[m,n] + v[n], v broadcast over rows (bias add).
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& v, Tape<T>* tape = nullptr) {
    detail::check_rank2(x, "add_rowvec");
    if (v.rank() != 1 || v.numel() != x.cols()) {
        throw std::invalid_argument("add_rowvec: vector " + v.shape_string() +
                                    " does not match columns of " + x.shape_string());
    }
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const std::size_t m = x.rows(), n = x.cols();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) + v.at(j);
    if (detail::track(tape, {&x, &v})) {
        out.set_requires_grad(true);
        tape->record([x, v, out]() mutable {
            const std::size_t m = x.rows(), n = x.cols();
            if (x.requires_grad())
                for (std::size_t i = 0; i < m * n; ++i) x.grad()[i] += out.grad()[i];
            if (v.requires_grad())
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) v.grad()[j] += out.grad()[i * n + j];
        });
    }
    return out;
}

// Blocked entries contribute an additive -1e9 before normalization, so their
// exponentials underflow to exactly zero and each visible row sums to one.
template <typename T>
Tensor<T> softmax_masked(const Tensor<T>& logits, const AttentionMask& mask,
                         Tape<T>* tape = nullptr) {
    detail::check_rank2(logits, "softmax_masked");
    if (mask.rows() != logits.rows() || mask.cols() != logits.cols()) {
        throw std::invalid_argument("softmax_masked: logits " + logits.shape_string() +
                                    " vs mask [" + std::to_string(mask.rows()) + "x" +
                                    std::to_string(mask.cols()) + "]");
    }
    const std::size_t m = logits.rows(), n = logits.cols();
    constexpr T kBlocked = T(-1e9);
    Tensor<T> out = Tensor<T>::zeros(logits.shape());
    for (std::size_t i = 0; i < m; ++i) {
        bool any_visible = false;
        T mx = kBlocked;
        for (std::size_t j = 0; j < n; ++j) {
            const T s = mask.visible(i, j) ? logits.at(i, j) : kBlocked;
            if (mask.visible(i, j)) any_visible = true;
            if (s > mx) mx = s;
        }
        if (!any_visible) {
            throw std::invalid_argument("softmax_masked: fully blocked row " +
                                        std::to_string(i));
        }
        T denom = T(0);
        for (std::size_t j = 0; j < n; ++j) {
            const T s = mask.visible(i, j) ? logits.at(i, j) : kBlocked;
            const T e = std::exp(s - mx);
            out.at(i, j) = e;
            denom += e;
        }
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) /= denom;
    }
    if (detail::track(tape, {&logits})) {
        out.set_requires_grad(true);
        tape->record([logits, out]() mutable {
            if (!logits.requires_grad()) return;
            const std::size_t m = logits.rows(), n = logits.cols();
            for (std::size_t i = 0; i < m; ++i) {
                T dot = T(0);
                for (std::size_t j = 0; j < n; ++j)
                    dot += out.grad()[i * n + j] * out.at(i, j);
                for (std::size_t j = 0; j < n; ++j)
                    logits.grad()[i * n + j] +=
                        out.at(i, j) * (out.grad()[i * n + j] - dot);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps,
                     Tape<T>* tape = nullptr) {
    detail::check_rank2(x, "layer_norm");
    const std::size_t m = x.rows(), n = x.cols();
    if (gain.numel() != n || bias.numel() != n) {
        throw std::invalid_argument("layer_norm: gain/bias length does not match feature dim " +
                                    std::to_string(n));
    }
    if (eps <= T(0)) throw std::invalid_argument("layer_norm: eps must be positive");
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    Tensor<T> xhat = Tensor<T>::zeros(x.shape());
    std::vector<T> inv_std(m);
    for (std::size_t i = 0; i < m; ++i) {
        T mean = T(0);
        for (std::size_t j = 0; j < n; ++j) mean += x.at(i, j);
        mean /= static_cast<T>(n);
        T var = T(0);
        for (std::size_t j = 0; j < n; ++j) {
            const T d = x.at(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<T>(n);
        const T inv = T(1) / std::sqrt(var + eps);
        inv_std[i] = inv;
        for (std::size_t j = 0; j < n; ++j) {
            const T xh = (x.at(i, j) - mean) * inv;
            xhat.at(i, j) = xh;
            out.at(i, j) = gain.at(j) * xh + bias.at(j);
        }
    }
    if (detail::track(tape, {&x, &gain, &bias})) {
        out.set_requires_grad(true);
        tape->record([x, gain, bias, out, xhat, inv_std]() mutable {
            const std::size_t m = x.rows(), n = x.cols();
            for (std::size_t i = 0; i < m; ++i) {
                if (gain.requires_grad() || bias.requires_grad()) {
                    for (std::size_t j = 0; j < n; ++j) {
                        const T go = out.grad()[i * n + j];
                        if (gain.requires_grad()) gain.grad()[j] += go * xhat.at(i, j);
                        if (bias.requires_grad()) bias.grad()[j] += go;
                    }
                }
                if (x.requires_grad()) {
                    T mean_dxhat = T(0), mean_dxhat_xhat = T(0);
                    for (std::size_t j = 0; j < n; ++j) {
                        const T dxh = out.grad()[i * n + j] * gain.at(j);
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xhat.at(i, j);
                    }
                    mean_dxhat /= static_cast<T>(n);
                    mean_dxhat_xhat /= static_cast<T>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                        const T dxh = out.grad()[i * n + j] * gain.at(j);
                        x.grad()[i * n + j] +=
                            inv_std[i] * (dxh - mean_dxhat - xhat.at(i, j) * mean_dxhat_xhat);
                    }
                }
            }
        });
    }
    return out;
}

// Exact GELU, x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x, Tape<T>* tape = nullptr) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    constexpr T kInvSqrt2 = T(0.70710678118654752440);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const T v = x.at(i);
        out.at(i) = T(0.5) * v * (T(1) + std::erf(v * kInvSqrt2));
    }
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record([x, out]() mutable {
            if (!x.requires_grad()) return;
            constexpr T kInvSqrt2 = T(0.70710678118654752440);
            constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
            for (std::size_t i = 0; i < x.numel(); ++i) {
                const T v = x.at(i);
                const T phi = T(0.5) * (T(1) + std::erf(v * kInvSqrt2));
                const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
                x.grad()[i] += out.grad()[i] * (phi + v * pdf);
            }
        });
    }
    return out;
}

// Row gather; also serves as embedding lookup (table[V,d], indices -> [n,d]).
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::size_t>& idx,
                      Tape<T>* tape = nullptr) {
    detail::check_rank2(x, "gather_rows");
    const std::size_t n = x.cols();
    for (std::size_t r : idx) {
        if (r >= x.rows()) {
            throw std::out_of_range("gather_rows: index " + std::to_string(r) +
                                    " out of range for " + x.shape_string());
        }
    }
    Tensor<T> out = Tensor<T>::zeros({idx.size(), n});
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = x.at(idx[i], j);
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record([x, out, idx]() mutable {
            if (!x.requires_grad()) return;
            const std::size_t n = x.cols();
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t j = 0; j < n; ++j)
                    x.grad()[idx[i] * n + j] += out.grad()[i * n + j];
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts, Tape<T>* tape = nullptr) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    const std::size_t n = parts.front().cols();
    std::size_t m = 0;
    bool rg = false;
    for (const auto& p : parts) {
        detail::check_rank2(p, "concat_rows");
        if (p.cols() != n)
            throw std::invalid_argument("concat_rows: column mismatch " + p.shape_string());
        m += p.rows();
        rg = rg || p.requires_grad();
    }
    Tensor<T> out = Tensor<T>::zeros({m, n});
    std::size_t r0 = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < p.rows(); ++i)
            for (std::size_t j = 0; j < n; ++j) out.at(r0 + i, j) = p.at(i, j);
        r0 += p.rows();
    }
    if (tape && rg) {
        out.set_requires_grad(true);
        tape->record([parts, out]() mutable {
            const std::size_t n = out.cols();
            std::size_t r0 = 0;
            for (auto& p : parts) {
                if (p.requires_grad())
                    for (std::size_t i = 0; i < p.rows(); ++i)
                        for (std::size_t j = 0; j < n; ++j)
                            p.grad()[i * n + j] += out.grad()[(r0 + i) * n + j];
                r0 += p.rows();
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t r0, std::size_t count,
                     Tape<T>* tape = nullptr) {
    detail::check_rank2(x, "slice_rows");
    if (r0 + count > x.rows()) {
        throw std::out_of_range("slice_rows: [" + std::to_string(r0) + ", " +
                                std::to_string(r0 + count) + ") out of range for " +
                                x.shape_string());
    }
    const std::size_t n = x.cols();
    Tensor<T> out = Tensor<T>::zeros({count, n});
    for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = x.at(r0 + i, j);
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record([x, out, r0]() mutable {
            if (!x.requires_grad()) return;
            const std::size_t n = x.cols();
            for (std::size_t i = 0; i < out.rows(); ++i)
                for (std::size_t j = 0; j < n; ++j)
                    x.grad()[(r0 + i) * n + j] += out.grad()[i * n + j];
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t c0, std::size_t count,
                     Tape<T>* tape = nullptr) {
    detail::check_rank2(x, "slice_cols");
    if (c0 + count > x.cols()) {
        throw std::out_of_range("slice_cols: [" + std::to_string(c0) + ", " +
                                std::to_string(c0 + count) + ") out of range for " +
                                x.shape_string());
    }
    const std::size_t m = x.rows(), n = x.cols();
    Tensor<T> out = Tensor<T>::zeros({m, count});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) out.at(i, j) = x.at(i, c0 + j);
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record([x, out, c0]() mutable {
            if (!x.requires_grad()) return;
            const std::size_t n = x.cols(), cnt = out.cols();
            for (std::size_t i = 0; i < x.rows(); ++i)
                for (std::size_t j = 0; j < cnt; ++j)
                    x.grad()[i * n + c0 + j] += out.grad()[i * cnt + j];
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts, Tape<T>* tape = nullptr) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    const std::size_t m = parts.front().rows();
    std::size_t n = 0;
    bool rg = false;
    for (const auto& p : parts) {
        detail::check_rank2(p, "concat_cols");
        if (p.rows() != m)
            throw std::invalid_argument("concat_cols: row mismatch " + p.shape_string());
        n += p.cols();
        rg = rg || p.requires_grad();
    }
    Tensor<T> out = Tensor<T>::zeros({m, n});
    std::size_t c0 = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < p.cols(); ++j) out.at(i, c0 + j) = p.at(i, j);
        c0 += p.cols();
    }
    if (tape && rg) {
        out.set_requires_grad(true);
        tape->record([parts, out]() mutable {
            const std::size_t m = out.rows(), n = out.cols();
            std::size_t c0 = 0;
            for (auto& p : parts) {
                if (p.requires_grad())
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < p.cols(); ++j)
                            p.grad()[i * p.cols() + j] += out.grad()[i * n + c0 + j];
                c0 += p.cols();
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, Tape<T>* tape = nullptr) {
    T acc = T(0);
    for (std::size_t i = 0; i < x.numel(); ++i) acc += x.at(i);
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record([x, out]() mutable {
            if (!x.requires_grad()) return;
            for (std::size_t i = 0; i < x.numel(); ++i) x.grad()[i] += out.grad()[0];
        });
    }
    return out;
}

// Mean squared error over all elements.
template <typename T>
Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target, Tape<T>* tape = nullptr) {
    detail::check_same_shape(pred, target, "mse");
    const std::size_t n = pred.numel();
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T d = pred.at(i) - target.at(i);
        acc += d * d;
    }
    Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(n));
    if (detail::track(tape, {&pred, &target})) {
        out.set_requires_grad(true);
        tape->record([pred, target, out]() mutable {
            const std::size_t n = pred.numel();
            const T go = out.grad()[0];
            if (pred.requires_grad())
                for (std::size_t i = 0; i < n; ++i)
                    pred.grad()[i] += go * T(2) * (pred.at(i) - target.at(i)) / static_cast<T>(n);
            if (target.requires_grad())
                for (std::size_t i = 0; i < n; ++i)
                    target.grad()[i] -= go * T(2) * (pred.at(i) - target.at(i)) / static_cast<T>(n);
        });
    }
    return out;
}

}  // namespace cdp::nk
