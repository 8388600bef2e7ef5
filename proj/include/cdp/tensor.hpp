#pragma once

#include <cstddef>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdp/rng.hpp"

namespace cdp::nk {

// Dense row-major tensor. Value-semantic handle over shared storage: copies
// alias the same buffer, which is what the tape's backward closures rely on.
// Forward results are treated as immutable once created; only parameter
// tensors are updated in place (by the optimizer, between taped steps).
template <typename T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::make_shared<std::vector<T>>(count_(t.shape_), T(0));
        t.set_requires_grad(requires_grad);
        return t;
    }

    static Tensor full(std::vector<std::size_t> shape, T value, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (auto& x : t.values()) x = value;
        return t;
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return full({1}, value, requires_grad);
    }

    static Tensor from(std::vector<std::size_t> shape, std::vector<T> data,
                       bool requires_grad = false) {
        if (count_(shape) != data.size()) {
            throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_string(shape));
        }
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::make_shared<std::vector<T>>(std::move(data));
        t.set_requires_grad(requires_grad);
        return t;
    }

    static Tensor randn(std::vector<std::size_t> shape, Rng& rng, T std = T(1),
                        bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (auto& x : t.values()) x = static_cast<T>(rng.normal()) * std;
        return t;
    }

    bool defined() const { return static_cast<bool>(data_); }
    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_ ? data_->size() : 0; }

    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rows() const { return rank() == 2 ? shape_[0] : (rank() == 1 ? 1 : 0); }
    std::size_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 0); }

    std::vector<T>& values() { return *data_; }
    const std::vector<T>& values() const { return *data_; }
    T* data() { return data_->data(); }
    const T* data() const { return data_->data(); }

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool rg) {
        requires_grad_ = rg;
        if (rg && !grad_) grad_ = std::make_shared<std::vector<T>>(numel(), T(0));
    }

    std::vector<T>& grad() {
        if (!grad_) throw std::logic_error("tensor: grad accessed but not allocated");
        return *grad_;
    }
    const std::vector<T>& grad() const {
        if (!grad_) throw std::logic_error("tensor: grad accessed but not allocated");
        return *grad_;
    }
    bool has_grad() const { return static_cast<bool>(grad_); }
    void zero_grad() {
        if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
    }

    T& at(std::size_t r, std::size_t c) { return (*data_)[r * shape_[1] + c]; }
    const T& at(std::size_t r, std::size_t c) const { return (*data_)[r * shape_[1] + c]; }
    T& at(std::size_t i) { return (*data_)[i]; }
    const T& at(std::size_t i) const { return (*data_)[i]; }

    T item() const {
        if (numel() != 1) {
            throw std::invalid_argument("tensor: item() on non-scalar of shape " +
                                        shape_string(shape_));
        }
        return (*data_)[0];
    }

    // Deep copy (fresh storage, no grad).
    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<T>>(*data_);
        return t;
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(numel());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>((*data_)[i]);
        return Tensor<U>::from(shape_, std::move(out));
    }

    static std::string shape_string(const std::vector<std::size_t>& s) {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
        os << ']';
        return os.str();
    }
    std::string shape_string() const { return shape_string(shape_); }

private:
    static std::size_t count_(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return n;
    }

    std::vector<std::size_t> shape_;
    std::shared_ptr<std::vector<T>> data_;
    std::shared_ptr<std::vector<T>> grad_;
    bool requires_grad_ = false;
};

}  // namespace cdp::nk
