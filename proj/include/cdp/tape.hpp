#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "cdp/tensor.hpp"

namespace cdp::nk {

// Reverse-mode gradient tape. Ops append one node per application, in
// execution order, so the sequence is topologically sorted by construction;
// backward() replays the nodes in reverse. One tape per training step,
// single-threaded.
template <typename T>
class Tape {
public:
    void record(std::function<void()> backward_fn) {
        nodes_.push_back(std::move(backward_fn));
    }

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    void backward(Tensor<T>& loss) {
        if (loss.numel() != 1) {
            throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                        loss.shape_string());
        }
        if (!loss.requires_grad()) {
            throw std::invalid_argument("backward: loss does not require grad");
        }
        loss.grad()[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> nodes_;
};

}  // namespace cdp::nk
