#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace cdp {

// Length/chunk bookkeeping for one policy geometry. History of L actions is
// split into L/C chunks; M denoising targets follow, of which the first
// valid_len (== chunk) are executed per AR step. cached_len (l) is the number
// of history actions whose K/V are already cached, inference only.
struct PolicyGeometry {
    std::size_t history_len = 0;  // L
    std::size_t target_len = 0;   // M
    std::size_t valid_len = 0;    // executed prefix, == chunk
    std::size_t chunk = 0;        // C
    std::size_t cached_len = 0;   // l

    std::size_t total_len() const { return history_len + target_len; }
    std::size_t history_chunks() const { return chunk ? history_len / chunk : 0; }

    // Throws std::invalid_argument naming the violated constraint.
    void validate() const;
};

// Dense visibility matrix for causal temporal attention. Entries are
// visible/blocked; softmax_masked treats blocked as an additive -1e9 so the
// exponential underflows to exactly zero.
class AttentionMask {
public:
    AttentionMask() = default;
    AttentionMask(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), visible_(rows * cols, 0) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    bool visible(std::size_t r, std::size_t c) const { return visible_[r * cols_ + c] != 0; }
    void set_visible(std::size_t r, std::size_t c, bool v = true) {
        visible_[r * cols_ + c] = v ? 1 : 0;
    }

    // Every row must keep at least one visible entry or softmax degenerates.
    bool all_rows_nonempty() const;

    // Mask with the first n rows removed (cache-reuse correspondence between
    // the training and inference masks).
    AttentionMask drop_rows(std::size_t n) const;

    bool operator==(const AttentionMask& other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::uint8_t> visible_;
};

// Training mask, (L+M) x (L+M): history row i sees exactly its own chunk;
// every target row sees the whole sequence.
AttentionMask build_training_mask(const PolicyGeometry& geom);

// Inference mask, (L-l+M) x (L+M): rows are the uncached history followed by
// the targets. Uncached history rows see only their own chunk; target rows
// see everything. Equals the training mask with its first l rows dropped.
AttentionMask build_inference_mask(const PolicyGeometry& geom);

}  // namespace cdp
