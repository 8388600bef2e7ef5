#include "cdp/masking.hpp"

#include <stdexcept>
#include <string>

namespace cdp {

void PolicyGeometry::validate() const {
    if (chunk == 0) throw std::invalid_argument("geometry: chunk must be positive");
    if (target_len == 0) throw std::invalid_argument("geometry: target_len must be positive");
    if (history_len % chunk != 0) {
        throw std::invalid_argument("geometry: chunk " + std::to_string(chunk) +
                                    " does not divide history_len " +
                                    std::to_string(history_len));
    }
    if (valid_len != chunk) {
        throw std::invalid_argument("geometry: valid_len " + std::to_string(valid_len) +
                                    " must equal chunk " + std::to_string(chunk) +
                                    " (one chunk executed per AR step)");
    }
    if (valid_len > target_len) {
        throw std::invalid_argument("geometry: valid_len " + std::to_string(valid_len) +
                                    " exceeds target_len " + std::to_string(target_len));
    }
    if (cached_len > history_len) {
        throw std::invalid_argument("geometry: cached_len " + std::to_string(cached_len) +
                                    " exceeds history_len " + std::to_string(history_len));
    }
    if (cached_len % chunk != 0) {
        throw std::invalid_argument("geometry: chunk " + std::to_string(chunk) +
                                    " does not divide cached_len " +
                                    std::to_string(cached_len));
    }
}

bool AttentionMask::all_rows_nonempty() const {
    for (std::size_t r = 0; r < rows_; ++r) {
        bool any = false;
        for (std::size_t c = 0; c < cols_ && !any; ++c) any = visible(r, c);
        if (!any) return false;
    }
    return true;
}

AttentionMask AttentionMask::drop_rows(std::size_t n) const {
    if (n > rows_) throw std::invalid_argument("mask: cannot drop more rows than present");
    AttentionMask out(rows_ - n, cols_);
    for (std::size_t r = n; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c)
            if (visible(r, c)) out.set_visible(r - n, c);
    return out;
}

AttentionMask build_training_mask(const PolicyGeometry& geom) {
    geom.validate();
    const std::size_t L = geom.history_len;
    const std::size_t M = geom.target_len;
    const std::size_t C = geom.chunk;
    AttentionMask mask(L + M, L + M);
    for (std::size_t i = 0; i < L; ++i) {
        const std::size_t chunk_begin = (i / C) * C;
        for (std::size_t j = chunk_begin; j < chunk_begin + C; ++j) mask.set_visible(i, j);
    }
    for (std::size_t i = L; i < L + M; ++i)
        for (std::size_t j = 0; j < L + M; ++j) mask.set_visible(i, j);
    return mask;
}

AttentionMask build_inference_mask(const PolicyGeometry& geom) {
    geom.validate();
    const std::size_t L = geom.history_len;
    const std::size_t M = geom.target_len;
    const std::size_t C = geom.chunk;
    const std::size_t l = geom.cached_len;
    AttentionMask mask(L - l + M, L + M);
    for (std::size_t i = l; i < L; ++i) {
        const std::size_t chunk_begin = (i / C) * C;
        for (std::size_t j = chunk_begin; j < chunk_begin + C; ++j)
            mask.set_visible(i - l, j);
    }
    for (std::size_t i = L; i < L + M; ++i)
        for (std::size_t j = 0; j < L + M; ++j) mask.set_visible(i - l, j);
    return mask;
}

}  // namespace cdp
