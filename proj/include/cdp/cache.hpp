#pragma once

#include <stdexcept>
#include <vector>

#include "cdp/model.hpp"

namespace cdp {

// Per-block key/value store for historical actions. Entries are the final
// (t = 0) features of executed actions; they are shared across every
// denoising timestep of an AR step and across AR steps, and evicted one
// chunk at a time as the history window slides. Memory is bounded by
// blocks * 2 * capacity * d_model scalars regardless of rollout length.
template <typename T>
struct KVCache {
    std::size_t chunk = 0;     // C
    std::size_t capacity = 0;  // L
    std::size_t len = 0;       // l, always a multiple of chunk
    std::vector<nk::Tensor<T>> keys;    // per block, [len, d_model]
    std::vector<nk::Tensor<T>> values;  // per block, [len, d_model]

    std::size_t n_blocks() const { return keys.size(); }

    KvPair<T> block_pair(std::size_t p) const {
        return {keys.at(p), values.at(p)};
    }
};

template <typename T>
KVCache<T> init_cache(const ModelConfig& cfg) {
    KVCache<T> c;
    c.chunk = cfg.geom.chunk;
    c.capacity = cfg.geom.history_len;
    c.keys.resize(cfg.blocks);
    c.values.resize(cfg.blocks);
    return c;
}

// Slide the cache window by one chunk: when full, the oldest chunk's rows are
// dropped before the new chunk's K/V are appended.
template <typename T>
void evict_and_append(KVCache<T>& cache, const std::vector<KvPair<T>>& new_chunk_kv) {
    if (new_chunk_kv.size() != cache.n_blocks())
        throw std::invalid_argument("evict_and_append: expected K/V for " +
                                    std::to_string(cache.n_blocks()) + " blocks, got " +
                                    std::to_string(new_chunk_kv.size()));
    for (const auto& kv : new_chunk_kv) {
        if (kv.k.rows() != cache.chunk || kv.v.rows() != cache.chunk)
            throw std::invalid_argument("evict_and_append: chunk K/V has " +
                                        std::to_string(kv.k.rows()) + " rows, expected chunk " +
                                        std::to_string(cache.chunk));
    }
    const bool evict = cache.len == cache.capacity;
    if (cache.len + cache.chunk > cache.capacity && !evict)
        throw std::logic_error("evict_and_append: cache overflow without eviction");
    const std::size_t keep_from = evict ? cache.chunk : 0;
    for (std::size_t p = 0; p < cache.n_blocks(); ++p) {
        std::vector<nk::Tensor<T>> kparts, vparts;
        if (cache.len > keep_from) {
            kparts.push_back(nk::slice_rows(cache.keys[p], keep_from, cache.len - keep_from));
            vparts.push_back(nk::slice_rows(cache.values[p], keep_from, cache.len - keep_from));
        }
        kparts.push_back(new_chunk_kv[p].k);
        vparts.push_back(new_chunk_kv[p].v);
        cache.keys[p] = nk::concat_rows<T>(kparts);
        cache.values[p] = nk::concat_rows<T>(vparts);
    }
    cache.len = evict ? cache.capacity : cache.len + cache.chunk;
}

// Chunk-restricted self-attention visibility for n whole chunks of history
// tokens, matching the uncached-history rows of the inference mask.
inline AttentionMask history_chunk_mask(std::size_t n_tokens, std::size_t chunk) {
    AttentionMask mask(n_tokens, n_tokens);
    for (std::size_t i = 0; i < n_tokens; ++i) {
        const std::size_t b = (i / chunk) * chunk;
        for (std::size_t j = b; j < b + chunk; ++j) mask.set_visible(i, j);
    }
    return mask;
}

// Per-block K/V for clean history tokens: runs the block stack over whole
// chunks with CTA restricted to each token's own chunk and VACA at t = 0,
// each chunk conditioned on its paired observation. Pure computation; the
// no-cache rollout path calls this at every denoising timestep, the cached
// path calls it once per AR step via extract_uncached_kv.
template <typename T>
std::vector<KvPair<T>> compute_history_kv(const nk::Tensor<T>& actions,
                                          const nk::Tensor<T>& chunk_obs_rows,
                                          const std::vector<std::size_t>& temporal_indices,
                                          const ModelParams<T>& params, const ModelConfig& cfg) {
    const std::size_t C = cfg.geom.chunk;
    const std::size_t n = actions.rows();
    if (n == 0 || n % C != 0)
        throw std::invalid_argument("compute_history_kv: token count " + std::to_string(n) +
                                    " is not a positive multiple of chunk " + std::to_string(C));
    if (chunk_obs_rows.rows() != n / C)
        throw std::invalid_argument("compute_history_kv: expected one observation per chunk");

    const AttentionMask mask = history_chunk_mask(n, C);
    auto x = embed_actions(actions, temporal_indices, params);
    auto obs_feats = encode_obs(chunk_obs_rows, params);
    std::vector<std::size_t> obs_index(n);
    for (std::size_t i = 0; i < n; ++i) obs_index[i] = i / C;
    const std::vector<std::size_t> row_t(n, 0);

    std::vector<KvPair<T>> out;
    out.reserve(cfg.blocks);
    for (std::size_t p = 0; p < cfg.blocks; ++p) {
        auto blk = block_forward(p, x, mask, nullptr, obs_feats, obs_index, row_t, params, cfg);
        out.push_back(blk.self_kv);
        x = blk.out;
    }
    return out;
}

// Extraction step of the cached path: computes K/V for the uncached history
// chunks and appends them chunk by chunk, evicting as the window slides.
template <typename T>
void extract_uncached_kv(KVCache<T>& cache, const nk::Tensor<T>& uncached_actions,
                         const nk::Tensor<T>& chunk_obs_rows,
                         const std::vector<std::size_t>& temporal_indices,
                         const ModelParams<T>& params, const ModelConfig& cfg) {
    auto kv = compute_history_kv(uncached_actions, chunk_obs_rows, temporal_indices, params, cfg);
    const std::size_t n_chunks = uncached_actions.rows() / cfg.geom.chunk;
    for (std::size_t c = 0; c < n_chunks; ++c) {
        std::vector<KvPair<T>> chunk_kv;
        chunk_kv.reserve(cfg.blocks);
        for (std::size_t p = 0; p < cfg.blocks; ++p) {
            chunk_kv.push_back({nk::slice_rows(kv[p].k, c * cfg.geom.chunk, cfg.geom.chunk),
                                nk::slice_rows(kv[p].v, c * cfg.geom.chunk, cfg.geom.chunk)});
        }
        evict_and_append(cache, chunk_kv);
    }
}

template <typename T>
struct QkvTriple {
    nk::Tensor<T> q, k, v;
};

template <typename T>
struct AssembledQkv {
    nk::Tensor<T> q;  // [L-l+M, d_model]
    nk::Tensor<T> k;  // [L+M, d_model]
    nk::Tensor<T> v;  // [L+M, d_model]
};

// Concatenation of the cached, uncached and target representations: K and V
// cover the whole sequence, queries only the rows being computed. The cached
// and uncached parts carry no timestep dependence; only the target part is
// recomputed per denoising step.
template <typename T>
AssembledQkv<T> assemble_qkv(const KVCache<T>& cache, std::size_t block,
                             const QkvTriple<T>* uncached, const QkvTriple<T>& targets) {
    std::vector<nk::Tensor<T>> qs, ks, vs;
    if (cache.len > 0) {
        ks.push_back(cache.keys.at(block));
        vs.push_back(cache.values.at(block));
    }
    if (uncached && uncached->k.defined() && uncached->k.rows() > 0) {
        qs.push_back(uncached->q);
        ks.push_back(uncached->k);
        vs.push_back(uncached->v);
    }
    qs.push_back(targets.q);
    ks.push_back(targets.k);
    vs.push_back(targets.v);
    AssembledQkv<T> out;
    out.q = qs.size() == 1 ? qs[0] : nk::concat_rows(qs);
    out.k = ks.size() == 1 ? ks[0] : nk::concat_rows(ks);
    out.v = vs.size() == 1 ? vs[0] : nk::concat_rows(vs);
    return out;
}

}  // namespace cdp
