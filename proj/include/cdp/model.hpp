#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdp/masking.hpp"
#include "cdp/ops.hpp"
#include "cdp/rng.hpp"

namespace cdp {

struct ModelConfig {
    std::size_t action_dim = 0;
    std::size_t obs_dim = 0;
    std::size_t d_model = 0;
    std::size_t n_heads = 0;
    std::size_t blocks = 0;  // P
    std::size_t d_ff = 0;
    std::size_t temporal_period = 0;
    std::size_t diffusion_steps = 0;  // T, sizes the timestep table
    PolicyGeometry geom;

    std::size_t head_dim() const { return d_model / n_heads; }

    void validate() const {
        geom.validate();
        if (action_dim == 0 || obs_dim == 0 || d_model == 0 || d_ff == 0)
            throw std::invalid_argument("model: dimensions must be positive");
        if (n_heads == 0 || d_model % n_heads != 0)
            throw std::invalid_argument("model: n_heads " + std::to_string(n_heads) +
                                        " must divide d_model " + std::to_string(d_model));
        if (temporal_period < geom.total_len())
            throw std::invalid_argument("model: temporal_period " +
                                        std::to_string(temporal_period) + " < L+M " +
                                        std::to_string(geom.total_len()));
        if (diffusion_steps < 2)
            throw std::invalid_argument("model: diffusion_steps must be >= 2");
    }
};

template <typename T>
struct ModelParams {
    std::map<std::string, nk::Tensor<T>> named;

    nk::Tensor<T>& at(const std::string& name) {
        auto it = named.find(name);
        if (it == named.end()) throw std::out_of_range("params: no tensor named " + name);
        return it->second;
    }
    const nk::Tensor<T>& at(const std::string& name) const {
        auto it = named.find(name);
        if (it == named.end()) throw std::out_of_range("params: no tensor named " + name);
        return it->second;
    }

    void zero_grads() {
        for (auto& [name, t] : named)
            if (t.requires_grad()) t.zero_grad();
    }

    std::size_t count_scalars() const {
        std::size_t n = 0;
        for (const auto& [name, t] : named) n += t.numel();
        return n;
    }

    template <typename U>
    ModelParams<U> cast() const {
        ModelParams<U> out;
        for (const auto& [name, t] : named) {
            auto c = t.template cast<U>();
            c.set_requires_grad(t.requires_grad());
            out.named.emplace(name, std::move(c));
        }
        return out;
    }
};

// Deterministic parameter layout. Init draws follow this order, and the
// checkpoint writes tensors in this order.
inline std::vector<std::string> param_order(const ModelConfig& cfg) {
    std::vector<std::string> names = {"embed.W", "embed.b",  "enc.W1",  "enc.b1",
                                      "enc.W2",  "enc.b2",   "temporal.table",
                                      "tstep.table", "tstep.W", "tstep.b"};
    for (std::size_t p = 0; p < cfg.blocks; ++p) {
        const std::string b = "block" + std::to_string(p) + ".";
        for (const char* s : {"cta.Wqkv", "cta.bqkv", "cta.Wo", "cta.bo", "vaca.Wq", "vaca.bq",
                              "vaca.Wkv", "vaca.bkv", "vaca.Wo", "vaca.bo", "mlp.W1", "mlp.b1",
                              "mlp.W2", "mlp.b2", "ln1.g", "ln1.b", "ln2.g", "ln2.b", "ln3.g",
                              "ln3.b"})
            names.push_back(b + s);
    }
    names.push_back("head.W");
    names.push_back("head.b");
    return names;
}

namespace detail {

template <typename T>
nk::Tensor<T> sinusoidal_table(std::size_t rows, std::size_t d) {
    nk::Tensor<T> t = nk::Tensor<T>::zeros({rows, d});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j * 2 < d; ++j) {
            const double freq = std::pow(10000.0, -2.0 * static_cast<double>(j) /
                                                      static_cast<double>(d));
            const double a = static_cast<double>(r) * freq;
            t.at(r, 2 * j) = static_cast<T>(std::sin(a));
            if (2 * j + 1 < d) t.at(r, 2 * j + 1) = static_cast<T>(std::cos(a));
        }
    }
    return t;
}

}  // namespace detail

template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t a = cfg.action_dim, o = cfg.obs_dim, d = cfg.d_model, f = cfg.d_ff;
    const T w_std = T(0.02);

    auto weight = [&](std::vector<std::size_t> shape) {
        return nk::Tensor<T>::randn(std::move(shape), rng, w_std, true);
    };
    auto zeros = [&](std::vector<std::size_t> shape) {
        return nk::Tensor<T>::zeros(std::move(shape), true);
    };
    auto ones = [&](std::vector<std::size_t> shape) {
        return nk::Tensor<T>::full(std::move(shape), T(1), true);
    };

    ModelParams<T> p;
    auto put = [&](const std::string& name, nk::Tensor<T> t) {
        p.named.emplace(name, std::move(t));
    };

    put("embed.W", weight({a, d}));
    put("embed.b", zeros({d}));
    put("enc.W1", weight({o, d}));
    put("enc.b1", zeros({d}));
    put("enc.W2", weight({d, d}));
    put("enc.b2", zeros({d}));
    put("temporal.table", weight({cfg.temporal_period, d}));
    // Fixed sinusoidal table; the learned projection below adapts it.
    put("tstep.table", detail::sinusoidal_table<T>(cfg.diffusion_steps, d));
    put("tstep.W", weight({d, d}));
    put("tstep.b", zeros({d}));
    for (std::size_t blk = 0; blk < cfg.blocks; ++blk) {
        const std::string b = "block" + std::to_string(blk) + ".";
        put(b + "cta.Wqkv", weight({d, 3 * d}));
        put(b + "cta.bqkv", zeros({3 * d}));
        put(b + "cta.Wo", weight({d, d}));
        put(b + "cta.bo", zeros({d}));
        put(b + "vaca.Wq", weight({d, d}));
        put(b + "vaca.bq", zeros({d}));
        put(b + "vaca.Wkv", weight({d, 2 * d}));
        put(b + "vaca.bkv", zeros({2 * d}));
        put(b + "vaca.Wo", weight({d, d}));
        put(b + "vaca.bo", zeros({d}));
        put(b + "mlp.W1", weight({d, f}));
        put(b + "mlp.b1", zeros({f}));
        put(b + "mlp.W2", weight({f, d}));
        put(b + "mlp.b2", zeros({d}));
        put(b + "ln1.g", ones({d}));
        put(b + "ln1.b", zeros({d}));
        put(b + "ln2.g", ones({d}));
        put(b + "ln2.b", zeros({d}));
        put(b + "ln3.g", ones({d}));
        put(b + "ln3.b", zeros({d}));
    }
    put("head.W", weight({d, a}));
    put("head.b", zeros({a}));
    return p;
}

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
struct KvPair {
    nk::Tensor<T> k;  // [n, d_model]
    nk::Tensor<T> v;  // [n, d_model]
    std::size_t len() const { return k.defined() ? k.rows() : 0; }
};

template <typename T>
struct CtaOutput {
    nk::Tensor<T> out;
    KvPair<T> self_kv;  // this sub-layer's K/V projections of x, pre head-split
};

// Projected timestep embedding, [1, d_model].
template <typename T>
nk::Tensor<T> timestep_embedding(std::size_t t, const ModelParams<T>& params,
                                 nk::Tape<T>* tape = nullptr) {
    const auto& table = params.at("tstep.table");
    if (t >= table.rows())
        throw std::out_of_range("timestep_embedding: t " + std::to_string(t) + " >= T " +
                                std::to_string(table.rows()));
    auto row = nk::gather_rows(table, {t}, tape);
    return nk::add_rowvec(nk::matmul(row, params.at("tstep.W"), tape), params.at("tstep.b"),
                          tape);
}

// Action embedding plus cyclic temporal embedding for explicit table indices.
template <typename T>
nk::Tensor<T> embed_actions(const nk::Tensor<T>& actions,
                            const std::vector<std::size_t>& temporal_indices,
                            const ModelParams<T>& params, nk::Tape<T>* tape = nullptr) {
    if (actions.rows() != temporal_indices.size())
        throw std::invalid_argument("embed_actions: index count mismatch");
    auto x = nk::add_rowvec(nk::matmul(actions, params.at("embed.W"), tape),
                            params.at("embed.b"), tape);
    auto temporal = nk::gather_rows(params.at("temporal.table"), temporal_indices, tape);
    return nk::add(x, temporal, tape);
}

// Token i of [history ++ targets] gets temporal index (offset + i) mod period.
template <typename T>
nk::Tensor<T> embed_tokens(const nk::Tensor<T>& history, const nk::Tensor<T>& targets,
                           std::size_t offset, const ModelParams<T>& params,
                           const ModelConfig& cfg, nk::Tape<T>* tape = nullptr) {
    if (offset >= cfg.temporal_period)
        throw std::out_of_range("embed_tokens: offset " + std::to_string(offset) +
                                " >= period " + std::to_string(cfg.temporal_period));
    const std::size_t L = history.defined() ? history.rows() : 0;
    nk::Tensor<T> tokens =
        L == 0 ? targets : nk::concat_rows<T>({history, targets}, tape);
    std::vector<std::size_t> idx(tokens.rows());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = (offset + i) % cfg.temporal_period;
    return embed_actions(tokens, idx, params, tape);
}

// Observation encoder: 2-layer MLP mapping each row of [n, obs_dim] to one
// d_model feature token.
template <typename T>
nk::Tensor<T> encode_obs(const nk::Tensor<T>& obs_rows, const ModelParams<T>& params,
                         nk::Tape<T>* tape = nullptr) {
    auto h = nk::gelu(nk::add_rowvec(nk::matmul(obs_rows, params.at("enc.W1"), tape),
                                     params.at("enc.b1"), tape),
                      tape);
    return nk::add_rowvec(nk::matmul(h, params.at("enc.W2"), tape), params.at("enc.b2"), tape);
}

// Causal temporal attention sub-layer (multi-head, additive mask, residual,
// post-norm). prefix_kv, when given, is prepended to this call's own K/V so
// queries can attend to cached history; the mask columns must cover
// prefix + rows. No denoising-timestep dependence anywhere in this sub-layer.
template <typename T>
CtaOutput<T> cta_forward(const nk::Tensor<T>& x, const AttentionMask& mask,
                         const KvPair<T>* prefix_kv, const std::string& block,
                         const ModelParams<T>& params, const ModelConfig& cfg,
                         nk::Tape<T>* tape = nullptr) {
    const std::size_t d = cfg.d_model, dh = cfg.head_dim();
    auto qkv = nk::add_rowvec(nk::matmul(x, params.at(block + "cta.Wqkv"), tape),
                              params.at(block + "cta.bqkv"), tape);
    auto q = nk::slice_cols(qkv, 0, d, tape);
    auto k = nk::slice_cols(qkv, d, d, tape);
    auto v = nk::slice_cols(qkv, 2 * d, d, tape);

    nk::Tensor<T> k_all = k, v_all = v;
    if (prefix_kv && prefix_kv->len() > 0) {
        k_all = nk::concat_rows<T>({prefix_kv->k, k}, tape);
        v_all = nk::concat_rows<T>({prefix_kv->v, v}, tape);
    }
    if (mask.rows() != x.rows() || mask.cols() != k_all.rows()) {
        throw std::invalid_argument(
            "cta_forward: mask [" + std::to_string(mask.rows()) + "x" +
            std::to_string(mask.cols()) + "] does not match queries " + x.shape_string() +
            " over " + std::to_string(k_all.rows()) + " keys");
    }

    const T inv_sqrt_dh = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));
    std::vector<nk::Tensor<T>> heads;
    heads.reserve(cfg.n_heads);
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        auto qh = nk::slice_cols(q, h * dh, dh, tape);
        auto kh = nk::slice_cols(k_all, h * dh, dh, tape);
        auto vh = nk::slice_cols(v_all, h * dh, dh, tape);
        auto scores = nk::scale(nk::matmul(qh, nk::transpose(kh, tape), tape), inv_sqrt_dh, tape);
        auto probs = nk::softmax_masked(scores, mask, tape);
        heads.push_back(nk::matmul(probs, vh, tape));
    }
    auto attn = cfg.n_heads == 1 ? heads[0] : nk::concat_cols(heads, tape);
    auto proj = nk::add_rowvec(nk::matmul(attn, params.at(block + "cta.Wo"), tape),
                               params.at(block + "cta.bo"), tape);
    auto out = nk::layer_norm(nk::add(x, proj, tape), params.at(block + "ln1.g"),
                              params.at(block + "ln1.b"), T(kLayerNormEps), tape);
    return {out, {k, v}};
}

// Visual-action cross attention sub-layer. The denoising-timestep embedding
// joins the residual stream here (queries and residual), which is the only
// place t enters the network. row_t gives the timestep per row: history rows
// always carry t = 0 so their features match what the cache stores, target
// rows carry the current denoising timestep. obs_index maps each row to its
// observation token. With a single observation token per row the attention
// weight over it is identically one, so the value path is gathered directly
// and the query/key projections cannot influence the output.
template <typename T>
nk::Tensor<T> vaca_forward(const nk::Tensor<T>& x, const nk::Tensor<T>& obs_feats,
                           const std::vector<std::size_t>& obs_index,
                           const std::vector<std::size_t>& row_t, const std::string& block,
                           const ModelParams<T>& params, const ModelConfig& cfg,
                           nk::Tape<T>* tape = nullptr) {
    if (obs_index.size() != x.rows() || row_t.size() != x.rows())
        throw std::invalid_argument("vaca_forward: per-row metadata does not match rows");

    // One projected embedding per distinct timestep, then spread to rows.
    std::vector<std::size_t> distinct;
    std::vector<std::size_t> row_map(row_t.size());
    for (std::size_t i = 0; i < row_t.size(); ++i) {
        std::size_t pos = distinct.size();
        for (std::size_t j = 0; j < distinct.size(); ++j)
            if (distinct[j] == row_t[i]) {
                pos = j;
                break;
            }
        if (pos == distinct.size()) distinct.push_back(row_t[i]);
        row_map[i] = pos;
    }
    std::vector<nk::Tensor<T>> embs;
    embs.reserve(distinct.size());
    for (std::size_t t : distinct) embs.push_back(timestep_embedding(t, params, tape));
    auto temb_distinct = distinct.size() == 1 ? embs[0] : nk::concat_rows(embs, tape);
    auto temb_rows = nk::gather_rows(temb_distinct, row_map, tape);
    auto xq = nk::add(x, temb_rows, tape);

    const std::size_t d = cfg.d_model;
    auto kv = nk::add_rowvec(nk::matmul(obs_feats, params.at(block + "vaca.Wkv"), tape),
                             params.at(block + "vaca.bkv"), tape);
    auto v_feats = nk::slice_cols(kv, d, d, tape);
    auto attn = nk::gather_rows(v_feats, obs_index, tape);
    auto proj = nk::add_rowvec(nk::matmul(attn, params.at(block + "vaca.Wo"), tape),
                               params.at(block + "vaca.bo"), tape);
    return nk::layer_norm(nk::add(xq, proj, tape), params.at(block + "ln2.g"),
                          params.at(block + "ln2.b"), T(kLayerNormEps), tape);
}

template <typename T>
nk::Tensor<T> mlp_forward(const nk::Tensor<T>& x, const std::string& block,
                          const ModelParams<T>& params, nk::Tape<T>* tape = nullptr) {
    auto h = nk::gelu(nk::add_rowvec(nk::matmul(x, params.at(block + "mlp.W1"), tape),
                                     params.at(block + "mlp.b1"), tape),
                      tape);
    auto proj = nk::add_rowvec(nk::matmul(h, params.at(block + "mlp.W2"), tape),
                               params.at(block + "mlp.b2"), tape);
    return nk::layer_norm(nk::add(x, proj, tape), params.at(block + "ln3.g"),
                          params.at(block + "ln3.b"), T(kLayerNormEps), tape);
}

// One block: CTA -> VACA -> MLP, each with residual + post-norm. Returns the
// block output and the CTA K/V of this call's rows (what the cache stores).
template <typename T>
struct BlockOutput {
    nk::Tensor<T> out;
    KvPair<T> self_kv;
};

template <typename T>
BlockOutput<T> block_forward(std::size_t block_idx, const nk::Tensor<T>& x,
                             const AttentionMask& mask, const KvPair<T>* prefix_kv,
                             const nk::Tensor<T>& obs_feats,
                             const std::vector<std::size_t>& obs_index,
                             const std::vector<std::size_t>& row_t,
                             const ModelParams<T>& params, const ModelConfig& cfg,
                             nk::Tape<T>* tape = nullptr) {
    const std::string b = "block" + std::to_string(block_idx) + ".";
    auto cta = cta_forward(x, mask, prefix_kv, b, params, cfg, tape);
    auto xs = vaca_forward(cta.out, obs_feats, obs_index, row_t, b, params, cfg, tape);
    auto out = mlp_forward(xs, b, params, tape);
    return {out, cta.self_kv};
}

// Full denoiser forward over [history ++ noisy targets]: predicts the clean
// target actions. History rows run at t = 0; target rows at the given t.
template <typename T>
nk::Tensor<T> forward(const nk::Tensor<T>& history, const nk::Tensor<T>& noisy_targets,
                      const nk::Tensor<T>& obs, std::size_t t, std::size_t offset,
                      const ModelParams<T>& params, const ModelConfig& cfg,
                      nk::Tape<T>* tape = nullptr, const AttentionMask* mask = nullptr) {
    const std::size_t L = cfg.geom.history_len, M = cfg.geom.target_len;
    if (history.defined() && history.rows() != L)
        throw std::invalid_argument("forward: history rows " + history.shape_string() +
                                    " != L " + std::to_string(L));
    if (!history.defined() && L != 0)
        throw std::invalid_argument("forward: missing history for L > 0");
    if (noisy_targets.rows() != M)
        throw std::invalid_argument("forward: target rows " + noisy_targets.shape_string() +
                                    " != M " + std::to_string(M));

    AttentionMask local;
    if (!mask) {
        local = build_training_mask(cfg.geom);
        mask = &local;
    }

    auto x = embed_tokens(history, noisy_targets, offset, params, cfg, tape);
    nk::Tensor<T> obs_rows =
        obs.rank() == 1 ? nk::Tensor<T>::from({1, obs.numel()}, obs.values()) : obs;
    auto obs_feats = encode_obs(obs_rows, params, tape);
    std::vector<std::size_t> obs_index(L + M, 0);
    std::vector<std::size_t> row_t(L + M, 0);
    for (std::size_t i = L; i < L + M; ++i) row_t[i] = t;

    for (std::size_t p = 0; p < cfg.blocks; ++p)
        x = block_forward(p, x, *mask, nullptr, obs_feats, obs_index, row_t, params, cfg, tape)
                .out;

    auto out_feats = nk::slice_rows(x, L, M, tape);
    return nk::add_rowvec(nk::matmul(out_feats, params.at("head.W"), tape), params.at("head.b"),
                          tape);
}

}  // namespace cdp
