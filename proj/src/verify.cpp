#include "cdp/verify.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cdp/cache.hpp"
#include "cdp/checkpoint.hpp"
#include "cdp/config.hpp"
#include "cdp/model.hpp"
#include "cdp/rollout.hpp"
#include "cdp/schedule.hpp"
#include "cdp/training.hpp"

namespace cdp::verify {

nk::Tensor<double> matmul_oracle(const nk::Tensor<double>& a, const nk::Tensor<double>& b) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    nk::Tensor<double> out = nk::Tensor<double>::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            long double acc = 0.0L;
            for (std::size_t kk = 0; kk < k; ++kk)
                acc += static_cast<long double>(a.at(i, kk)) *
                       static_cast<long double>(b.at(kk, j));
            out.at(i, j) = static_cast<double>(acc);
        }
    return out;
}

nk::Tensor<double> softmax_oracle(const nk::Tensor<double>& logits, const AttentionMask& mask) {
    const std::size_t m = logits.rows(), n = logits.cols();
    nk::Tensor<double> out = nk::Tensor<double>::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        long double denom = 0.0L;
        long double mx = -1e400L;
        for (std::size_t j = 0; j < n; ++j)
            if (mask.visible(i, j)) mx = std::max<long double>(mx, logits.at(i, j));
        for (std::size_t j = 0; j < n; ++j)
            if (mask.visible(i, j)) denom += std::exp(static_cast<long double>(logits.at(i, j)) - mx);
        for (std::size_t j = 0; j < n; ++j)
            out.at(i, j) = mask.visible(i, j)
                               ? static_cast<double>(
                                     std::exp(static_cast<long double>(logits.at(i, j)) - mx) /
                                     denom)
                               : 0.0;
    }
    return out;
}

nk::Tensor<double> layer_norm_oracle(const nk::Tensor<double>& x, const nk::Tensor<double>& gain,
                                     const nk::Tensor<double>& bias, double eps) {
    const std::size_t m = x.rows(), n = x.cols();
    nk::Tensor<double> out = nk::Tensor<double>::zeros(x.shape());
    for (std::size_t i = 0; i < m; ++i) {
        long double mean = 0.0L;
        for (std::size_t j = 0; j < n; ++j) mean += x.at(i, j);
        mean /= static_cast<long double>(n);
        long double var = 0.0L;
        for (std::size_t j = 0; j < n; ++j) {
            const long double d = x.at(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<long double>(n);
        const long double inv = 1.0L / std::sqrt(var + static_cast<long double>(eps));
        for (std::size_t j = 0; j < n; ++j)
            out.at(i, j) = static_cast<double>(
                gain.at(j) * ((x.at(i, j) - mean) * inv) + bias.at(j));
    }
    return out;
}

bool training_mask_cell(const PolicyGeometry& g, std::size_t i, std::size_t j) {
    const std::size_t L = g.history_len, C = g.chunk;
    if (i >= L) return true;                       // target rows see everything
    if (j >= L) return false;                      // history never attends to targets
    return i / C == j / C;                         // same chunk
}

bool inference_mask_cell(const PolicyGeometry& g, std::size_t row, std::size_t col) {
    // Row r corresponds to global position l + r for uncached history rows,
    // then the M targets.
    const std::size_t global = g.cached_len + row;
    return training_mask_cell(g, global, col);
}

double cosine_alpha_bar_oracle(std::size_t t, std::size_t T) {
    const long double off = 0.008L;
    const long double half_pi = 1.57079632679489661923L;
    auto f = [&](long double u) {
        const long double c =
            std::cos((u / static_cast<long double>(T) + off) / (1.0L + off) * half_pi);
        return c * c;
    };
    long double prod = 1.0L;
    for (std::size_t s = 0; s <= t; ++s) {
        long double beta = 1.0L - f(static_cast<long double>(s) + 1.0L) /
                                      f(static_cast<long double>(s));
        if (beta > 0.999L) beta = 0.999L;
        prod *= 1.0L - beta;
    }
    return static_cast<double>(prod);
}

namespace {

using Params = ModelParams<double>;

ModelConfig tiny_config(std::size_t L = 4, std::size_t C = 2, std::size_t M = 4) {
    ModelConfig cfg;
    cfg.action_dim = 2;
    cfg.obs_dim = 4;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.blocks = 2;
    cfg.d_ff = 32;
    cfg.geom = {L, M, C, C, 0};
    cfg.temporal_period = 4 * (L + M);
    cfg.diffusion_steps = 5;
    return cfg;
}

// Forward pass instrumented to capture per-block CTA K/V of every row.
struct Capture {
    std::vector<KvPair<double>> kv;
    nk::Tensor<double> pred;
};

Capture capture_forward(const nk::Tensor<double>& history, const nk::Tensor<double>& targets,
                        const nk::Tensor<double>& obs, std::size_t t, std::size_t offset,
                        const Params& params, const ModelConfig& cfg) {
    const std::size_t L = cfg.geom.history_len, M = cfg.geom.target_len;
    const AttentionMask mask = build_training_mask(cfg.geom);
    auto x = embed_tokens(history, targets, offset, params, cfg);
    nk::Tensor<double> obs_rows = nk::Tensor<double>::from({1, obs.numel()}, obs.values());
    auto obs_feats = encode_obs(obs_rows, params);
    std::vector<std::size_t> obs_index(L + M, 0);
    std::vector<std::size_t> row_t(L + M, 0);
    for (std::size_t i = L; i < L + M; ++i) row_t[i] = t;
    Capture cap;
    for (std::size_t p = 0; p < cfg.blocks; ++p) {
        auto blk = block_forward(p, x, mask, nullptr, obs_feats, obs_index, row_t, params, cfg);
        cap.kv.push_back(blk.self_kv);
        x = blk.out;
    }
    auto feats = nk::slice_rows(x, L, M);
    cap.pred = nk::add_rowvec(nk::matmul(feats, params.at("head.W")), params.at("head.b"));
    return cap;
}

bool bitwise_equal(const nk::Tensor<double>& a, const nk::Tensor<double>& b, std::size_t row0,
                   std::size_t row1) {
    for (std::size_t i = row0; i < row1; ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            if (a.at(i, j) != b.at(i, j)) return false;
    return true;
}

double max_abs_diff(const nk::Tensor<double>& a, const nk::Tensor<double>& b) {
    double mx = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        mx = std::max(mx, std::abs(a.at(i) - b.at(i)));
    return mx;
}

PropertyResult check_training_mask(std::uint64_t, bool inject_fault) {
    for (std::size_t L = 0; L <= 12; L += 2) {
        for (std::size_t C = 1; C <= std::max<std::size_t>(L, 1); ++C) {
            if (L % C != 0) continue;
            for (std::size_t M = 1; M <= 6; ++M) {
                PolicyGeometry g{L, M, C, C, 0};
                AttentionMask mask = build_training_mask(g);
                if (inject_fault && L >= 2)
                    mask.set_visible(0, L - 1, !mask.visible(0, L - 1));
                for (std::size_t i = 0; i < L + M; ++i)
                    for (std::size_t j = 0; j < L + M; ++j)
                        if (mask.visible(i, j) != training_mask_cell(g, i, j))
                            return {"mask-training-oracle", false,
                                    "mismatch at L=" + std::to_string(L) + " C=" +
                                        std::to_string(C) + " M=" + std::to_string(M) +
                                        " cell (" + std::to_string(i) + "," +
                                        std::to_string(j) + ")"};
            }
        }
    }
    return {"mask-training-oracle", true, "exhaustive L<=12, M<=6"};
}

PropertyResult check_inference_mask() {
    for (std::size_t L = 0; L <= 12; L += 2)
        for (std::size_t C = 1; C <= std::max<std::size_t>(L, 1); ++C) {
            if (L % C != 0) continue;
            for (std::size_t M = 1; M <= 6; ++M)
                for (std::size_t l = 0; l <= L; l += C) {
                    PolicyGeometry g{L, M, C, C, l};
                    AttentionMask mask = build_inference_mask(g);
                    if (mask.rows() != L - l + M || mask.cols() != L + M)
                        return {"mask-inference-oracle", false, "wrong dimensions"};
                    for (std::size_t i = 0; i < mask.rows(); ++i)
                        for (std::size_t j = 0; j < mask.cols(); ++j)
                            if (mask.visible(i, j) != inference_mask_cell(g, i, j))
                                return {"mask-inference-oracle", false,
                                        "mismatch at L=" + std::to_string(L) + " l=" +
                                            std::to_string(l)};
                    if (!mask.all_rows_nonempty())
                        return {"mask-inference-oracle", false, "empty row"};
                }
        }
    return {"mask-inference-oracle", true, "exhaustive L<=12, M<=6, all l"};
}

PropertyResult check_mask_row_deletion() {
    for (std::size_t L = 0; L <= 12; L += 2)
        for (std::size_t C = 1; C <= std::max<std::size_t>(L, 1); ++C) {
            if (L % C != 0) continue;
            for (std::size_t M = 1; M <= 6; ++M)
                for (std::size_t l = 0; l <= L; l += C) {
                    PolicyGeometry g{L, M, C, C, l};
                    if (!(build_training_mask(g).drop_rows(l) == build_inference_mask(g)))
                        return {"mask-row-deletion", false,
                                "training mask minus first l rows != inference mask at L=" +
                                    std::to_string(L) + " l=" + std::to_string(l)};
                }
        }
    return {"mask-row-deletion", true, "all geometries"};
}

PropertyResult check_matmul(std::uint64_t seed) {
    Rng rng(seed, "matmul");
    for (int it = 0; it < 20; ++it) {
        const std::size_t m = 1 + rng.uniform_index(6), k = 1 + rng.uniform_index(6),
                          n = 1 + rng.uniform_index(6);
        auto a = nk::Tensor<double>::randn({m, k}, rng);
        auto b = nk::Tensor<double>::randn({k, n}, rng);
        if (max_abs_diff(nk::matmul(a, b), matmul_oracle(a, b)) > 1e-10)
            return {"matmul-oracle", false, "exceeds 1e-10"};
    }
    return {"matmul-oracle", true, "20 random instances vs naive triple loop"};
}

PropertyResult check_softmax(std::uint64_t seed) {
    Rng rng(seed, "softmax");
    for (int it = 0; it < 20; ++it) {
        const std::size_t m = 5, n = 5;
        auto logits = nk::Tensor<double>::randn({m, n}, rng);
        AttentionMask mask(m, n);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) mask.set_visible(i, j, rng.uniform() < 0.6);
            mask.set_visible(i, rng.uniform_index(n), true);
        }
        auto got = nk::softmax_masked(logits, mask);
        if (max_abs_diff(got, softmax_oracle(logits, mask)) > 1e-10)
            return {"softmax-oracle", false, "exceeds 1e-10"};
        for (std::size_t i = 0; i < m; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (!mask.visible(i, j) && got.at(i, j) != 0.0)
                    return {"softmax-oracle", false, "blocked entry not exactly zero"};
                row += got.at(i, j);
            }
            if (std::abs(row - 1.0) > 1e-12)
                return {"softmax-oracle", false, "row does not sum to 1"};
        }
    }
    return {"softmax-oracle", true, "20 random masked instances"};
}

PropertyResult check_layer_norm(std::uint64_t seed) {
    Rng rng(seed, "layernorm");
    for (int it = 0; it < 20; ++it) {
        auto x = nk::Tensor<double>::randn({4, 8}, rng, 3.0);
        auto g = nk::Tensor<double>::randn({8}, rng);
        auto b = nk::Tensor<double>::randn({8}, rng);
        if (max_abs_diff(nk::layer_norm(x, g, b, 1e-5), layer_norm_oracle(x, g, b, 1e-5)) >
            1e-10)
            return {"layernorm-oracle", false, "exceeds 1e-10"};
        // Pre-affine normalization: mean 0 +- 1e-6, variance 1 +- 1e-4.
        auto ones = nk::Tensor<double>::full({8}, 1.0);
        auto zeros = nk::Tensor<double>::zeros({8});
        auto xh = nk::layer_norm(x, ones, zeros, 1e-8);
        for (std::size_t i = 0; i < 4; ++i) {
            double mean = 0.0, var = 0.0;
            for (std::size_t j = 0; j < 8; ++j) mean += xh.at(i, j);
            mean /= 8.0;
            for (std::size_t j = 0; j < 8; ++j) var += (xh.at(i, j) - mean) * (xh.at(i, j) - mean);
            var /= 8.0;
            if (std::abs(mean) > 1e-6 || std::abs(var - 1.0) > 1e-4)
                return {"layernorm-oracle", false, "pre-affine moments off"};
        }
    }
    return {"layernorm-oracle", true, "20 random instances, extended-precision oracle"};
}

PropertyResult check_gradients(std::uint64_t seed) {
    ModelConfig cfg = tiny_config();
    Rng rng(seed, "gradcheck");
    auto params = init_params<double>(cfg, rng);
    auto history = nk::Tensor<double>::randn({cfg.geom.history_len, cfg.action_dim}, rng);
    auto targets = nk::Tensor<double>::randn({cfg.geom.target_len, cfg.action_dim}, rng);
    auto obs = nk::Tensor<double>::randn({cfg.obs_dim}, rng);
    const std::size_t t = 2, offset = 3;

    auto loss_value = [&]() {
        auto pred = forward(history, targets, obs, t, offset, params, cfg);
        double acc = 0.0;
        for (std::size_t i = 0; i < pred.numel(); ++i) acc += pred.at(i) * pred.at(i);
        return 0.5 * acc;
    };

    nk::Tape<double> tape;
    params.zero_grads();
    auto pred = forward(history, targets, obs, t, offset, params, cfg, &tape);
    auto half = nk::scale(nk::sum(nk::mul(pred, pred, &tape), &tape), 0.5, &tape);
    tape.backward(half);

    std::size_t checked = 0;
    for (const auto& name : param_order(cfg)) {
        auto& p = params.at(name);
        if (!p.requires_grad()) continue;
        for (int rep = 0; rep < 3; ++rep) {
            const std::size_t i = rng.uniform_index(p.numel());
            const double numeric = central_difference(loss_value, p, i);
            const double analytic = p.grad()[i];
            if (!gradients_match(analytic, numeric))
                return {"gradient-finite-difference", false,
                        name + "[" + std::to_string(i) + "]: analytic " +
                            std::to_string(analytic) + " vs numeric " +
                            std::to_string(numeric)};
            ++checked;
        }
    }
    return {"gradient-finite-difference", true,
            std::to_string(checked) + " sampled parameters, tiny model"};
}

PropertyResult check_schedule_invariants() {
    auto lin = make_schedule(2, ScheduleKind::linear, 0.1, 0.2);
    if (std::abs(lin.betas[0] - 0.1) > 1e-15 || std::abs(lin.betas[1] - 0.2) > 1e-15 ||
        std::abs(lin.alpha_bars[0] - 0.9) > 1e-15 || std::abs(lin.alpha_bars[1] - 0.72) > 1e-15)
        return {"schedule-invariants", false, "T=2 linear example wrong"};
    for (auto kind : {ScheduleKind::linear, ScheduleKind::cosine}) {
        auto s = make_schedule(64, kind, 1e-4, 0.02);
        double prod = 1.0;
        for (std::size_t t = 0; t < s.num_steps; ++t) {
            prod *= s.alphas[t];
            if (std::abs(prod - s.alpha_bars[t]) > 1e-12)
                return {"schedule-invariants", false, "alpha_bar product identity broken"};
            if (t > 0 && s.alpha_bars[t] >= s.alpha_bars[t - 1])
                return {"schedule-invariants", false, "alpha_bars not strictly decreasing"};
        }
    }
    return {"schedule-invariants", true, "product identity and monotonicity"};
}

PropertyResult check_cosine_oracle() {
    auto s = make_schedule(100, ScheduleKind::cosine, 1e-4, 0.02);
    for (std::size_t t = 0; t + 1 < 100; ++t)
        if (std::abs(s.alpha_bars[t] - cosine_alpha_bar_oracle(t, 100)) > 1e-10)
            return {"schedule-cosine-oracle", false, "t=" + std::to_string(t)};
    return {"schedule-cosine-oracle", true, "closed form within 1e-10 (pre-clip steps)"};
}

PropertyResult check_schedule_roundtrip(std::uint64_t seed) {
    Rng rng(seed, "roundtrip");
    auto sched = make_schedule(50, ScheduleKind::cosine, 1e-4, 0.02);
    auto x0 = nk::Tensor<double>::randn({6, 2}, rng);
    auto n = nk::Tensor<double>::randn({6, 2}, rng);
    auto x = q_sample(x0, sched.num_steps - 1, n, sched);
    for (std::size_t step = 0; step < sched.num_steps; ++step)
        x = denoise_step_x0(x, x0, sched.num_steps - 1 - step, sched, false);
    if (max_abs_diff(x, x0) > 1e-6)
        return {"schedule-roundtrip", false, "perfect-oracle reverse chain misses x0"};
    return {"schedule-roundtrip", true, "perfect x0 predictor recovers x0 within 1e-6"};
}

PropertyResult check_qsample_linearity(std::uint64_t seed) {
    Rng rng(seed, "qlin");
    auto sched = make_schedule(10, ScheduleKind::linear, 0.01, 0.2);
    auto x = nk::Tensor<double>::randn({3, 2}, rng);
    auto y = nk::Tensor<double>::randn({3, 2}, rng);
    auto n = nk::Tensor<double>::randn({3, 2}, rng);
    auto m = nk::Tensor<double>::randn({3, 2}, rng);
    for (std::size_t t : {std::size_t(0), std::size_t(4), std::size_t(9)}) {
        auto lhs = q_sample(nk::add(x, y), t, nk::add(n, m), sched);
        auto rhs = nk::add(q_sample(x, t, n, sched), q_sample(y, t, m, sched));
        if (max_abs_diff(lhs, rhs) > 1e-12)
            return {"qsample-linearity", false, "not linear at t=" + std::to_string(t)};
    }
    return {"qsample-linearity", true, "additive in x0 and noise"};
}

PropertyResult check_kv_time_invariance(std::uint64_t seed) {
    ModelConfig cfg = tiny_config();
    Rng rng(seed, "kvtime");
    auto params = init_params<double>(cfg, rng);
    auto history = nk::Tensor<double>::randn({cfg.geom.history_len, cfg.action_dim}, rng);
    auto targets = nk::Tensor<double>::randn({cfg.geom.target_len, cfg.action_dim}, rng);
    auto obs = nk::Tensor<double>::randn({cfg.obs_dim}, rng);
    auto a = capture_forward(history, targets, obs, 0, 1, params, cfg);
    auto b = capture_forward(history, targets, obs, cfg.diffusion_steps - 1, 1, params, cfg);
    for (std::size_t p = 0; p < cfg.blocks; ++p) {
        if (!bitwise_equal(a.kv[p].k, b.kv[p].k, 0, cfg.geom.history_len) ||
            !bitwise_equal(a.kv[p].v, b.kv[p].v, 0, cfg.geom.history_len))
            return {"kv-timestep-invariance", false, "block " + std::to_string(p)};
    }
    return {"kv-timestep-invariance", true, "history K/V bit-identical across timesteps"};
}

PropertyResult check_causality(std::uint64_t seed) {
    ModelConfig cfg = tiny_config();
    Rng rng(seed, "causality");
    auto params = init_params<double>(cfg, rng);
    auto history = nk::Tensor<double>::randn({cfg.geom.history_len, cfg.action_dim}, rng);
    auto t1 = nk::Tensor<double>::randn({cfg.geom.target_len, cfg.action_dim}, rng);
    auto t2 = nk::Tensor<double>::randn({cfg.geom.target_len, cfg.action_dim}, rng);
    auto obs = nk::Tensor<double>::randn({cfg.obs_dim}, rng);
    auto a = capture_forward(history, t1, obs, 1, 0, params, cfg);
    auto b = capture_forward(history, t2, obs, 1, 0, params, cfg);
    for (std::size_t p = 0; p < cfg.blocks; ++p)
        if (!bitwise_equal(a.kv[p].k, b.kv[p].k, 0, cfg.geom.history_len) ||
            !bitwise_equal(a.kv[p].v, b.kv[p].v, 0, cfg.geom.history_len))
            return {"causality-target-independence", false,
                    "history features changed with targets at block " + std::to_string(p)};
    return {"causality-target-independence", true,
            "perturbing targets never changes history activations"};
}

PropertyResult check_chunk_isolation(std::uint64_t seed) {
    ModelConfig cfg = tiny_config(6, 2, 4);
    Rng rng(seed, "chunkiso");
    auto params = init_params<double>(cfg, rng);
    auto h1 = nk::Tensor<double>::randn({cfg.geom.history_len, cfg.action_dim}, rng);
    auto h2 = h1.clone();
    // Perturb chunk 1 (rows 2..3) only.
    h2.at(2, 0) += 0.5;
    h2.at(3, 1) -= 0.25;
    auto targets = nk::Tensor<double>::randn({cfg.geom.target_len, cfg.action_dim}, rng);
    auto obs = nk::Tensor<double>::randn({cfg.obs_dim}, rng);
    auto a = capture_forward(h1, targets, obs, 1, 0, params, cfg);
    auto b = capture_forward(h2, targets, obs, 1, 0, params, cfg);
    for (std::size_t p = 0; p < cfg.blocks; ++p) {
        const bool chunk0_same = bitwise_equal(a.kv[p].k, b.kv[p].k, 0, 2) &&
                                 bitwise_equal(a.kv[p].v, b.kv[p].v, 0, 2);
        const bool chunk2_same = bitwise_equal(a.kv[p].k, b.kv[p].k, 4, 6) &&
                                 bitwise_equal(a.kv[p].v, b.kv[p].v, 4, 6);
        if (!chunk0_same || !chunk2_same)
            return {"chunk-isolation", false, "cross-chunk leak at block " + std::to_string(p)};
    }
    return {"chunk-isolation", true, "perturbing one chunk leaves the others untouched"};
}

PropertyResult check_cache_equivalence(std::uint64_t seed) {
    for (std::size_t variant = 0; variant < 3; ++variant) {
        const std::size_t C = variant == 0 ? 2 : 4;
        const std::size_t L = variant == 2 ? 8 : 4;
        ModelConfig cfg = tiny_config(L, C, 4);
        Rng rng(seed, "cacheeq", variant);
        auto params = init_params<double>(cfg, rng);
        auto sched = make_schedule(cfg.diffusion_steps, ScheduleKind::cosine, 1e-4, 0.02);
        auto s_on = init_session<double>(cfg, true, seed + variant);
        auto s_off = init_session<double>(cfg, false, seed + variant);
        auto on = drive_synthetic(s_on, params, sched, 12, seed);
        auto off = drive_synthetic(s_off, params, sched, 12, seed);
        for (std::size_t k = 0; k < on.size(); ++k)
            if (max_abs_diff(on[k], off[k]) > 1e-6)
                return {"cache-equivalence", false,
                        "cached and recomputed rollouts diverge at AR step " +
                            std::to_string(k)};
    }
    return {"cache-equivalence", true, "3 geometries x 12 AR steps, cached == recomputed"};
}

PropertyResult check_checkpoint_roundtrip(std::uint64_t seed) {
    ModelConfig cfg = tiny_config();
    Rng rng(seed, "ckpt");
    auto params64 = init_params<double>(cfg, rng);
    auto params32 = params64.cast<float>();
    RunConfig rc;
    rc.history_len = cfg.geom.history_len;
    rc.target_len = cfg.geom.target_len;
    rc.valid_len = cfg.geom.valid_len;
    rc.chunk = cfg.geom.chunk;
    rc.d_model = cfg.d_model;
    rc.n_heads = cfg.n_heads;
    rc.blocks = cfg.blocks;
    rc.d_ff = cfg.d_ff;
    rc.temporal_period = cfg.temporal_period;
    rc.steps = cfg.diffusion_steps;
    NormStats norm = NormStats::identity(cfg.action_dim);

    namespace fs = std::filesystem;
    const auto p1 = fs::temp_directory_path() / "cdp_verify_a.ckpt";
    const auto p2 = fs::temp_directory_path() / "cdp_verify_b.ckpt";
    save_checkpoint(p1.string(), canonical_json(rc), norm, params32, param_order(cfg));
    auto loaded = load_checkpoint(p1.string());
    save_checkpoint(p2.string(), loaded.config_json, loaded.norm, loaded.params,
                    param_order(cfg));
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    fs::remove(p1);
    fs::remove(p2);
    if (b1 != b2) return {"checkpoint-roundtrip", false, "save-load-save not byte-identical"};
    for (const auto& name : param_order(cfg)) {
        const auto& a = params32.at(name);
        const auto& b = loaded.params.at(name);
        for (std::size_t i = 0; i < a.numel(); ++i)
            if (a.at(i) != b.at(i))
                return {"checkpoint-roundtrip", false, "tensor " + name + " not bit-exact"};
    }
    return {"checkpoint-roundtrip", true, "byte-identical files, bit-exact tensors"};
}

}  // namespace

std::vector<PropertyResult> run_property_suite(const VerifyOptions& opts) {
    std::vector<PropertyResult> results;
    results.push_back(check_training_mask(opts.seed, opts.inject_mask_fault));
    results.push_back(check_inference_mask());
    results.push_back(check_mask_row_deletion());
    results.push_back(check_matmul(opts.seed));
    results.push_back(check_softmax(opts.seed));
    results.push_back(check_layer_norm(opts.seed));
    results.push_back(check_gradients(opts.seed));
    results.push_back(check_schedule_invariants());
    results.push_back(check_cosine_oracle());
    results.push_back(check_schedule_roundtrip(opts.seed));
    results.push_back(check_qsample_linearity(opts.seed));
    results.push_back(check_kv_time_invariance(opts.seed));
    results.push_back(check_causality(opts.seed));
    results.push_back(check_chunk_isolation(opts.seed));
    results.push_back(check_cache_equivalence(opts.seed));
    results.push_back(check_checkpoint_roundtrip(opts.seed));
    return results;
}

}  // namespace cdp::verify
