#pragma once

#include <chrono>
#include <deque>
#include <thread>
#include <vector>

#include "cdp/cache.hpp"
#include "cdp/data.hpp"
#include "cdp/envs.hpp"
#include "cdp/schedule.hpp"

namespace cdp {

struct RolloutTiming {
    std::size_t ar_step = 0;
    double kv_extract_ms = 0.0;
    double denoise_ms = 0.0;
    double env_ms = 0.0;
    std::size_t cache_len = 0;
};

inline std::uint64_t splitmix_combine(std::uint64_t seed, std::uint64_t idx) {
    std::uint64_t s = seed ^ (0x517cc1b727220a95ULL * (idx + 1));
    return splitmix64(s);
}

template <typename T>
struct Policy {
    ModelConfig cfg;
    ModelParams<T> params;
    NoiseSchedule sched;
    NormStats norm;
};

// One rollout session: the history ring of the last L generated actions (with
// the observation each chunk was paired with when it entered history), the
// K/V cache, and the temporal-offset bookkeeping. One session per environment
// instance.
template <typename T>
struct RolloutSession {
    struct ChunkRec {
        nk::Tensor<T> actions;      // [C, action_dim], normalized space
        nk::Tensor<T> obs;          // [1, obs_dim]; set when first seen as history
        std::size_t global_base = 0;
        bool cached = false;
    };

    ModelConfig cfg;
    bool use_cache = true;
    bool stochastic = false;
    KVCache<T> cache;
    std::deque<ChunkRec> history;
    std::size_t ar_step_idx = 0;
    std::size_t offset_base = 0;
    std::size_t next_global = 0;
    Rng noise_rng{0};
    AttentionMask target_mask;
    std::vector<RolloutTiming> timing;
    bool initialized = false;
};

// Cold start: empty cache, history ring seeded with the given actions (most
// recent last) padded on the left with zero actions, which are neutral in the
// normalized action space.
template <typename T>
RolloutSession<T> init_session(const ModelConfig& cfg, bool use_cache, std::uint64_t noise_seed,
                               const nk::Tensor<T>* seed_history = nullptr) {
    cfg.validate();
    const std::size_t L = cfg.geom.history_len, C = cfg.geom.chunk, a = cfg.action_dim;
    RolloutSession<T> s;
    s.cfg = cfg;
    s.use_cache = use_cache;
    s.cache = init_cache<T>(cfg);
    s.noise_rng = Rng(noise_seed, "noise");
    if (seed_history && seed_history->rows() > L)
        throw std::out_of_range("init_session: seed history of " +
                                std::to_string(seed_history->rows()) + " rows exceeds L " +
                                std::to_string(L));
    if (L > 0) {
        nk::Tensor<T> padded = nk::Tensor<T>::zeros({L, a});
        if (seed_history) {
            const std::size_t n = seed_history->rows();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < a; ++j)
                    padded.at(L - n + i, j) = seed_history->at(i, j);
        }
        for (std::size_t c = 0; c < L / C; ++c) {
            typename RolloutSession<T>::ChunkRec rec;
            rec.actions = nk::slice_rows(padded, c * C, C);
            rec.global_base = c * C;
            s.history.push_back(std::move(rec));
        }
    }
    s.next_global = L;
    PolicyGeometry g = cfg.geom;
    g.cached_len = L;
    s.target_mask = build_inference_mask(g);  // M x (L+M), all rows fully visible
    s.initialized = true;
    return s;
}

namespace detail {

inline double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

// Denoiser pass over the M target tokens against fixed per-block history K/V.
template <typename T>
nk::Tensor<T> target_denoise_pass(const nk::Tensor<T>& noisy_targets, std::size_t t,
                                  const std::vector<KvPair<T>>* history_kv,
                                  const nk::Tensor<T>& obs_feats,
                                  const std::vector<std::size_t>& temporal_indices,
                                  const AttentionMask& mask, const ModelParams<T>& params,
                                  const ModelConfig& cfg) {
    auto x = embed_actions(noisy_targets, temporal_indices, params);
    const std::vector<std::size_t> obs_index(cfg.geom.target_len, 0);
    const std::vector<std::size_t> row_t(cfg.geom.target_len, t);
    for (std::size_t p = 0; p < cfg.blocks; ++p) {
        const KvPair<T>* prefix = history_kv ? &(*history_kv)[p] : nullptr;
        x = block_forward(p, x, mask, prefix, obs_feats, obs_index, row_t, params, cfg).out;
    }
    return nk::add_rowvec(nk::matmul(x, params.at("head.W")), params.at("head.b"));
}

}  // namespace detail

// One autoregressive step: pair pending history chunks with the current
// observation, extract/cache their K/V (cached mode), run the full reverse
// schedule over M noise tokens, execute the first C actions and slide the
// window. Without the cache, all history K/V are recomputed at every
// denoising timestep from the same paired observations, which is the
// reference the cached path must match exactly.
template <typename T>
nk::Tensor<T> ar_step(RolloutSession<T>& session, const nk::Tensor<T>& obs,
                      const ModelParams<T>& params, const NoiseSchedule& sched) {
    if (!session.initialized) throw std::logic_error("ar_step: session not initialized");
    const ModelConfig& cfg = session.cfg;
    const std::size_t L = cfg.geom.history_len, M = cfg.geom.target_len, C = cfg.geom.chunk;
    const std::size_t a = cfg.action_dim;
    if (obs.numel() != cfg.obs_dim)
        throw std::invalid_argument("ar_step: observation size " + std::to_string(obs.numel()) +
                                    " != obs_dim " + std::to_string(cfg.obs_dim));
    nk::Tensor<T> obs_row = nk::Tensor<T>::from({1, cfg.obs_dim}, obs.values());

    RolloutTiming timing;
    timing.ar_step = session.ar_step_idx;

    auto t0 = std::chrono::steady_clock::now();
    for (auto& rec : session.history)
        if (!rec.obs.defined()) rec.obs = obs_row;

    if (session.use_cache && L > 0) {
        std::vector<nk::Tensor<T>> act_parts, obs_parts;
        std::vector<std::size_t> indices;
        for (auto& rec : session.history) {
            if (rec.cached) continue;
            act_parts.push_back(rec.actions);
            obs_parts.push_back(rec.obs);
            for (std::size_t j = 0; j < C; ++j)
                indices.push_back((rec.global_base + j) % cfg.temporal_period);
            rec.cached = true;
        }
        if (!act_parts.empty()) {
            auto actions = act_parts.size() == 1 ? act_parts[0] : nk::concat_rows(act_parts);
            auto chunk_obs = obs_parts.size() == 1 ? obs_parts[0] : nk::concat_rows(obs_parts);
            extract_uncached_kv(session.cache, actions, chunk_obs, indices, params, cfg);
        }
    }
    timing.kv_extract_ms = detail::ms_since(t0);

    auto t1 = std::chrono::steady_clock::now();
    nk::Tensor<T> x = nk::Tensor<T>::randn({M, a}, session.noise_rng);
    std::vector<std::size_t> target_indices(M);
    for (std::size_t j = 0; j < M; ++j)
        target_indices[j] = (session.next_global + j) % cfg.temporal_period;
    auto obs_feats = encode_obs(obs_row, params);

    std::vector<KvPair<T>> cached_prefix;
    if (session.use_cache && L > 0)
        for (std::size_t p = 0; p < cfg.blocks; ++p)
            cached_prefix.push_back(session.cache.block_pair(p));

    for (std::size_t step = 0; step < sched.num_steps; ++step) {
        const std::size_t t = sched.num_steps - 1 - step;
        std::vector<KvPair<T>> recomputed;
        const std::vector<KvPair<T>>* prefix = nullptr;
        if (L > 0) {
            if (session.use_cache) {
                prefix = &cached_prefix;
            } else {
                std::vector<nk::Tensor<T>> act_parts, obs_parts;
                std::vector<std::size_t> indices;
                for (const auto& rec : session.history) {
                    act_parts.push_back(rec.actions);
                    obs_parts.push_back(rec.obs);
                    for (std::size_t j = 0; j < C; ++j)
                        indices.push_back((rec.global_base + j) % cfg.temporal_period);
                }
                auto actions = nk::concat_rows(act_parts);
                auto chunk_obs = nk::concat_rows(obs_parts);
                recomputed = compute_history_kv(actions, chunk_obs, indices, params, cfg);
                prefix = &recomputed;
            }
        }
        auto pred = detail::target_denoise_pass(x, t, prefix, obs_feats, target_indices,
                                                session.target_mask, params, cfg);
        if (session.stochastic && t > 0) {
            nk::Tensor<T> step_noise = nk::Tensor<T>::randn({M, a}, session.noise_rng);
            x = denoise_step_x0(x, pred, t, sched, true, &step_noise);
        } else {
            x = denoise_step_x0(x, pred, t, sched, false);
        }
    }
    timing.denoise_ms = detail::ms_since(t1);

    nk::Tensor<T> executed = nk::slice_rows(x, 0, C);
    if (L > 0) {
        session.history.pop_front();
        typename RolloutSession<T>::ChunkRec rec;
        rec.actions = executed;
        rec.global_base = session.next_global;
        session.history.push_back(std::move(rec));
    }
    session.next_global += C;
    session.ar_step_idx += 1;
    timing.cache_len = session.cache.len;
    session.timing.push_back(timing);
    return executed;
}

struct EpisodeRun {
    Episode episode;
    bool success = false;
    std::size_t steps = 0;
    std::vector<RolloutTiming> timing;
};

// Closed-loop evaluation of a policy: observe (possibly degraded), denoise one
// chunk, apply its actions one env tick at a time, stop at success or
// max_steps.
template <typename T>
EpisodeRun run_episode(ToyEnv& env, const Policy<T>& policy, bool use_cache,
                       std::size_t max_steps, const DegradeSpec& degrade, std::uint64_t seed,
                       std::uint64_t episode_idx) {
    auto session =
        init_session<T>(policy.cfg, use_cache, splitmix_combine(seed, episode_idx));
    Rng obs_rng(seed, "degrade", episode_idx);
    EpisodeRun run;
    const std::size_t C = policy.cfg.geom.chunk;
    while (run.steps < max_steps && !env.success()) {
        auto obs_vec = env.observe(degrade, obs_rng);
        std::vector<T> obs_t(obs_vec.begin(), obs_vec.end());
        auto obs = nk::Tensor<T>::from({policy.cfg.obs_dim}, std::move(obs_t));
        auto executed = ar_step(session, obs, policy.params, policy.sched);

        auto t0 = std::chrono::steady_clock::now();
        for (std::size_t c = 0; c < C && run.steps < max_steps; ++c) {
            double raw[2];
            for (std::size_t d = 0; d < 2; ++d)
                raw[d] = policy.norm.denormalize_one(static_cast<double>(executed.at(c, d)), d);
            run.episode.observations.push_back(env.state_obs());
            run.episode.actions.push_back({raw[0], raw[1]});
            env.step(raw);
            run.steps += 1;
            if (env.success()) break;
        }
        session.timing.back().env_ms = detail::ms_since(t0);
    }
    run.success = env.success();
    run.episode.success = run.success;
    run.timing = session.timing;
    return run;
}

struct EvalPoint {
    double noise_scale = 0.0;
    double dropout_prob = 0.0;
    double success_rate = 0.0;
    double mean_steps = 0.0;
};

// N episodes at one degradation level; episodes are independent and split
// across a small worker pool, deterministic per (seed, episode index).
template <typename T>
EvalPoint evaluate(const Policy<T>& policy, Task task, std::size_t episodes,
                   std::size_t max_steps, const DegradeSpec& degrade, std::uint64_t seed,
                   bool use_cache, unsigned n_threads = 2) {
    std::vector<int> success(episodes, 0);
    std::vector<std::size_t> steps(episodes, 0);
    auto worker = [&](std::size_t begin, std::size_t stride) {
        for (std::size_t i = begin; i < episodes; i += stride) {
            ToyEnv env(task);
            Rng reset_rng(seed, "eval_env", i);
            env.reset(reset_rng);
            auto run = run_episode(env, policy, use_cache, max_steps, degrade, seed, i);
            success[i] = run.success ? 1 : 0;
            steps[i] = run.success ? run.steps : max_steps;
        }
    };
    if (n_threads <= 1 || episodes < 2) {
        worker(0, 1);
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < n_threads; ++w)
            pool.emplace_back(worker, w, n_threads);
        for (auto& th : pool) th.join();
    }
    EvalPoint pt;
    pt.noise_scale = degrade.noise_scale;
    pt.dropout_prob = degrade.dropout_prob;
    for (std::size_t i = 0; i < episodes; ++i) {
        pt.success_rate += success[i];
        pt.mean_steps += static_cast<double>(steps[i]);
    }
    pt.success_rate /= static_cast<double>(episodes);
    pt.mean_steps /= static_cast<double>(episodes);
    return pt;
}

// Open-loop driver with synthetic observations; used by the cache benchmark
// and the cache-equivalence checks, where no environment is needed. The
// observation stream depends only on (seed, step), so cached and uncached
// runs see identical inputs.
template <typename T>
std::vector<nk::Tensor<T>> drive_synthetic(RolloutSession<T>& session,
                                           const ModelParams<T>& params,
                                           const NoiseSchedule& sched, std::size_t n_steps,
                                           std::uint64_t obs_seed) {
    std::vector<nk::Tensor<T>> executed;
    executed.reserve(n_steps);
    for (std::size_t k = 0; k < n_steps; ++k) {
        Rng obs_rng(obs_seed, "synthobs", k);
        nk::Tensor<T> obs = nk::Tensor<T>::zeros({session.cfg.obs_dim});
        for (std::size_t i = 0; i < obs.numel(); ++i)
            obs.at(i) = static_cast<T>(obs_rng.uniform());
        executed.push_back(ar_step(session, obs, params, sched));
    }
    return executed;
}

}  // namespace cdp
