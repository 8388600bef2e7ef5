// Command-line surface: demo generation, training, evaluation, the cache
// benchmark and the runtime verification suite. Every command prints its
// resolved configuration on startup and is deterministic given --seed.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cdp/checkpoint.hpp"
#include "cdp/config.hpp"
#include "cdp/envs.hpp"
#include "cdp/rollout.hpp"
#include "cdp/training.hpp"
#include "cdp/verify.hpp"

namespace {

using namespace cdp;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

void print_resolved(const RunConfig& cfg) {
    std::cout << "config: " << canonical_json(cfg) << "\n";
}

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "epoch,loss,val_loss\n";
    for (const auto& r : rows)
        out << r.epoch << "," << std::setprecision(10) << r.loss << "," << r.val_loss << "\n";
}

int cmd_gen_demos(const std::string& task, std::size_t n, std::uint64_t seed,
                  const std::string& out_path) {
    auto episodes = gen_demos(task_from_string(task), n, seed);
    save_episodes_jsonl(out_path, episodes);
    std::cout << "wrote " << episodes.size() << " episodes to " << out_path << "\n";
    return kExitOk;
}

int cmd_train(RunConfig cfg, const std::string& demos_path, const std::string& ckpt_path,
              const std::string& metrics_path, const std::string& resume_path) {
    cfg.validate();
    print_resolved(cfg);
    auto dataset = load_episodes_jsonl(demos_path);
    const ModelConfig mcfg = cfg.model_config();
    const NoiseSchedule sched = cfg.schedule();

    ModelParams<float> resume;
    const ModelParams<float>* resume_ptr = nullptr;
    if (!resume_path.empty()) {
        auto ckpt = load_checkpoint(resume_path);
        if (ckpt.config_json != canonical_json(cfg))
            throw std::invalid_argument(
                "resume: checkpoint config does not match the requested config");
        resume = std::move(ckpt.params);
        resume_ptr = &resume;
    }

    auto result = train<float>(dataset, cfg.train_config(), mcfg, sched, resume_ptr);
    save_checkpoint(ckpt_path, canonical_json(cfg), result.norm, result.params,
                    param_order(mcfg));
    if (!metrics_path.empty()) write_metrics_csv(metrics_path, result.metrics);
    const auto& m = result.metrics;
    std::cout << "trained " << m.size() << " epochs, loss " << m.front().loss << " -> "
              << m.back().loss << "\n";
    std::cout << "checkpoint: " << ckpt_path << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, std::vector<double> noise_levels,
             std::size_t episodes, std::size_t max_steps, double dropout_prob,
             std::uint64_t seed, bool use_cache, const std::string& out_path,
             unsigned n_threads) {
    auto ckpt = load_checkpoint(ckpt_path);
    RunConfig cfg = parse_run_config(ckpt.config_json);
    cfg.episodes = episodes ? episodes : cfg.episodes;
    cfg.max_steps = max_steps ? max_steps : cfg.max_steps;
    cfg.seed = seed;
    cfg.use_cache = use_cache;
    print_resolved(cfg);

    Policy<float> policy{cfg.model_config(), std::move(ckpt.params), cfg.schedule(), ckpt.norm};
    if (noise_levels.empty()) noise_levels.push_back(cfg.noise_scale);

    nlohmann::json results = nlohmann::json::array();
    for (double noise : noise_levels) {
        DegradeSpec spec{noise, dropout_prob};
        auto pt = evaluate(policy, cfg.task_enum(), cfg.episodes, cfg.max_steps, spec, seed,
                           use_cache, n_threads);
        std::cout << "noise " << noise << ": success_rate " << pt.success_rate
                  << ", mean_steps " << pt.mean_steps << "\n";
        results.push_back({{"noise_scale", noise},
                           {"dropout_prob", dropout_prob},
                           {"success_rate", pt.success_rate},
                           {"mean_steps", pt.mean_steps}});
    }
    nlohmann::json doc{{"task", cfg.task},
                       {"episodes", cfg.episodes},
                       {"seed", seed},
                       {"use_cache", use_cache},
                       {"results", results}};
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        out << doc.dump(2) << "\n";
    } else {
        std::cout << doc.dump(2) << "\n";
    }
    return kExitOk;
}

int cmd_bench_cache(const std::string& ckpt_path, bool random_weights,
                    std::vector<std::size_t> sweep, std::size_t ar_steps, std::uint64_t seed,
                    const std::string& out_path, RunConfig cfg) {
    if (sweep.empty()) sweep = {8, 16, 32, 64};
    std::ostringstream csv;
    csv << "L,cached_ms,uncached_ms,speedup\n";
    for (std::size_t L : sweep) {
        cfg.history_len = L;
        cfg.temporal_period = 0;  // re-resolve against L
        cfg.validate();
        ModelConfig mcfg = cfg.model_config();
        NoiseSchedule sched = cfg.schedule();

        ModelParams<float> params;
        if (random_weights || ckpt_path.empty()) {
            Rng init_rng(seed, "init", L);
            params = init_params<float>(mcfg, init_rng);
        } else {
            auto ckpt = load_checkpoint(ckpt_path);
            RunConfig stored = parse_run_config(ckpt.config_json);
            if (stored.history_len != L)
                throw std::invalid_argument(
                    "bench-cache: checkpoint geometry fixes L; use --random-weights for sweeps");
            params = std::move(ckpt.params);
        }

        const std::size_t warmup = mcfg.geom.history_chunks() + 2;
        double total[2] = {0.0, 0.0};
        nk::Tensor<float> spot[2];
        for (int mode = 0; mode < 2; ++mode) {
            const bool use_cache = mode == 0;
            auto session = init_session<float>(mcfg, use_cache, seed);
            auto executed = drive_synthetic(session, params, sched, warmup + ar_steps, seed);
            spot[mode] = executed.back();
            for (std::size_t k = warmup; k < session.timing.size(); ++k)
                total[mode] += session.timing[k].kv_extract_ms + session.timing[k].denoise_ms;
        }
        // Equivalence spot check while benching: both modes must agree.
        double max_diff = 0.0;
        for (std::size_t i = 0; i < spot[0].numel(); ++i)
            max_diff = std::max(max_diff,
                                std::abs(static_cast<double>(spot[0].at(i) - spot[1].at(i))));
        if (max_diff > 1e-6)
            throw std::runtime_error("bench-cache: cached/uncached outputs diverged (" +
                                     std::to_string(max_diff) + ")");

        const double cached_ms = total[0] / static_cast<double>(ar_steps);
        const double uncached_ms = total[1] / static_cast<double>(ar_steps);
        csv << L << "," << cached_ms << "," << uncached_ms << ","
            << uncached_ms / cached_ms << "\n";
        std::cout << "L=" << L << ": cached " << cached_ms << " ms, uncached " << uncached_ms
                  << " ms, speedup " << uncached_ms / cached_ms << "\n";
    }
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        out << csv.str();
    } else {
        std::cout << csv.str();
    }
    return kExitOk;
}

int cmd_verify(std::uint64_t seed, bool inject_mask_fault) {
    verify::VerifyOptions opts;
    opts.seed = seed;
    opts.inject_mask_fault = inject_mask_fault;
    auto results = verify::run_property_suite(opts);
    bool all_pass = true;
    for (const auto& r : results) {
        std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.name << "  (" << r.detail << ")\n";
        all_pass = all_pass && r.pass;
    }
    std::cout << (all_pass ? "all properties passed" : "some properties FAILED") << " ("
              << results.size() << " checked)\n";
    return all_pass ? kExitOk : kExitFailure;
}

// Config flags bind to a RunConfig; when a --config file is also given, only
// flags the user actually passed override the file values.
struct ConfigFlags {
    std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&, const RunConfig&)>>>
        overrides;

    RunConfig resolve(const RunConfig& from_flags, const std::string& config_path) const {
        if (config_path.empty()) return from_flags;
        RunConfig cfg = load_run_config(config_path);
        for (const auto& [opt, copy] : overrides)
            if (opt->count() > 0) copy(cfg, from_flags);
        return cfg;
    }
};

ConfigFlags add_config_flags(CLI::App* cmd, RunConfig& cfg, std::string& config_path) {
    ConfigFlags fs;
    cmd->add_option("--config", config_path, "JSON config file (flags override file values)");
    auto reg = [&fs](CLI::Option* o, std::function<void(RunConfig&, const RunConfig&)> copy) {
        fs.overrides.emplace_back(o, std::move(copy));
    };
    reg(cmd->add_option("--task", cfg.task, "reach2d|pusht_lite"),
        [](RunConfig& d, const RunConfig& s) { d.task = s.task; });
    reg(cmd->add_option("--history-len", cfg.history_len, "L"),
        [](RunConfig& d, const RunConfig& s) { d.history_len = s.history_len; });
    reg(cmd->add_option("--target-len", cfg.target_len, "M"),
        [](RunConfig& d, const RunConfig& s) { d.target_len = s.target_len; });
    reg(cmd->add_option("--valid-len", cfg.valid_len, "executed prefix (== chunk)"),
        [](RunConfig& d, const RunConfig& s) { d.valid_len = s.valid_len; });
    reg(cmd->add_option("--chunk", cfg.chunk, "chunk size C"),
        [](RunConfig& d, const RunConfig& s) { d.chunk = s.chunk; });
    reg(cmd->add_option("--d-model", cfg.d_model),
        [](RunConfig& d, const RunConfig& s) { d.d_model = s.d_model; });
    reg(cmd->add_option("--n-heads", cfg.n_heads),
        [](RunConfig& d, const RunConfig& s) { d.n_heads = s.n_heads; });
    reg(cmd->add_option("--blocks", cfg.blocks),
        [](RunConfig& d, const RunConfig& s) { d.blocks = s.blocks; });
    reg(cmd->add_option("--d-ff", cfg.d_ff),
        [](RunConfig& d, const RunConfig& s) { d.d_ff = s.d_ff; });
    reg(cmd->add_option("--temporal-period", cfg.temporal_period, "0 = 4*(L+M)"),
        [](RunConfig& d, const RunConfig& s) { d.temporal_period = s.temporal_period; });
    reg(cmd->add_option("--steps", cfg.steps, "diffusion steps T"),
        [](RunConfig& d, const RunConfig& s) { d.steps = s.steps; });
    reg(cmd->add_option("--schedule", cfg.kind, "linear|cosine"),
        [](RunConfig& d, const RunConfig& s) { d.kind = s.kind; });
    reg(cmd->add_option("--sigma", cfg.sigma, "history perturbation std"),
        [](RunConfig& d, const RunConfig& s) { d.sigma = s.sigma; });
    reg(cmd->add_option("--batch-size", cfg.batch_size),
        [](RunConfig& d, const RunConfig& s) { d.batch_size = s.batch_size; });
    reg(cmd->add_option("--epochs", cfg.epochs),
        [](RunConfig& d, const RunConfig& s) { d.epochs = s.epochs; });
    reg(cmd->add_option("--lr", cfg.learning_rate),
        [](RunConfig& d, const RunConfig& s) { d.learning_rate = s.learning_rate; });
    reg(cmd->add_option("--seed", cfg.seed),
        [](RunConfig& d, const RunConfig& s) { d.seed = s.seed; });
    return fs;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Causal diffusion policy on toy 2D control tasks"};
    app.require_subcommand(1);

    // gen-demos
    auto* gen = app.add_subcommand("gen-demos", "generate scripted-expert demonstrations");
    std::string gen_task = "reach2d", gen_out = "demos.jsonl";
    std::size_t gen_n = 200;
    std::uint64_t gen_seed = 0;
    gen->add_option("--task", gen_task, "reach2d|pusht_lite");
    gen->add_option("--n", gen_n, "number of episodes")->check(CLI::PositiveNumber);
    gen->add_option("--seed", gen_seed);
    gen->add_option("--out", gen_out);

    // train
    auto* tr = app.add_subcommand("train", "train a policy on recorded demos");
    RunConfig tr_cfg;
    std::string tr_config_path, tr_demos = "demos.jsonl", tr_ckpt = "policy.ckpt";
    std::string tr_metrics = "metrics.csv", tr_resume;
    ConfigFlags tr_flags = add_config_flags(tr, tr_cfg, tr_config_path);
    tr->add_option("--demos", tr_demos, "episode JSONL file");
    tr->add_option("--out", tr_ckpt, "checkpoint output path");
    tr->add_option("--metrics", tr_metrics, "metrics CSV path");
    tr->add_option("--resume", tr_resume, "checkpoint to resume from");

    // eval
    auto* ev = app.add_subcommand("eval", "closed-loop evaluation of a checkpoint");
    std::string ev_ckpt = "policy.ckpt", ev_out;
    std::vector<double> ev_noise;
    std::size_t ev_episodes = 0, ev_max_steps = 0;
    double ev_dropout = 0.0;
    std::uint64_t ev_seed = 0;
    bool ev_no_cache = false;
    unsigned ev_threads = 2;
    ev->add_option("--ckpt", ev_ckpt);
    ev->add_option("--noise", ev_noise, "observation noise scale (repeatable)");
    ev->add_option("--dropout", ev_dropout, "observation dropout probability");
    ev->add_option("--episodes", ev_episodes);
    ev->add_option("--max-steps", ev_max_steps);
    ev->add_option("--seed", ev_seed);
    ev->add_flag("--no-cache", ev_no_cache, "disable KV-cache sharing");
    ev->add_option("--threads", ev_threads);
    ev->add_option("--out", ev_out, "results JSON path (stdout if omitted)");

    // bench-cache
    auto* bench = app.add_subcommand("bench-cache", "per-AR-step latency, cache on vs off");
    RunConfig bench_cfg;
    bench_cfg.target_len = 12;
    bench_cfg.valid_len = 8;
    bench_cfg.chunk = 8;
    bench_cfg.d_model = 128;
    bench_cfg.n_heads = 8;
    bench_cfg.blocks = 4;
    bench_cfg.d_ff = 512;
    bench_cfg.steps = 50;
    bench_cfg.task = "pusht_lite";
    std::string bench_ckpt, bench_out = "bench.csv", bench_config_path;
    bool bench_random = false;
    std::vector<std::size_t> bench_sweep;
    std::size_t bench_steps = 50;
    std::uint64_t bench_seed = 0;
    bench->add_option("--ckpt", bench_ckpt, "checkpoint (fixes geometry)");
    bench->add_flag("--random-weights", bench_random, "bench with freshly initialized weights");
    bench->add_option("--sweep", bench_sweep, "history lengths to sweep (default 8 16 32 64)");
    bench->add_option("--ar-steps", bench_steps, "timed AR steps per point")
        ->check(CLI::PositiveNumber);
    bench->add_option("--seed", bench_seed);
    bench->add_option("--out", bench_out, "timing CSV path");
    bench->add_option("--d-model", bench_cfg.d_model);
    bench->add_option("--blocks", bench_cfg.blocks);
    bench->add_option("--n-heads", bench_cfg.n_heads);
    bench->add_option("--d-ff", bench_cfg.d_ff);
    bench->add_option("--steps", bench_cfg.steps, "diffusion steps T");
    bench->add_option("--target-len", bench_cfg.target_len);
    bench->add_option("--chunk", bench_cfg.chunk);

    // verify
    auto* ver = app.add_subcommand("verify", "run the property suite");
    std::uint64_t ver_seed = 0;
    bool ver_fault = false;
    ver->add_option("--seed", ver_seed);
    ver->add_flag("--inject-mask-fault", ver_fault,
                  "negative control: corrupt the mask rule and expect a failure");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_demos(gen_task, gen_n, gen_seed, gen_out);
        if (tr->parsed())
            return cmd_train(tr_flags.resolve(tr_cfg, tr_config_path), tr_demos, tr_ckpt,
                             tr_metrics, tr_resume);
        if (ev->parsed())
            return cmd_eval(ev_ckpt, ev_noise, ev_episodes, ev_max_steps, ev_dropout, ev_seed,
                            !ev_no_cache, ev_out, ev_threads);
        if (bench->parsed())
            return cmd_bench_cache(bench_ckpt, bench_random, bench_sweep, bench_steps,
                                   bench_seed, bench_out, bench_cfg);
        if (ver->parsed()) return cmd_verify(ver_seed, ver_fault);
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::out_of_range& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}
