#pragma once

#include <cstdint>
#include <string>

#include "cdp/envs.hpp"
#include "cdp/model.hpp"
#include "cdp/schedule.hpp"
#include "cdp/training.hpp"

namespace cdp {

// Full run configuration. Serialized as canonical JSON (sorted keys, compact)
// in config files and checkpoint echoes; unknown keys are rejected on load.
struct RunConfig {
    std::string task = "reach2d";

    // geometry
    std::size_t history_len = 16;
    std::size_t target_len = 12;
    std::size_t valid_len = 8;
    std::size_t chunk = 8;

    // model
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t blocks = 2;
    std::size_t d_ff = 256;
    std::size_t temporal_period = 0;  // 0 -> 4 * (L + M)

    // schedule
    std::size_t steps = 100;
    std::string kind = "cosine";
    double beta_min = 1e-4;
    double beta_max = 0.02;

    // training
    double sigma = 1.0 / 6.0;
    std::size_t batch_size = 64;
    std::size_t epochs = 30;
    double learning_rate = 1e-4;
    std::uint64_t seed = 0;

    // evaluation
    std::size_t episodes = 50;
    std::size_t max_steps = 300;
    double noise_scale = 0.0;
    double dropout_prob = 0.0;
    bool use_cache = true;

    std::size_t resolved_period() const {
        return temporal_period == 0 ? 4 * (history_len + target_len) : temporal_period;
    }

    // Throws std::invalid_argument naming the offending field.
    void validate() const;

    Task task_enum() const { return task_from_string(task); }
    PolicyGeometry geometry() const;
    ModelConfig model_config() const;
    TrainConfig train_config() const;
    NoiseSchedule schedule() const;
    DegradeSpec degrade() const;
};

std::string canonical_json(const RunConfig& cfg);
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

}  // namespace cdp
