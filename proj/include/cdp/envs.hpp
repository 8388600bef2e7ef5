#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdp/data.hpp"
#include "cdp/rng.hpp"

namespace cdp {

enum class Task { reach2d, pusht_lite };

Task task_from_string(const std::string& s);
const char* to_string(Task t);
std::size_t task_obs_dim(Task t);
constexpr std::size_t kTaskActionDim = 2;

// Observation degradation: additive gaussian noise per element, then each
// element independently zeroed with probability dropout_prob.
struct DegradeSpec {
    double noise_scale = 0.0;
    double dropout_prob = 0.0;

    void validate() const {
        if (noise_scale < 0.0) throw std::invalid_argument("degrade: noise_scale < 0");
        if (dropout_prob < 0.0 || dropout_prob >= 1.0)
            throw std::invalid_argument("degrade: dropout_prob outside [0, 1)");
    }
};

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

// Toy 2D environments in the unit workspace, deterministic dynamics, actions
// are position deltas clamped to +-0.05 per axis.
//
// reach2d: move a point agent to a goal; success when within 0.03.
// pusht_lite: push a disc-shaped block (with an orientation marker) to a
// target pose via quasi-static contact; success when the block pose is within
// (0.05, 0.05, 10 deg) of the target, component-wise.
class ToyEnv {
public:
    static constexpr double kMaxDelta = 0.05;
    static constexpr double kReachSuccessDist = 0.03;
    static constexpr double kAgentRadius = 0.04;
    static constexpr double kBlockRadius = 0.06;
    static constexpr double kPosTol = 0.05;
    static constexpr double kAngTol = 0.174532925199432957;  // 10 degrees
    static constexpr double kRotGain = 0.5;
    static constexpr double kMaxSpin = 0.3;

    explicit ToyEnv(Task task) : task_(task) {}

    Task task() const { return task_; }
    std::size_t obs_dim() const { return task_obs_dim(task_); }

    void reset(Rng& rng);
    void step(const double* action);  // action[2]; throws on NaN
    bool success() const;

    std::vector<double> state_obs() const;
    std::vector<double> observe(const DegradeSpec& spec, Rng& rng) const;

    std::vector<double> expert_action() const;

    // State access (tests and resets).
    Vec2 agent, goal;                      // reach2d (goal unused for pusht)
    Vec2 block;                            // pusht_lite
    double block_angle = 0.0;
    Vec2 target_xy;
    double target_angle = 0.0;

    static double wrap_angle(double a);

private:
    Task task_;
};

// Scripted-expert demonstrations with clean observations; only successful
// episodes are kept, deterministic per seed. After success a few zero-action
// ticks are appended so every episode supports at least one training window.
std::vector<Episode> gen_demos(Task task, std::size_t n_episodes, std::uint64_t seed);

std::size_t task_max_steps(Task t);

}  // namespace cdp
