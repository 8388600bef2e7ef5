#include "cdp/envs.hpp"

#include <algorithm>
#include <cmath>

namespace cdp {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr std::size_t kMinDemoLen = 20;

double clamp(double v, double lo, double hi) { return std::max(lo, std::min(hi, v)); }

double norm2(const Vec2& v) { return std::sqrt(v.x * v.x + v.y * v.y); }

Vec2 sub(const Vec2& a, const Vec2& b) { return {a.x - b.x, a.y - b.y}; }

Vec2 scaled(const Vec2& v, double s) { return {v.x * s, v.y * s}; }

Vec2 normalized(const Vec2& v, const Vec2& fallback = {1.0, 0.0}) {
    const double n = norm2(v);
    return n < 1e-12 ? fallback : Vec2{v.x / n, v.y / n};
}

double cross2(const Vec2& a, const Vec2& b) { return a.x * b.y - a.y * b.x; }

double dot2(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }

// Counterclockwise tangent at angle position n (unit radial direction).
Vec2 perp(const Vec2& n) { return {-n.y, n.x}; }

// Limit a step vector to a maximum euclidean norm.
Vec2 limit_speed(const Vec2& v, double max_norm) {
    const double n = norm2(v);
    return n <= max_norm || n < 1e-12 ? v : scaled(v, max_norm / n);
}

double segment_point_dist(const Vec2& a, const Vec2& b, const Vec2& p) {
    const Vec2 ab = sub(b, a);
    const double len2 = ab.x * ab.x + ab.y * ab.y;
    if (len2 < 1e-18) return norm2(sub(p, a));
    const double t = clamp(dot2(sub(p, a), ab) / len2, 0.0, 1.0);
    return norm2(sub(p, Vec2{a.x + t * ab.x, a.y + t * ab.y}));
}

}  // namespace

Task task_from_string(const std::string& s) {
    if (s == "reach2d") return Task::reach2d;
    if (s == "pusht_lite") return Task::pusht_lite;
    throw std::invalid_argument("unknown task '" + s + "' (reach2d|pusht_lite)");
}

const char* to_string(Task t) { return t == Task::reach2d ? "reach2d" : "pusht_lite"; }

std::size_t task_obs_dim(Task t) { return t == Task::reach2d ? 4 : 8; }

std::size_t task_max_steps(Task t) { return t == Task::reach2d ? 60 : 300; }

double ToyEnv::wrap_angle(double a) {
    while (a >= kPi) a -= 2.0 * kPi;
    while (a < -kPi) a += 2.0 * kPi;
    return a;
}

void ToyEnv::reset(Rng& rng) {
    if (task_ == Task::reach2d) {
        do {
            agent = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
            goal = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
        } while (norm2(sub(goal, agent)) < 0.25);
        return;
    }
    target_xy = {rng.uniform(0.35, 0.65), rng.uniform(0.35, 0.65)};
    target_angle = rng.uniform(-0.3, 0.3);
    do {
        block = {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)};
    } while (norm2(sub(block, target_xy)) < 0.15);
    block_angle = wrap_angle(target_angle + rng.uniform(-0.6, 0.6));
    do {
        agent = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
    } while (norm2(sub(agent, block)) < kAgentRadius + kBlockRadius + 0.02);
}

void ToyEnv::step(const double* action) {
    if (std::isnan(action[0]) || std::isnan(action[1]))
        throw std::runtime_error("env: NaN action rejected");
    const Vec2 d{clamp(action[0], -kMaxDelta, kMaxDelta),
                 clamp(action[1], -kMaxDelta, kMaxDelta)};
    const Vec2 before = agent;
    agent = {clamp(agent.x + d.x, 0.0, 1.0), clamp(agent.y + d.y, 0.0, 1.0)};
    if (task_ == Task::reach2d) return;

    // Quasi-static push: the block resolves penetration along the center
    // line; tangential slip at the contact spins it.
    const Vec2 v = sub(agent, before);
    const double r_sum = kAgentRadius + kBlockRadius;
    const Vec2 delta = sub(block, agent);
    const double dist = norm2(delta);
    if (dist < r_sum) {
        const Vec2 n = normalized(delta, normalized(v));
        const double pen = r_sum - dist;
        block = {clamp(block.x + n.x * pen, 0.0, 1.0), clamp(block.y + n.y * pen, 0.0, 1.0)};
        const double spin = clamp(-kRotGain * cross2(n, v) / kBlockRadius, -kMaxSpin, kMaxSpin);
        block_angle = wrap_angle(block_angle + spin);
    }
}

bool ToyEnv::success() const {
    if (task_ == Task::reach2d) return norm2(sub(goal, agent)) < kReachSuccessDist;
    return std::abs(block.x - target_xy.x) < kPosTol &&
           std::abs(block.y - target_xy.y) < kPosTol &&
           std::abs(wrap_angle(block_angle - target_angle)) < kAngTol;
}

std::vector<double> ToyEnv::state_obs() const {
    if (task_ == Task::reach2d) return {agent.x, agent.y, goal.x, goal.y};
    return {agent.x, agent.y, block.x, block.y, block_angle,
            target_xy.x, target_xy.y, target_angle};
}

std::vector<double> ToyEnv::observe(const DegradeSpec& spec, Rng& rng) const {
    spec.validate();
    std::vector<double> obs = state_obs();
    for (auto& v : obs) {
        if (spec.noise_scale > 0.0) v += rng.normal(0.0, spec.noise_scale);
        if (spec.dropout_prob > 0.0 && rng.uniform() < spec.dropout_prob) v = 0.0;
    }
    return obs;
}

std::vector<double> ToyEnv::expert_action() const {
    if (task_ == Task::reach2d) {
        const Vec2 d = sub(goal, agent);
        const Vec2 a = limit_speed(d, kMaxDelta);
        return {a.x, a.y};
    }
    if (success()) return {0.0, 0.0};

    const double r_sum = kAgentRadius + kBlockRadius;
    const Vec2 pos_err = sub(target_xy, block);
    const double ang_err = wrap_angle(target_angle - block_angle);

    // Walk toward a desired contact point; orbit around the block when the
    // straight path would plow through it.
    auto approach = [&](const Vec2& cp) -> Vec2 {
        const Vec2 to_cp = sub(cp, agent);
        if (segment_point_dist(agent, cp, block) < r_sum - 0.005 && norm2(to_cp) > 0.02) {
            const Vec2 n = normalized(sub(agent, block));
            const double a_ag = std::atan2(agent.y - block.y, agent.x - block.x);
            const double a_cp = std::atan2(cp.y - block.y, cp.x - block.x);
            const double darc = wrap_angle(a_cp - a_ag);
            Vec2 tangent = perp(n);
            if (darc < 0.0) tangent = scaled(tangent, -1.0);
            const double radial_err = (r_sum + 0.015) - norm2(sub(agent, block));
            const Vec2 move{tangent.x * kMaxDelta + n.x * radial_err * 0.5,
                            tangent.y * kMaxDelta + n.y * radial_err * 0.5};
            return limit_speed(move, kMaxDelta);
        }
        return limit_speed(to_cp, kMaxDelta);
    };

    if (norm2(pos_err) > 0.03) {
        const Vec2 push_dir = normalized(pos_err);
        const Vec2 cp = sub(block, scaled(push_dir, r_sum + 0.005));
        if (norm2(sub(cp, agent)) > 0.02) return [&] {
            const Vec2 a = approach(cp);
            return std::vector<double>{a.x, a.y};
        }();
        const double speed = clamp(norm2(pos_err), 0.01, kMaxDelta);
        return {push_dir.x * speed, push_dir.y * speed};
    }

    if (std::abs(ang_err) > 0.12) {
        const Vec2 n_out = normalized(sub(agent, block));
        const Vec2 rp{block.x + n_out.x * (r_sum - 0.002), block.y + n_out.y * (r_sum - 0.002)};
        if (norm2(sub(rp, agent)) > 0.015) {
            const Vec2 a = approach(rp);
            return {a.x, a.y};
        }
        // Radial unit from agent to block; sliding along -tangent * sign(err)
        // spins the block by +err (see step()'s spin term).
        const Vec2 n_in = normalized(sub(block, agent));
        const Vec2 t = perp(n_in);
        const double dir = ang_err > 0.0 ? -1.0 : 1.0;
        const double speed =
            clamp(std::abs(ang_err) * kBlockRadius / kRotGain, 0.005, 0.04);
        const Vec2 a = limit_speed({t.x * dir * speed + n_in.x * 0.003,
                                    t.y * dir * speed + n_in.y * 0.003},
                                   kMaxDelta);
        return {a.x, a.y};
    }

    // Pose within internal margins but success flags not met (boundary
    // noise): retreat slightly to avoid stray pushes.
    const Vec2 away = normalized(sub(agent, block));
    if (norm2(sub(agent, block)) < r_sum + 0.01)
        return {away.x * 0.02, away.y * 0.02};
    return {0.0, 0.0};
}

std::vector<Episode> gen_demos(Task task, std::size_t n_episodes, std::uint64_t seed) {
    if (n_episodes == 0) throw std::invalid_argument("gen_demos: n_episodes must be >= 1");
    std::vector<Episode> episodes;
    const std::size_t max_attempts = n_episodes * 10;
    const std::size_t max_steps = task_max_steps(task);
    for (std::size_t attempt = 0; attempt < max_attempts && episodes.size() < n_episodes;
         ++attempt) {
        Rng rng(seed, "env", attempt);
        ToyEnv env(task);
        env.reset(rng);
        Episode ep;
        for (std::size_t s = 0; s < max_steps && !env.success(); ++s) {
            ep.observations.push_back(env.state_obs());
            auto a = env.expert_action();
            ep.actions.push_back(a);
            env.step(a.data());
        }
        if (!env.success()) continue;
        // A few terminal zero-action ticks so short episodes still contain a
        // full training window.
        while (ep.length() < kMinDemoLen) {
            ep.observations.push_back(env.state_obs());
            ep.actions.push_back({0.0, 0.0});
        }
        ep.success = true;
        episodes.push_back(std::move(ep));
    }
    if (episodes.size() < n_episodes)
        throw std::runtime_error("gen_demos: expert produced only " +
                                 std::to_string(episodes.size()) + "/" +
                                 std::to_string(n_episodes) + " successful episodes");
    return episodes;
}

}  // namespace cdp
