#include "cdp/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace cdp {

using nlohmann::json;

void RunConfig::validate() const {
    task_from_string(task);  // throws on unknown task
    geometry().validate();
    model_config().validate();
    train_config().validate();
    if (steps < 2) throw std::invalid_argument("schedule.steps: must be >= 2");
    schedule_kind_from_string(kind);
    if (!(0.0 < beta_min && beta_min < beta_max && beta_max < 1.0))
        throw std::invalid_argument("schedule.beta_min/beta_max: need 0 < min < max < 1");
    if (episodes == 0) throw std::invalid_argument("eval.episodes: must be positive");
    if (max_steps == 0) throw std::invalid_argument("eval.max_steps: must be positive");
    DegradeSpec d{noise_scale, dropout_prob};
    d.validate();
}

PolicyGeometry RunConfig::geometry() const {
    PolicyGeometry g;
    g.history_len = history_len;
    g.target_len = target_len;
    g.valid_len = valid_len;
    g.chunk = chunk;
    g.cached_len = 0;
    return g;
}

ModelConfig RunConfig::model_config() const {
    ModelConfig m;
    m.action_dim = kTaskActionDim;
    m.obs_dim = task_obs_dim(task_enum());
    m.d_model = d_model;
    m.n_heads = n_heads;
    m.blocks = blocks;
    m.d_ff = d_ff;
    m.temporal_period = resolved_period();
    m.diffusion_steps = steps;
    m.geom = geometry();
    return m;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.sigma = sigma;
    t.batch_size = batch_size;
    t.epochs = epochs;
    t.learning_rate = learning_rate;
    t.seed = seed;
    return t;
}

NoiseSchedule RunConfig::schedule() const {
    return make_schedule(steps, schedule_kind_from_string(kind), beta_min, beta_max);
}

DegradeSpec RunConfig::degrade() const { return {noise_scale, dropout_prob}; }

std::string canonical_json(const RunConfig& c) {
    json j;
    j["task"] = c.task;
    j["geom"] = {{"history_len", c.history_len},
                 {"target_len", c.target_len},
                 {"valid_len", c.valid_len},
                 {"chunk", c.chunk}};
    j["model"] = {{"d_model", c.d_model},
                  {"n_heads", c.n_heads},
                  {"blocks", c.blocks},
                  {"d_ff", c.d_ff},
                  {"temporal_period", c.temporal_period}};
    j["schedule"] = {{"steps", c.steps},
                     {"kind", c.kind},
                     {"beta_min", c.beta_min},
                     {"beta_max", c.beta_max}};
    j["train"] = {{"sigma", c.sigma},
                  {"batch_size", c.batch_size},
                  {"epochs", c.epochs},
                  {"learning_rate", c.learning_rate},
                  {"seed", c.seed}};
    j["eval"] = {{"episodes", c.episodes},
                 {"max_steps", c.max_steps},
                 {"noise_scale", c.noise_scale},
                 {"dropout_prob", c.dropout_prob},
                 {"use_cache", c.use_cache}};
    return j.dump();  // nlohmann objects iterate in sorted key order
}

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& known,
                    const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!known.count(it.key()))
            throw std::invalid_argument("config: unknown key '" + where + it.key() + "'");
}

template <typename V>
void get_if(const json& obj, const char* key, V& out) {
    if (obj.contains(key)) out = obj.at(key).get<V>();
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw std::invalid_argument("config: invalid JSON");
    if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
    reject_unknown(j, {"task", "geom", "model", "schedule", "train", "eval"}, "");

    RunConfig c;
    get_if(j, "task", c.task);
    if (j.contains("geom")) {
        const auto& g = j.at("geom");
        reject_unknown(g, {"history_len", "target_len", "valid_len", "chunk"}, "geom.");
        get_if(g, "history_len", c.history_len);
        get_if(g, "target_len", c.target_len);
        get_if(g, "valid_len", c.valid_len);
        get_if(g, "chunk", c.chunk);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        reject_unknown(m, {"d_model", "n_heads", "blocks", "d_ff", "temporal_period"}, "model.");
        get_if(m, "d_model", c.d_model);
        get_if(m, "n_heads", c.n_heads);
        get_if(m, "blocks", c.blocks);
        get_if(m, "d_ff", c.d_ff);
        get_if(m, "temporal_period", c.temporal_period);
    }
    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        reject_unknown(s, {"steps", "kind", "beta_min", "beta_max"}, "schedule.");
        get_if(s, "steps", c.steps);
        get_if(s, "kind", c.kind);
        get_if(s, "beta_min", c.beta_min);
        get_if(s, "beta_max", c.beta_max);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        reject_unknown(t, {"sigma", "batch_size", "epochs", "learning_rate", "seed"}, "train.");
        get_if(t, "sigma", c.sigma);
        get_if(t, "batch_size", c.batch_size);
        get_if(t, "epochs", c.epochs);
        get_if(t, "learning_rate", c.learning_rate);
        get_if(t, "seed", c.seed);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        reject_unknown(e, {"episodes", "max_steps", "noise_scale", "dropout_prob", "use_cache"},
                       "eval.");
        get_if(e, "episodes", c.episodes);
        get_if(e, "max_steps", c.max_steps);
        get_if(e, "noise_scale", c.noise_scale);
        get_if(e, "dropout_prob", c.dropout_prob);
        get_if(e, "use_cache", c.use_cache);
    }
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

}  // namespace cdp
