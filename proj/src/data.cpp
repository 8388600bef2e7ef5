#include "cdp/data.hpp"

#include <fstream>
#include <limits>

#include <json.hpp>

namespace cdp {

void save_episodes_jsonl(const std::string& path, const std::vector<Episode>& episodes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    for (const auto& ep : episodes) {
        ep.check();
        nlohmann::json j;
        j["obs"] = ep.observations;
        j["act"] = ep.actions;
        j["success"] = ep.success;
        out << j.dump() << "\n";
    }
}

std::vector<Episode> load_episodes_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<Episode> episodes;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": invalid JSON");
        Episode ep;
        ep.observations = j.at("obs").get<std::vector<std::vector<double>>>();
        ep.actions = j.at("act").get<std::vector<std::vector<double>>>();
        ep.success = j.at("success").get<bool>();
        ep.check();
        episodes.push_back(std::move(ep));
    }
    return episodes;
}

NormStats NormStats::fit(const std::vector<Episode>& episodes) {
    NormStats s;
    for (const auto& ep : episodes) {
        for (const auto& a : ep.actions) {
            if (s.min_v.empty()) {
                s.min_v.assign(a.size(), std::numeric_limits<double>::infinity());
                s.max_v.assign(a.size(), -std::numeric_limits<double>::infinity());
            }
            if (a.size() != s.min_v.size())
                throw std::invalid_argument("norm: inconsistent action dimension");
            for (std::size_t d = 0; d < a.size(); ++d) {
                s.min_v[d] = std::min(s.min_v[d], a[d]);
                s.max_v[d] = std::max(s.max_v[d], a[d]);
            }
        }
    }
    if (s.min_v.empty()) throw std::invalid_argument("norm: no actions to fit");
    return s;
}

NormStats NormStats::identity(std::size_t dim) {
    NormStats s;
    s.min_v.assign(dim, -1.0);
    s.max_v.assign(dim, 1.0);
    return s;
}

}  // namespace cdp
