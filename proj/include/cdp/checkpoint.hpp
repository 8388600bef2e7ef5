#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "cdp/data.hpp"
#include "cdp/model.hpp"

namespace cdp {

// Binary checkpoint, little-endian throughout:
//   magic "CDPK"
//   format_version     u32
//   config JSON        u64 length + bytes (canonical JSON)
//   normalization      u64 action_dim, f64 min[dim], f64 max[dim]
//   tensor count       u64
//   per tensor         u64 name length + name bytes, u64 rank, u64 dims[rank],
//                      f32 data (row-major)
// Tensors are written in param_order, values as raw 32-bit floats, so
// save -> load -> save is byte-identical.
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline bool param_trainable(const std::string& name) { return name != "tstep.table"; }

struct CheckpointData {
    std::string config_json;
    NormStats norm;
    ModelParams<float> params;
};

namespace detail_ckpt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

template <typename V>
void write_pod(std::ostream& out, V v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& in) {
    V v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace detail_ckpt

inline void save_checkpoint(const std::string& path, const std::string& config_json,
                            const NormStats& norm, const ModelParams<float>& params,
                            const std::vector<std::string>& order) {
    using namespace detail_ckpt;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    out.write("CDPK", 4);
    write_pod<std::uint32_t>(out, kCheckpointVersion);
    write_pod<std::uint64_t>(out, config_json.size());
    out.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
    write_pod<std::uint64_t>(out, norm.dim());
    for (double v : norm.min_v) write_pod<double>(out, v);
    for (double v : norm.max_v) write_pod<double>(out, v);
    write_pod<std::uint64_t>(out, order.size());
    for (const auto& name : order) {
        const auto& t = params.at(name);
        write_pod<std::uint64_t>(out, name.size());
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod<std::uint64_t>(out, t.rank());
        for (std::size_t d : t.shape()) write_pod<std::uint64_t>(out, d);
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline CheckpointData load_checkpoint(const std::string& path) {
    using namespace detail_ckpt;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "CDPK", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const auto version = read_pod<std::uint32_t>(in);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: format version " + std::to_string(version) +
                                 " does not match supported version " +
                                 std::to_string(kCheckpointVersion));
    CheckpointData ckpt;
    const auto cfg_len = read_pod<std::uint64_t>(in);
    ckpt.config_json.resize(cfg_len);
    in.read(ckpt.config_json.data(), static_cast<std::streamsize>(cfg_len));
    const auto norm_dim = read_pod<std::uint64_t>(in);
    ckpt.norm.min_v.resize(norm_dim);
    ckpt.norm.max_v.resize(norm_dim);
    for (auto& v : ckpt.norm.min_v) v = read_pod<double>(in);
    for (auto& v : ckpt.norm.max_v) v = read_pod<double>(in);
    const auto n_tensors = read_pod<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < n_tensors; ++i) {
        const auto name_len = read_pod<std::uint64_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        const auto rank = read_pod<std::uint64_t>(in);
        std::vector<std::size_t> shape(rank);
        std::size_t numel = 1;
        for (auto& d : shape) {
            d = read_pod<std::uint64_t>(in);
            numel *= d;
        }
        std::vector<float> data(numel);
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(numel * sizeof(float)));
        if (!in) throw std::runtime_error("checkpoint: truncated tensor " + name);
        auto t = nk::Tensor<float>::from(shape, std::move(data));
        t.set_requires_grad(param_trainable(name));
        ckpt.params.named.emplace(std::move(name), std::move(t));
    }
    return ckpt;
}

// Widening float -> double is exact, so a double-precision view of a
// checkpoint reproduces the float model's parameters bit for bit.
inline ModelParams<double> widen_params(const ModelParams<float>& p) {
    return p.template cast<double>();
}

}  // namespace cdp
