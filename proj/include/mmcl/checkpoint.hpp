#pragma once

// Versioned model checkpoint: config echo plus named parameter tensors in
// the MMF encoding. Inference checkpoints omit the critic parameters.

#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "mmcl/config.hpp"
#include "mmcl/mmf.hpp"
#include "mmcl/model.hpp"

namespace mmcl {

class CheckpointError : public std::runtime_error {
public:
    explicit CheckpointError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline Tensor as_matrix(const Tensor& t) {
    if (t.rank() == 2) return t;
    if (t.rank() == 1) return Tensor(Shape{1, t.size()}, t.raw());
    return Tensor(Shape{1, 1}, t.raw());
}

inline Tensor from_matrix(const Tensor& m, std::uint8_t rank) {
    if (rank == 2) return m;
    if (rank == 1) return Tensor(Shape{m.size()}, m.raw());
    return Tensor(Shape{}, m.raw());
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, MmclModel& model,
                            bool include_critic = false) {
    std::string out = "MMCK";
    detail::put_u32_le(out, 1);  // version

    nlohmann::json meta;
    meta["config"] = config_to_json(model.cfg);
    meta["in_dims"] = {{"v", model.in_dims[0]}, {"a", model.in_dims[1]},
                       {"t", model.in_dims[2]}};
    meta["has_critic"] = include_critic && model.critic.has_value();
    const std::string meta_str = meta.dump();
    detail::put_u32_le(out, static_cast<std::uint32_t>(meta_str.size()));
    out += meta_str;

    std::vector<std::pair<std::string, Tensor>> entries;
    auto collect = [&](Var& v) {
        if (v.name().rfind("critic.", 0) == 0 && !(include_critic && model.critic))
            return;
        entries.emplace_back(v.name(), v.value());
    };
    model.visit_params(collect);

    detail::put_u32_le(out, static_cast<std::uint32_t>(entries.size()));
    for (auto& [name, value] : entries) {
        detail::put_u32_le(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        out.push_back(static_cast<char>(value.rank()));
        const std::string mmf = encode_matrix(detail::as_matrix(value));
        detail::put_u32_le(out, static_cast<std::uint32_t>(mmf.size()));
        out += mmf;
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw CheckpointError("checkpoint: write failed for " + path);
}

struct CheckpointContents {
    MmclConfig cfg;
    std::array<std::size_t, 3> in_dims{};
    bool has_critic = false;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

inline CheckpointContents read_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("checkpoint: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    std::size_t off = 0;
    auto need = [&](std::size_t n) {
        if (off + n > bytes.size())
            throw CheckpointError("checkpoint: truncated file " + path);
    };
    need(8);
    if (std::string(bytes, 0, 4) != "MMCK")
        throw CheckpointError("checkpoint: bad magic in " + path);
    off = 4;
    const std::uint32_t version = detail::get_u32_le(p + off);
    off += 4;
    if (version != 1)
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));

    need(4);
    const std::uint32_t meta_len = detail::get_u32_le(p + off);
    off += 4;
    need(meta_len);
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(bytes.substr(off, meta_len));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint: bad metadata: ") + e.what());
    }
    off += meta_len;

    CheckpointContents c;
    c.cfg = config_from_json(meta.at("config"));
    c.in_dims = {meta.at("in_dims").at("v").get<std::size_t>(),
                 meta.at("in_dims").at("a").get<std::size_t>(),
                 meta.at("in_dims").at("t").get<std::size_t>()};
    c.has_critic = meta.value("has_critic", false);

    need(4);
    const std::uint32_t n = detail::get_u32_le(p + off);
    off += 4;
    for (std::uint32_t i = 0; i < n; ++i) {
        need(4);
        const std::uint32_t name_len = detail::get_u32_le(p + off);
        off += 4;
        need(name_len + 5);
        std::string name = bytes.substr(off, name_len);
        off += name_len;
        const auto rank = static_cast<std::uint8_t>(p[off]);
        off += 1;
        const std::uint32_t mmf_len = detail::get_u32_le(p + off);
        off += 4;
        need(mmf_len);
        Tensor m = decode_matrix(bytes.substr(off, mmf_len));
        off += mmf_len;
        c.tensors.emplace_back(std::move(name), detail::from_matrix(m, rank));
    }
    return c;
}

inline std::vector<std::string> checkpoint_keys(const std::string& path) {
    CheckpointContents c = read_checkpoint(path);
    std::vector<std::string> keys;
    keys.reserve(c.tensors.size());
    for (auto& [name, t] : c.tensors) keys.push_back(name);
    return keys;
}

inline MmclModel load_checkpoint(const std::string& path) {
    CheckpointContents c = read_checkpoint(path);
    MmclModel model = MmclModel::init(c.cfg, c.in_dims, c.has_critic);
    std::map<std::string, Tensor> by_name(c.tensors.begin(), c.tensors.end());
    std::vector<std::string> missing;
    model.visit_params([&](Var& v) {
        auto it = by_name.find(v.name());
        if (it == by_name.end()) {
            missing.push_back(v.name());
            return;
        }
        if (!it->second.same_shape(v.value()))
            throw CheckpointError("checkpoint: tensor '" + v.name() + "' has shape " +
                                  shape_str(it->second.shape()) + ", model expects " +
                                  shape_str(v.value().shape()));
        v.set_value(it->second);
        by_name.erase(it);
    });
    if (!missing.empty())
        throw CheckpointError("checkpoint: missing tensors, first is '" + missing[0] + "'");
    if (!by_name.empty())
        throw CheckpointError("checkpoint: unknown tensor '" + by_name.begin()->first + "'");
    return model;
}

}  // namespace mmcl
