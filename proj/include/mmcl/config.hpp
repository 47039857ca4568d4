#pragma once

// Run configuration and its JSON form. Unknown keys are hard errors so a
// typo cannot silently fall back to a default.

#include <array>
#include <cstdint>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "mmcl/decouple.hpp"
#include "mmcl/mining.hpp"

namespace mmcl {

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

enum class FusionMode { Concat, WeightedSum };
enum class BranchMode { Both, CommonOnly, SpecificOnly };

struct AblationFlags {
    bool no_csd = false;
    bool no_cce = false;
    bool no_csm = false;
    BranchMode branch = BranchMode::Both;

    bool any() const {
        return no_csd || no_cce || no_csm || branch != BranchMode::Both;
    }
};

struct MmclConfig {
    std::size_t d = 256;
    std::size_t d_ff = 0;  // 0 -> 2*d
    std::size_t d_c = 0;   // 0 -> d, must be divisible by 8
    CompareMode compare_mode = CompareMode::Minor;
    FusionMode fusion = FusionMode::WeightedSum;
    RewardSpec task;
    double alpha1 = 15.0;
    double alpha2 = 5.0;
    std::size_t batch_size = 64;
    std::size_t epochs = 200;
    double lr = 1e-3;
    double lr_decay = 1.0;  // per-epoch multiplicative decay
    std::uint64_t seed = 0;
    AblationFlags ablation;
    std::array<bool, 3> modality_mask{true, true, true};

    std::size_t ff_dim() const { return d_ff ? d_ff : 2 * d; }
    std::size_t critic_dim() const { return d_c ? d_c : d; }

    std::size_t active_modalities() const {
        std::size_t n = 0;
        for (bool b : modality_mask) n += b ? 1 : 0;
        return n;
    }

    void validate() const {
        if (d == 0) throw ConfigError("config: d must be positive");
        if (alpha1 < 0 || alpha2 < 0) throw ConfigError("config: alpha weights must be >= 0");
        if (batch_size == 0) throw ConfigError("config: batch_size must be >= 1");
        if (lr_decay <= 0.0 || lr_decay > 1.0)
            throw ConfigError("config: lr_decay must be in (0, 1]");
        if (active_modalities() == 0)
            throw ConfigError("config: modality mask selects no modalities");
        if (!ablation.no_csm && critic_dim() % 8 != 0)
            throw ConfigError("config: critic dim " + std::to_string(critic_dim()) +
                              " must be divisible by 8");
        try {
            task.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
    }
};

// ---------------------------------------------------------------------------
// JSON (de)serialization

namespace detail {

inline std::string mask_string(const std::array<bool, 3>& mask) {
    std::string s;
    const char* names = "vat";
    for (int m = 0; m < 3; ++m)
        if (mask[static_cast<std::size_t>(m)]) s += names[m];
    return s;
}

inline std::array<bool, 3> parse_mask(const std::string& s) {
    std::array<bool, 3> mask{false, false, false};
    for (char c : s) {
        switch (c) {
            case 'v': mask[0] = true; break;
            case 'a': mask[1] = true; break;
            case 't': mask[2] = true; break;
            default:
                throw ConfigError(std::string("config: modality mask character '") + c +
                                  "' is not one of v/a/t");
        }
    }
    return mask;
}

inline AblationFlags parse_ablation(const std::string& s) {
    AblationFlags f;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty() || tok == "full") continue;
        if (tok == "no-csd") f.no_csd = true;
        else if (tok == "no-cce") f.no_cce = true;
        else if (tok == "no-csm") f.no_csm = true;
        else if (tok == "common-only") f.branch = BranchMode::CommonOnly;
        else if (tok == "specific-only") f.branch = BranchMode::SpecificOnly;
        else
            throw ConfigError("config: unknown ablation '" + tok +
                              "' (expected full, no-csd, no-cce, no-csm, common-only, "
                              "specific-only)");
    }
    return f;
}

inline std::string ablation_string(const AblationFlags& f) {
    std::string s;
    auto app = [&](const char* t) {
        if (!s.empty()) s += ",";
        s += t;
    };
    if (f.no_csd) app("no-csd");
    if (f.no_cce) app("no-cce");
    if (f.no_csm) app("no-csm");
    if (f.branch == BranchMode::CommonOnly) app("common-only");
    if (f.branch == BranchMode::SpecificOnly) app("specific-only");
    return s.empty() ? "full" : s;
}

}  // namespace detail

inline nlohmann::json config_to_json(const MmclConfig& c) {
    nlohmann::json j;
    j["d"] = c.d;
    j["d_ff"] = c.d_ff;
    j["d_c"] = c.d_c;
    j["compare_mode"] = to_string(c.compare_mode);
    j["fusion"] = c.fusion == FusionMode::Concat ? "concat" : "weighted_sum";
    j["task"] = {
        {"type", c.task.task == TaskKind::Regression ? "regression" : "classification"},
        {"num_classes", c.task.num_classes},
        {"gamma", c.task.gamma}};
    j["alpha1"] = c.alpha1;
    j["alpha2"] = c.alpha2;
    j["batch_size"] = c.batch_size;
    j["epochs"] = c.epochs;
    j["lr"] = c.lr;
    j["lr_decay"] = c.lr_decay;
    j["seed"] = c.seed;
    j["ablation"] = detail::ablation_string(c.ablation);
    j["modality_mask"] = detail::mask_string(c.modality_mask);
    return j;
}

inline MmclConfig config_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known{
        "d",      "d_ff",   "d_c",        "compare_mode", "fusion",
        "task",   "alpha1", "alpha2",     "batch_size",   "epochs",
        "lr",     "lr_decay", "seed",     "ablation",     "modality_mask"};
    static const std::set<std::string> known_task{"type", "num_classes", "gamma"};
    MmclConfig c;
    try {
        for (const auto& [key, val] : j.items())
            if (!known.count(key)) throw ConfigError("config: unknown key '" + key + "'");
        if (j.contains("d")) c.d = j["d"].get<std::size_t>();
        if (j.contains("d_ff")) c.d_ff = j["d_ff"].get<std::size_t>();
        if (j.contains("d_c")) c.d_c = j["d_c"].get<std::size_t>();
        if (j.contains("compare_mode")) {
            const std::string m = j["compare_mode"].get<std::string>();
            if (m == "minor") c.compare_mode = CompareMode::Minor;
            else if (m == "major") c.compare_mode = CompareMode::Major;
            else if (m == "mean") c.compare_mode = CompareMode::Mean;
            else throw ConfigError("config: unknown compare_mode '" + m + "'");
        }
        if (j.contains("fusion")) {
            const std::string f = j["fusion"].get<std::string>();
            if (f == "concat") c.fusion = FusionMode::Concat;
            else if (f == "weighted_sum") c.fusion = FusionMode::WeightedSum;
            else throw ConfigError("config: unknown fusion '" + f + "'");
        }
        if (j.contains("task")) {
            for (const auto& [key, val] : j["task"].items())
                if (!known_task.count(key))
                    throw ConfigError("config: unknown task key '" + key + "'");
            const auto& t = j["task"];
            if (t.contains("type")) {
                const std::string ty = t["type"].get<std::string>();
                if (ty == "regression") c.task.task = TaskKind::Regression;
                else if (ty == "classification") c.task.task = TaskKind::Classification;
                else throw ConfigError("config: unknown task type '" + ty + "'");
            }
            if (t.contains("num_classes")) c.task.num_classes = t["num_classes"].get<int>();
            if (t.contains("gamma")) c.task.gamma = t["gamma"].get<double>();
        }
        if (j.contains("alpha1")) c.alpha1 = j["alpha1"].get<double>();
        if (j.contains("alpha2")) c.alpha2 = j["alpha2"].get<double>();
        if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
        if (j.contains("epochs")) c.epochs = j["epochs"].get<std::size_t>();
        if (j.contains("lr")) c.lr = j["lr"].get<double>();
        if (j.contains("lr_decay")) c.lr_decay = j["lr_decay"].get<double>();
        if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("ablation"))
            c.ablation = detail::parse_ablation(j["ablation"].get<std::string>());
        if (j.contains("modality_mask"))
            c.modality_mask = detail::parse_mask(j["modality_mask"].get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

}  // namespace mmcl
