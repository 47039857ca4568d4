#pragma once

// Dataset ingestion (JSON manifest + MMF feature files) and the synthetic
// tri-modal generator used for desk-scale experiments.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "mmcl/mining.hpp"
#include "mmcl/mmf.hpp"
#include "mmcl/rng.hpp"
#include "mmcl/tensor.hpp"

namespace mmcl {

class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

struct Sample {
    std::string id;
    double label = 0.0;
    std::array<Tensor, 3> mods;  // v, a, t
};

struct Dataset {
    TaskKind task = TaskKind::Regression;
    int num_classes = 0;
    std::array<std::size_t, 3> dims{};
    std::size_t length = 0;
    std::vector<Sample> samples;

    std::size_t size() const { return samples.size(); }
};

inline constexpr std::array<const char*, 3> kModalityKeys{"v", "a", "t"};

// ---------------------------------------------------------------------------
// manifest loading

inline Dataset load_dataset(const std::string& manifest_path) {
    namespace fs = std::filesystem;
    std::ifstream f(manifest_path);
    if (!f) throw DataError("cannot open manifest " + manifest_path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest " + manifest_path + " is not valid JSON: " + e.what());
    }

    Dataset ds;
    try {
        const std::string task = j.at("task").get<std::string>();
        if (task == "regression") {
            ds.task = TaskKind::Regression;
        } else if (task == "classification") {
            ds.task = TaskKind::Classification;
            ds.num_classes = j.at("num_classes").get<int>();
            if (ds.num_classes < 2) throw DataError("num_classes must be >= 2");
        } else {
            throw DataError("unknown task '" + task + "'");
        }
        const auto& dims = j.at("dims");
        for (std::size_t m = 0; m < 3; ++m)
            ds.dims[m] = dims.at(kModalityKeys[m]).get<std::size_t>();
        ds.length = j.at("length").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest " + manifest_path + ": " + e.what());
    }

    const fs::path base = fs::path(manifest_path).parent_path();
    std::vector<std::string> problems;
    for (const auto& sj : j.at("samples")) {
        Sample s;
        try {
            s.id = sj.at("id").get<std::string>();
            s.label = sj.at("label").get<double>();
            for (std::size_t m = 0; m < 3; ++m) {
                const std::string rel = sj.at(kModalityKeys[m]).get<std::string>();
                s.mods[m] = read_matrix((base / rel).string());
                if (s.mods[m].rows() != ds.length || s.mods[m].cols() != ds.dims[m]) {
                    problems.push_back("sample '" + s.id + "': modality " +
                                       kModalityKeys[m] + " is " +
                                       shape_str(s.mods[m].shape()) + ", expected [" +
                                       std::to_string(ds.length) + "x" +
                                       std::to_string(ds.dims[m]) + "]");
                }
            }
            if (ds.task == TaskKind::Classification) {
                const double r = std::round(s.label);
                if (s.label != r || r < 0 || r >= ds.num_classes)
                    problems.push_back("sample '" + s.id + "': label " +
                                       std::to_string(s.label) + " outside [0," +
                                       std::to_string(ds.num_classes) + ")");
            }
        } catch (const nlohmann::json::exception& e) {
            problems.push_back(std::string("sample record invalid: ") + e.what());
            continue;
        } catch (const MmfError& e) {
            problems.push_back("sample '" + s.id + "': " + e.what());
            continue;
        }
        ds.samples.push_back(std::move(s));
    }
    if (!problems.empty()) {
        std::string msg = "dataset validation failed (" + std::to_string(problems.size()) +
                          " problems):";
        for (const std::string& p : problems) msg += "\n  - " + p;
        throw DataError(msg);
    }
    if (ds.samples.empty()) throw DataError("manifest has no samples");
    return ds;
}

// ---------------------------------------------------------------------------
// synthetic generation

struct Segment {
    std::size_t start = 0;  // inclusive
    std::size_t end = 0;    // exclusive
    int modality = 0;       // which modality carries label signal here
};

struct SyntheticSpec {
    std::size_t n_samples = 64;
    std::size_t length = 9;
    std::array<std::size_t, 3> dims{6, 6, 6};
    std::vector<Segment> segments;       // must partition [0, length)
    double sigma = 0.1;                  // background noise level
    double common_amplitude = 1.0;       // cross-modal shared component
    double specific_amplitude = 1.0;     // informative-segment component
    double marker_amplitude = 0.0;       // constant presence cue on informative steps
    double distractor_amplitude = 0.0;   // label-irrelevant signal-direction noise on
                                         // uninformative steps
    double common_offset = 0.0;          // positive baseline of the common profile
    bool aligned_common = false;         // common directions share coordinates
                                         // across modalities
    double beta_common = 1.0;            // label readout of the common signal
    std::vector<double> betas;           // label readout per segment
    TaskKind task = TaskKind::Regression;
    int num_classes = 0;
    std::vector<double> class_thresholds;  // (C-1) ascending cut points
    std::uint64_t seed = 0;

    void validate() const {
        if (n_samples == 0) throw DataError("synthetic: n_samples must be positive");
        if (segments.empty()) throw DataError("synthetic: needs at least one segment");
        if (sigma < 0) throw DataError("synthetic: sigma must be nonnegative");
        std::size_t cursor = 0;
        for (const Segment& s : segments) {
            if (s.start != cursor || s.end <= s.start || s.modality < 0 || s.modality > 2)
                throw DataError("synthetic: segments must partition [0,L) in order");
            cursor = s.end;
        }
        if (cursor != length) throw DataError("synthetic: segments must cover [0,L)");
        if (!betas.empty() && betas.size() != segments.size())
            throw DataError("synthetic: betas must match segment count");
        for (std::size_t m = 0; m < 3; ++m) {
            const std::size_t min_dim =
                aligned_common ? segments.size() + 2 * m + 2
                               : segments.size() + 1 + (marker_amplitude != 0.0 ? 1 : 0);
            if (dims[m] < min_dim)
                throw DataError("synthetic: modality " + std::string(kModalityKeys[m]) +
                                " dim must be >= " + std::to_string(min_dim) +
                                " (segments + specific/marker directions)");
        }
        if (task == TaskKind::Classification) {
            if (num_classes < 2) throw DataError("synthetic: classification needs >= 2 classes");
            if (class_thresholds.size() + 1 != static_cast<std::size_t>(num_classes))
                throw DataError("synthetic: needs num_classes-1 thresholds");
        }
    }

    double beta_for(std::size_t k) const { return betas.empty() ? 1.0 : betas[k]; }
};

struct SyntheticData {
    Dataset dataset;
    Tensor informative_mask;  // L x 3 of {0,1}
    std::vector<double> continuous_labels;
};

namespace detail {

inline std::vector<double> unit_vector(Rng& rng, std::size_t d) {
    std::vector<double> v(d);
    double n = 0;
    do {
        n = 0;
        for (double& x : v) {
            x = rng.normal();
            n += x * x;
        }
    } while (n == 0);
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    return v;
}

// unit vector orthogonal to a set of orthonormal vectors
inline std::vector<double> orthogonal_unit(Rng& rng,
                                           const std::vector<std::vector<double>>& basis) {
    const std::size_t d = basis[0].size();
    std::vector<double> v(d);
    double n = 0;
    do {
        for (double& x : v) x = rng.normal();
        for (const auto& u : basis) {
            double proj = 0;
            for (std::size_t i = 0; i < d; ++i) proj += v[i] * u[i];
            for (std::size_t i = 0; i < d; ++i) v[i] -= proj * u[i];
        }
        n = 0;
        for (double x : v) n += x * x;
    } while (n < 1e-12);
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    return v;
}

}  // namespace detail

// Label-carrying signal is injected only into the designated modality within
// each segment; a shared temporal profile is injected into all modalities so
// decoupling has a genuine common component to find. The label is a linear
// readout of the injected signals.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);

    // one common direction per (segment, modality) so cross-modal alignment
    // carries segment identity, plus orthogonal specific and marker directions
    std::array<std::vector<std::vector<double>>, 3> u_common;
    std::array<std::vector<double>, 3> u_spec, u_mark;
    if (spec.aligned_common) {
        // identical common coordinates across modalities (segment k occupies
        // coordinate k everywhere) and disjoint private coordinate bands for
        // each modality's specific and marker content, so cross-modal dot
        // products see exactly the common block
        const std::size_t K = spec.segments.size();
        for (std::size_t m = 0; m < 3; ++m) {
            for (std::size_t k = 0; k < K; ++k) {
                std::vector<double> u(spec.dims[m], 0.0);
                u[k] = 1.0;
                u_common[m].push_back(std::move(u));
            }
            std::vector<double> us(spec.dims[m], 0.0), um(spec.dims[m], 0.0);
            us[K + 2 * m] = 1.0;
            um[K + 2 * m + 1] = 1.0;
            u_spec[m] = std::move(us);
            u_mark[m] = std::move(um);
        }
    } else {
        for (std::size_t m = 0; m < 3; ++m) {
            std::vector<std::vector<double>> basis;
            for (std::size_t k = 0; k < spec.segments.size(); ++k) {
                std::vector<double> u = basis.empty()
                                            ? detail::unit_vector(rng, spec.dims[m])
                                            : detail::orthogonal_unit(rng, basis);
                basis.push_back(u);
                u_common[m].push_back(std::move(u));
            }
            u_spec[m] = detail::orthogonal_unit(rng, basis);
            basis.push_back(u_spec[m]);
            if (spec.marker_amplitude != 0.0)
                u_mark[m] = detail::orthogonal_unit(rng, basis);
        }
    }

    SyntheticData out;
    out.dataset.task = spec.task;
    out.dataset.num_classes = spec.num_classes;
    out.dataset.dims = spec.dims;
    out.dataset.length = spec.length;

    out.informative_mask = Tensor(Shape{spec.length, 3});
    for (std::size_t k = 0; k < spec.segments.size(); ++k)
        for (std::size_t t = spec.segments[k].start; t < spec.segments[k].end; ++t)
            out.informative_mask.at(t, static_cast<std::size_t>(spec.segments[k].modality)) =
                1.0;

    for (std::size_t s = 0; s < spec.n_samples; ++s) {
        Sample sample;
        sample.id = "synth" + std::to_string(s);
        for (std::size_t m = 0; m < 3; ++m) sample.mods[m] = Tensor(Shape{spec.length, spec.dims[m]});

        std::vector<double> g(spec.length);
        for (double& x : g) x = spec.common_offset + rng.normal();

        std::vector<std::vector<double>> c(spec.segments.size());
        for (std::size_t k = 0; k < spec.segments.size(); ++k) {
            c[k].resize(spec.segments[k].end - spec.segments[k].start);
            for (double& x : c[k]) x = rng.normal();
        }

        std::vector<std::size_t> seg_of(spec.length);
        for (std::size_t k = 0; k < spec.segments.size(); ++k)
            for (std::size_t t = spec.segments[k].start; t < spec.segments[k].end; ++t)
                seg_of[t] = k;
        for (std::size_t m = 0; m < 3; ++m) {
            Tensor& X = sample.mods[m];
            for (std::size_t t = 0; t < spec.length; ++t)
                for (std::size_t jj = 0; jj < spec.dims[m]; ++jj)
                    X.at(t, jj) = spec.sigma * rng.normal() +
                                  spec.common_amplitude * g[t] * u_common[m][seg_of[t]][jj];
        }
        for (std::size_t k = 0; k < spec.segments.size(); ++k) {
            const Segment& seg = spec.segments[k];
            const auto m = static_cast<std::size_t>(seg.modality);
            Tensor& X = sample.mods[m];
            for (std::size_t t = seg.start; t < seg.end; ++t)
                for (std::size_t jj = 0; jj < spec.dims[m]; ++jj) {
                    X.at(t, jj) += spec.specific_amplitude * c[k][t - seg.start] * u_spec[m][jj];
                    if (spec.marker_amplitude != 0.0)
                        X.at(t, jj) += spec.marker_amplitude * u_mark[m][jj];
                }
        }
        if (spec.distractor_amplitude != 0.0) {
            // same signal direction, label-irrelevant amplitude, on the steps
            // where the modality is NOT informative; gating those steps down
            // is the only way to keep them out of the pooled representation
            for (std::size_t m = 0; m < 3; ++m) {
                Tensor& X = sample.mods[m];
                for (std::size_t t = 0; t < spec.length; ++t) {
                    if (out.informative_mask.at(t, m) > 0.5) continue;
                    const double e = rng.normal();
                    for (std::size_t jj = 0; jj < spec.dims[m]; ++jj)
                        X.at(t, jj) += spec.distractor_amplitude * e * u_spec[m][jj];
                }
            }
        }

        double g_mean = 0;
        for (double x : g) g_mean += x;
        g_mean /= static_cast<double>(spec.length);
        double label = spec.beta_common * (g_mean - spec.common_offset);
        for (std::size_t k = 0; k < spec.segments.size(); ++k) {
            double c_mean = 0;
            for (double x : c[k]) c_mean += x;
            c_mean /= static_cast<double>(c[k].size());
            label += spec.beta_for(k) * c_mean;
        }
        out.continuous_labels.push_back(label);

        if (spec.task == TaskKind::Regression) {
            sample.label = label;
        } else {
            int cls = 0;
            while (cls < spec.num_classes - 1 &&
                   label > spec.class_thresholds[static_cast<std::size_t>(cls)])
                ++cls;
            sample.label = static_cast<double>(cls);
        }
        out.dataset.samples.push_back(std::move(sample));
    }
    return out;
}

inline nlohmann::json synthetic_spec_to_json(const SyntheticSpec& s) {
    nlohmann::json j;
    j["n_samples"] = s.n_samples;
    j["length"] = s.length;
    j["dims"] = {{"v", s.dims[0]}, {"a", s.dims[1]}, {"t", s.dims[2]}};
    j["segments"] = nlohmann::json::array();
    for (const Segment& seg : s.segments)
        j["segments"].push_back({{"start", seg.start},
                                 {"end", seg.end},
                                 {"modality", kModalityKeys[static_cast<std::size_t>(
                                                 seg.modality)]}});
    j["sigma"] = s.sigma;
    j["common_amplitude"] = s.common_amplitude;
    j["specific_amplitude"] = s.specific_amplitude;
    j["marker_amplitude"] = s.marker_amplitude;
    j["distractor_amplitude"] = s.distractor_amplitude;
    j["common_offset"] = s.common_offset;
    j["aligned_common"] = s.aligned_common;
    j["beta_common"] = s.beta_common;
    j["betas"] = s.betas;
    j["task"] = s.task == TaskKind::Regression ? "regression" : "classification";
    j["num_classes"] = s.num_classes;
    j["class_thresholds"] = s.class_thresholds;
    j["seed"] = s.seed;
    return j;
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known{
        "n_samples", "length",           "dims",        "segments",
        "sigma",     "common_amplitude", "specific_amplitude",
        "marker_amplitude", "distractor_amplitude", "common_offset", "aligned_common",
        "beta_common", "betas",          "task",        "num_classes",
        "class_thresholds", "seed"};
    SyntheticSpec s;
    try {
        for (const auto& [key, val] : j.items())
            if (!known.count(key)) throw DataError("synthetic spec: unknown key '" + key + "'");
        if (j.contains("n_samples")) s.n_samples = j["n_samples"].get<std::size_t>();
        if (j.contains("length")) s.length = j["length"].get<std::size_t>();
        if (j.contains("dims"))
            for (std::size_t m = 0; m < 3; ++m)
                s.dims[m] = j["dims"].at(kModalityKeys[m]).get<std::size_t>();
        if (j.contains("segments")) {
            s.segments.clear();
            for (const auto& sj : j["segments"]) {
                Segment seg;
                seg.start = sj.at("start").get<std::size_t>();
                seg.end = sj.at("end").get<std::size_t>();
                const auto& mj = sj.at("modality");
                if (mj.is_string()) {
                    const std::string ms = mj.get<std::string>();
                    seg.modality = ms == "v" ? 0 : ms == "a" ? 1 : ms == "t" ? 2 : -1;
                    if (seg.modality < 0)
                        throw DataError("synthetic spec: bad segment modality '" + ms + "'");
                } else {
                    seg.modality = mj.get<int>();
                }
                s.segments.push_back(seg);
            }
        }
        if (j.contains("sigma")) s.sigma = j["sigma"].get<double>();
        if (j.contains("common_amplitude"))
            s.common_amplitude = j["common_amplitude"].get<double>();
        if (j.contains("specific_amplitude"))
            s.specific_amplitude = j["specific_amplitude"].get<double>();
        if (j.contains("marker_amplitude"))
            s.marker_amplitude = j["marker_amplitude"].get<double>();
        if (j.contains("distractor_amplitude"))
            s.distractor_amplitude = j["distractor_amplitude"].get<double>();
        if (j.contains("common_offset")) s.common_offset = j["common_offset"].get<double>();
        if (j.contains("aligned_common")) s.aligned_common = j["aligned_common"].get<bool>();
        if (j.contains("beta_common")) s.beta_common = j["beta_common"].get<double>();
        if (j.contains("betas")) s.betas = j["betas"].get<std::vector<double>>();
        if (j.contains("task")) {
            const std::string t = j["task"].get<std::string>();
            if (t == "regression") s.task = TaskKind::Regression;
            else if (t == "classification") s.task = TaskKind::Classification;
            else throw DataError("synthetic spec: unknown task '" + t + "'");
        }
        if (j.contains("num_classes")) s.num_classes = j["num_classes"].get<int>();
        if (j.contains("class_thresholds"))
            s.class_thresholds = j["class_thresholds"].get<std::vector<double>>();
        if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("synthetic spec: ") + e.what());
    }
    s.validate();
    return s;
}

// materializes a dataset as manifest.json + MMF files under dir
inline void write_dataset(const Dataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json j;
    j["task"] = ds.task == TaskKind::Regression ? "regression" : "classification";
    if (ds.task == TaskKind::Classification) j["num_classes"] = ds.num_classes;
    j["dims"] = {{"v", ds.dims[0]}, {"a", ds.dims[1]}, {"t", ds.dims[2]}};
    j["length"] = ds.length;
    j["samples"] = nlohmann::json::array();
    for (const Sample& s : ds.samples) {
        nlohmann::json sj;
        sj["id"] = s.id;
        sj["label"] = s.label;
        for (std::size_t m = 0; m < 3; ++m) {
            const std::string rel = s.id + "_" + kModalityKeys[m] + ".mmf";
            write_matrix((fs::path(dir) / rel).string(), s.mods[m]);
            sj[kModalityKeys[m]] = rel;
        }
        j["samples"].push_back(sj);
    }
    std::ofstream f((fs::path(dir) / "manifest.json").string(), std::ios::trunc);
    if (!f) throw DataError("cannot write manifest under " + dir);
    f << j.dump(2) << "\n";
}

}  // namespace mmcl
