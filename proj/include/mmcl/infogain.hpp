#pragma once

// Information-gain-rate protocol: linear softmax probes trained on pooled
// feature families estimate the predictive uncertainty H of each family and
// of each ordered pair (base given condition); g = (H - H_cond) / H.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "mmcl/adam.hpp"
#include "mmcl/autodiff.hpp"
#include "mmcl/dataset.hpp"
#include "mmcl/metrics.hpp"
#include "mmcl/model.hpp"
#include "mmcl/rng.hpp"

namespace mmcl {

struct ProbeConfig {
    std::size_t epochs = 100;
    double lr = 0.05;
    std::uint64_t seed = 0;
};

// n x f feature matrix, one pooled feature vector per sample
using FeatureMatrix = std::vector<std::vector<double>>;

inline FeatureMatrix concat_features(const FeatureMatrix& a, const FeatureMatrix& b) {
    FeatureMatrix out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = a[i];
        out[i].insert(out[i].end(), b[i].begin(), b[i].end());
    }
    return out;
}

// Trains a single affine softmax probe with full-batch Adam and returns the
// dataset-mean base-2 entropy of its output distributions.
inline double probe_entropy(const FeatureMatrix& features, const std::vector<int>& labels,
                            int num_classes, const ProbeConfig& pc = {}) {
    if (features.empty() || features.size() != labels.size())
        throw std::invalid_argument("probe_entropy: features/labels mismatch");
    const std::size_t n = features.size(), f = features[0].size();
    const auto c = static_cast<std::size_t>(num_classes);

    Tensor x(Shape{n, f});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) x.at(i, j) = features[i][j];
    Tensor onehot(Shape{n, c});
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw std::out_of_range("probe_entropy: label outside range");
        onehot.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
    }
    Var xv(x), mask(onehot);

    Rng rng(pc.seed);
    Var w = Var::param(glorot_uniform(rng, f, c), "probe.w");
    Var b = Var::param(Tensor::zeros({c}), "probe.b");
    Adam opt({w, b}, AdamHyper{.lr = pc.lr});

    for (std::size_t epoch = 0; epoch < pc.epochs; ++epoch) {
        Var probs = softmax_rows(affine(xv, w, b));
        Var ce = scalar_mul(sum_all(mul(vlog(probs), mask)),
                            -1.0 / static_cast<double>(n));
        if (!std::isfinite(ce.value().item()))
            throw NumericError("probe training diverged (non-finite loss)");
        opt.zero_grad();
        backward(ce);
        opt.step();
    }

    Tensor probs = softmax_rows(affine(xv, w, b)).value();
    double h = 0;
    std::vector<double> row(c);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) row[j] = probs.at(i, j);
        h += entropy(row);
    }
    return h / static_cast<double>(n);
}

// g(base | cond): relative entropy reduction when cond joins base
inline std::optional<double> info_gain_pair(const FeatureMatrix& base,
                                            const FeatureMatrix& cond,
                                            const std::vector<int>& labels, int num_classes,
                                            const ProbeConfig& pc = {}) {
    const double h_base = probe_entropy(base, labels, num_classes, pc);
    const double h_cond = probe_entropy(concat_features(base, cond), labels, num_classes, pc);
    return info_gain_rate(h_base, h_cond);
}

struct InfoGainReport {
    std::array<double, 3> h_specific{}, h_complementary{};
    std::array<std::array<std::optional<double>, 3>, 3> g_specific{}, g_complementary{};
};

struct PooledFamilies {
    std::array<FeatureMatrix, 3> specific;       // Z_s^m pooled over time
    std::array<FeatureMatrix, 3> complementary;  // Z~_s^m pooled over time
    std::vector<int> labels;
};

inline PooledFamilies extract_pooled_families(const MmclModel& model, const Dataset& data) {
    if (data.task != TaskKind::Classification)
        throw DataError("info gain protocol needs a classification dataset");
    MmclModel frozen = model.detached();
    PooledFamilies out;
    const std::vector<std::size_t> idx = active_indices(model.cfg);
    for (const Sample& s : data.samples) {
        ForwardTrace tr = forward(frozen, s.mods);
        for (std::size_t m : idx) {
            Tensor zs = mean_pool_time(tr.specific[m]).value();
            Tensor zt = mean_pool_time(tr.complementary[m]).value();
            out.specific[m].push_back(zs.raw());
            out.complementary[m].push_back(zt.raw());
        }
        out.labels.push_back(static_cast<int>(s.label));
    }
    return out;
}

inline InfoGainReport info_gain_protocol(const MmclModel& model, const Dataset& data,
                                         const ProbeConfig& pc = {}) {
    PooledFamilies fam = extract_pooled_families(model, data);
    InfoGainReport rep;
    const std::vector<std::size_t> idx = active_indices(model.cfg);
    for (const auto& [family, h_out, g_out] :
         {std::tuple{&fam.specific, &rep.h_specific, &rep.g_specific},
          std::tuple{&fam.complementary, &rep.h_complementary, &rep.g_complementary}}) {
        std::array<double, 3> h{};
        for (std::size_t m : idx)
            h[m] = probe_entropy((*family)[m], fam.labels, data.num_classes, pc);
        *h_out = h;
        for (std::size_t a : idx)
            for (std::size_t b : idx) {
                const double h_cond = probe_entropy(
                    concat_features((*family)[a], (*family)[b]), fam.labels,
                    data.num_classes, pc);
                (*g_out)[a][b] = info_gain_rate(h[a], h_cond);
            }
    }
    return rep;
}

inline nlohmann::json info_gain_to_json(const InfoGainReport& rep) {
    const std::array<const char*, 3> names{"V", "A", "T"};
    auto family_json = [&](const std::array<double, 3>& h,
                           const std::array<std::array<std::optional<double>, 3>, 3>& g) {
        nlohmann::json j;
        for (std::size_t m = 0; m < 3; ++m) j["H"][names[m]] = h[m];
        for (std::size_t a = 0; a < 3; ++a)
            for (std::size_t b = 0; b < 3; ++b) {
                if (g[a][b]) j["g"][names[a]][names[b]] = *g[a][b];
                else j["g"][names[a]][names[b]] = nullptr;
            }
        return j;
    };
    nlohmann::json j;
    j["specific"] = family_json(rep.h_specific, rep.g_specific);
    j["complementary"] = family_json(rep.h_complementary, rep.g_complementary);
    return j;
}

}  // namespace mmcl
