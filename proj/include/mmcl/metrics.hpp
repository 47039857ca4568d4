#pragma once

// Evaluation metrics: regression suite (MAE/RMSE/Pearson/Acc2/Acc7/F1),
// per-class classification metrics, and entropy / information-gain-rate
// helpers.

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace mmcl {

struct RegressionMetrics {
    double mae = 0, rmse = 0, pearson = 0;
    double acc2 = 0, acc7 = 0, f1 = 0;
    bool pearson_degenerate = false;
};

struct ClassStats {
    double acc = 0, f1 = 0;
    std::size_t support = 0;
    bool zero_support = false;
};

struct ClassificationMetrics {
    std::vector<ClassStats> per_class;
    double macro_acc = 0, macro_f1 = 0;
};

namespace detail {

// binary F1 of the "value == true" class under one-vs-rest counting
inline double binary_f1(const std::vector<bool>& pred, const std::vector<bool>& truth) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] && truth[i]) ++tp;
        else if (pred[i] && !truth[i]) ++fp;
        else if (!pred[i] && truth[i]) ++fn;
    }
    if (tp == 0) return 0.0;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    return 2.0 * precision * recall / (precision + recall);
}

// nearest integer, half away from zero, clamped to [-3, 3]
inline int sentiment_class(double v) {
    const double r = std::round(v);
    return static_cast<int>(std::max(-3.0, std::min(3.0, r)));
}

}  // namespace detail

inline RegressionMetrics regression_metrics(const std::vector<double>& preds,
                                            const std::vector<double>& labels,
                                            bool exclude_zero_labels = false) {
    if (preds.size() != labels.size())
        throw std::invalid_argument("regression_metrics: length mismatch");
    if (preds.empty()) throw std::invalid_argument("regression_metrics: empty input");
    const std::size_t n = preds.size();

    RegressionMetrics m;
    double se = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = preds[i] - labels[i];
        m.mae += std::abs(e);
        se += e * e;
    }
    m.mae /= static_cast<double>(n);
    m.rmse = std::sqrt(se / static_cast<double>(n));

    double mp = 0, ml = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mp += preds[i];
        ml += labels[i];
    }
    mp /= static_cast<double>(n);
    ml /= static_cast<double>(n);
    double cov = 0, vp = 0, vl = 0;
    for (std::size_t i = 0; i < n; ++i) {
        cov += (preds[i] - mp) * (labels[i] - ml);
        vp += (preds[i] - mp) * (preds[i] - mp);
        vl += (labels[i] - ml) * (labels[i] - ml);
    }
    if (vp == 0.0 || vl == 0.0) {
        m.pearson = 0.0;
        m.pearson_degenerate = true;
    } else {
        m.pearson = cov / std::sqrt(vp * vl);
    }

    // Acc2 + weighted binary F1 at the zero threshold; zero labels count as
    // negative unless excluded
    std::vector<bool> ppos, lpos;
    std::size_t correct2 = 0, used = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (exclude_zero_labels && labels[i] == 0.0) continue;
        ppos.push_back(preds[i] > 0.0);
        lpos.push_back(labels[i] > 0.0);
        if (ppos.back() == lpos.back()) ++correct2;
        ++used;
    }
    m.acc2 = used ? static_cast<double>(correct2) / static_cast<double>(used) : 0.0;

    std::size_t support_pos = 0;
    for (bool b : lpos) support_pos += b ? 1 : 0;
    const std::size_t support_neg = used - support_pos;
    std::vector<bool> pneg(ppos.size()), lneg(lpos.size());
    for (std::size_t i = 0; i < ppos.size(); ++i) {
        pneg[i] = !ppos[i];
        lneg[i] = !lpos[i];
    }
    const double f1_pos = detail::binary_f1(ppos, lpos);
    const double f1_neg = detail::binary_f1(pneg, lneg);
    m.f1 = used ? (f1_pos * static_cast<double>(support_pos) +
                   f1_neg * static_cast<double>(support_neg)) /
                      static_cast<double>(used)
                : 0.0;

    std::size_t correct7 = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (detail::sentiment_class(preds[i]) == detail::sentiment_class(labels[i]))
            ++correct7;
    m.acc7 = static_cast<double>(correct7) / static_cast<double>(n);
    return m;
}

inline ClassificationMetrics classification_metrics(const std::vector<int>& pred_classes,
                                                    const std::vector<int>& labels,
                                                    int num_classes) {
    if (pred_classes.size() != labels.size())
        throw std::invalid_argument("classification_metrics: length mismatch");
    if (pred_classes.empty())
        throw std::invalid_argument("classification_metrics: empty input");
    for (int l : labels)
        if (l < 0 || l >= num_classes)
            throw std::out_of_range("classification_metrics: label " + std::to_string(l) +
                                    " outside [0," + std::to_string(num_classes) + ")");
    const std::size_t n = labels.size();
    ClassificationMetrics m;
    for (int c = 0; c < num_classes; ++c) {
        std::vector<bool> pred(n), truth(n);
        std::size_t correct = 0, support = 0;
        for (std::size_t i = 0; i < n; ++i) {
            pred[i] = pred_classes[i] == c;
            truth[i] = labels[i] == c;
            if (pred[i] == truth[i]) ++correct;
            if (truth[i]) ++support;
        }
        ClassStats cs;
        cs.acc = static_cast<double>(correct) / static_cast<double>(n);
        cs.f1 = detail::binary_f1(pred, truth);
        cs.support = support;
        cs.zero_support = support == 0;
        m.per_class.push_back(cs);
        m.macro_acc += cs.acc;
        m.macro_f1 += cs.f1;
    }
    m.macro_acc /= static_cast<double>(num_classes);
    m.macro_f1 /= static_cast<double>(num_classes);
    return m;
}

inline std::vector<int> argmax_classes(const std::vector<std::vector<double>>& logits) {
    std::vector<int> out;
    out.reserve(logits.size());
    for (const auto& row : logits) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < row.size(); ++c)
            if (row[c] > row[best]) best = c;
        out.push_back(static_cast<int>(best));
    }
    return out;
}

// base-2 entropy of a distribution, with 0 log 0 := 0
inline double entropy(const std::vector<double>& prob) {
    double sum = 0;
    for (double p : prob) {
        if (p < 0.0) throw std::invalid_argument("entropy: negative probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw std::invalid_argument("entropy: probabilities sum to " + std::to_string(sum));
    double h = 0;
    for (double p : prob)
        if (p > 0.0) h -= p * std::log2(p);
    return h;
}

// (H - H_cond) / H; undefined (null) when the base entropy is zero
inline std::optional<double> info_gain_rate(double h_base, double h_cond) {
    if (h_base == 0.0) return std::nullopt;
    return (h_base - h_cond) / h_base;
}

// ---------------------------------------------------------------------------
// JSON report with the fixed key set

inline nlohmann::json metrics_to_json(const RegressionMetrics& m) {
    nlohmann::json j;
    j["mae"] = m.mae;
    j["rmse"] = m.rmse;
    j["pearson"] = m.pearson;
    j["pearson_degenerate"] = m.pearson_degenerate;
    j["acc2"] = m.acc2;
    j["acc7"] = m.acc7;
    j["f1"] = m.f1;
    j["per_class"] = nullptr;
    j["info_gain"] = nullptr;
    return j;
}

inline nlohmann::json metrics_to_json(const ClassificationMetrics& m) {
    nlohmann::json j;
    j["mae"] = nullptr;
    j["rmse"] = nullptr;
    j["pearson"] = nullptr;
    j["acc2"] = nullptr;
    j["acc7"] = nullptr;
    j["f1"] = m.macro_f1;
    nlohmann::json pc = nlohmann::json::array();
    for (std::size_t c = 0; c < m.per_class.size(); ++c) {
        pc.push_back({{"class", c},
                      {"acc", m.per_class[c].acc},
                      {"f1", m.per_class[c].f1},
                      {"support", m.per_class[c].support},
                      {"zero_support", m.per_class[c].zero_support}});
    }
    j["per_class"] = pc;
    j["macro_acc"] = m.macro_acc;
    j["macro_f1"] = m.macro_f1;
    j["info_gain"] = nullptr;
    return j;
}

}  // namespace mmcl
