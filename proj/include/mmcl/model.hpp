#pragma once

// End-to-end model assembly: per-modality projection, decouple, enhance,
// mine, fuse, predict, the composite loss and the training loop.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmcl/adam.hpp"
#include "mmcl/autodiff.hpp"
#include "mmcl/config.hpp"
#include "mmcl/dataset.hpp"
#include "mmcl/decouple.hpp"
#include "mmcl/enhance.hpp"
#include "mmcl/mining.hpp"
#include "mmcl/rng.hpp"
#include "mmcl/tensor.hpp"

namespace mmcl {

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

inline constexpr std::array<const char*, 3> kModalityNames{"vision", "audio", "text"};

// ---------------------------------------------------------------------------
// model

struct MmclModel {
    MmclConfig cfg;
    std::array<std::size_t, 3> in_dims{};

    std::array<Var, 3> proj_w, proj_b;
    std::array<EnhanceBlock, 3> enhance_blocks;
    std::array<PolicyModel, 3> policies;
    Var fusion_logits;  // [3], softmaxed over the active subset
    Var head_w, head_b;
    std::optional<CriticModel> critic;  // training only

    bool modality_active(std::size_t m) const { return cfg.modality_mask[m]; }

    std::size_t block_width() const {
        return cfg.ablation.branch == BranchMode::Both ? 2 * cfg.d : cfg.d;
    }

    std::size_t fused_width() const {
        return cfg.fusion == FusionMode::Concat ? block_width() * cfg.active_modalities()
                                                : block_width();
    }

    std::size_t output_dim() const {
        return cfg.task.task == TaskKind::Classification
                   ? static_cast<std::size_t>(cfg.task.num_classes)
                   : 1;
    }

    bool uses_csm() const { return !cfg.ablation.no_csm; }

    // Projections start as a noisy identity embedding when the target width
    // allows it. A fully random projection scrambles cross-modal cosine
    // structure, which leaves the similarity-based decoupling without signal
    // at the start of training on small corpora.
    static Tensor projection_init(Rng& rng, std::size_t d_in, std::size_t d_out) {
        const double bound = std::sqrt(6.0 / static_cast<double>(d_in + d_out));
        Tensor t(Shape{d_in, d_out});
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.1 * rng.uniform(-bound, bound);
        if (d_out >= d_in)
            for (std::size_t i = 0; i < d_in; ++i) t.at(i, i) += 1.0;
        return t;
    }

    static MmclModel init(const MmclConfig& cfg, const std::array<std::size_t, 3>& in_dims,
                          bool with_critic = true) {
        cfg.validate();
        MmclModel m;
        m.cfg = cfg;
        m.in_dims = in_dims;
        Rng rng(cfg.seed);
        for (std::size_t k = 0; k < 3; ++k) {
            if (!cfg.modality_mask[k]) continue;
            const std::string name = kModalityNames[k];
            m.proj_w[k] = Var::param(projection_init(rng, in_dims[k], cfg.d),
                                     "proj." + name + ".w");
            m.proj_b[k] = Var::param(Tensor::zeros({cfg.d}), "proj." + name + ".b");
            m.enhance_blocks[k] =
                EnhanceBlock::init(cfg.d, cfg.ff_dim(), rng, "enhance." + name);
            m.policies[k] = PolicyModel::init(cfg.d, rng, "policy." + name);
        }
        m.fusion_logits = Var::param(Tensor::zeros({3}), "fusion.logits");
        m.head_w = Var::param(glorot_uniform(rng, m.fused_width(), m.output_dim()),
                              "head.w");
        m.head_b = Var::param(Tensor::zeros({m.output_dim()}), "head.b");
        if (with_critic && m.uses_csm())
            m.critic = CriticModel::init(cfg.d, cfg.critic_dim(), rng, "critic",
                                         cfg.active_modalities());
        return m;
    }

    template <class F>
    void visit_params(F&& f) {
        for (std::size_t k = 0; k < 3; ++k) {
            if (!cfg.modality_mask[k]) continue;
            f(proj_w[k]);
            f(proj_b[k]);
            enhance_blocks[k].visit(f);
            policies[k].visit(f);
        }
        f(fusion_logits);
        f(head_w);
        f(head_b);
        if (critic) critic->visit(f);
    }

    std::vector<Var> parameters() {
        std::vector<Var> out;
        visit_params([&](Var& v) { out.push_back(v); });
        return out;
    }

    std::vector<Var> policy_parameters() {
        std::vector<Var> out;
        for (std::size_t k = 0; k < 3; ++k)
            if (cfg.modality_mask[k]) policies[k].visit([&](Var& v) { out.push_back(v); });
        return out;
    }

    std::vector<Var> critic_parameters() {
        std::vector<Var> out;
        if (critic) critic->visit([&](Var& v) { out.push_back(v); });
        return out;
    }

    // constant copy sharing current values; used for no-grad evaluation
    MmclModel detached() const {
        MmclModel m;
        m.cfg = cfg;
        m.in_dims = in_dims;
        for (std::size_t k = 0; k < 3; ++k) {
            if (!cfg.modality_mask[k]) continue;
            m.proj_w[k] = proj_w[k].detach();
            m.proj_b[k] = proj_b[k].detach();
            m.enhance_blocks[k] = enhance_blocks[k].detached();
            m.policies[k].w = policies[k].w.detach();
            m.policies[k].b = policies[k].b.detach();
        }
        m.fusion_logits = fusion_logits.detach();
        m.head_w = head_w.detach();
        m.head_b = head_b.detach();
        if (critic) m.critic = critic->detached();
        return m;
    }

    MmclModel inference_copy() const {
        MmclModel m = *this;
        m.critic.reset();
        return m;
    }
};

// ---------------------------------------------------------------------------
// forward

struct ForwardTrace {
    std::array<Var, 3> projected;                       // Z^m
    std::array<std::optional<DecoupledPair>, 3> decoupled;
    std::array<Var, 3> common, specific;                // Z_c, Z_s
    std::array<Var, 3> enhanced;                        // Z~_c
    std::array<std::optional<Var>, 3> actions;          // A^m, absent under no-csm
    std::array<Var, 3> complementary;                   // Z~_s
    Var fused;
    Var prediction;  // scalar (regression) or [C] logits
};

inline std::vector<std::size_t> active_indices(const MmclConfig& cfg) {
    std::vector<std::size_t> idx;
    for (std::size_t m = 0; m < 3; ++m)
        if (cfg.modality_mask[m]) idx.push_back(m);
    return idx;
}

// per-modality block -> joint representation
inline Var fuse(const std::vector<Var>& blocks, const std::vector<std::size_t>& indices,
                const MmclModel& model) {
    if (blocks.empty()) throw ShapeError("fuse: no modality blocks");
    for (const Var& b : blocks)
        if (!b.value().same_shape(blocks[0].value()))
            throw ShapeError("fuse: inconsistent block shapes " +
                             shape_str(blocks[0].value().shape()) + " vs " +
                             shape_str(b.value().shape()));
    if (model.cfg.fusion == FusionMode::Concat) return concat_cols(blocks);
    if (blocks.size() == 1) return blocks[0];
    Var weights = softmax_vec(gather_vec(model.fusion_logits, indices));
    std::vector<Var> weighted;
    weighted.reserve(blocks.size());
    for (std::size_t i = 0; i < blocks.size(); ++i)
        weighted.push_back(mul(blocks[i], pick(weights, i)));
    return add_n(weighted);
}

inline ForwardTrace forward(const MmclModel& model, const std::array<Tensor, 3>& mods) {
    const MmclConfig& cfg = model.cfg;
    const std::vector<std::size_t> idx = active_indices(cfg);

    const std::size_t L = mods[idx[0]].rows();
    for (std::size_t m : idx) {
        if (mods[m].rank() != 2 || mods[m].rows() != L)
            throw ShapeError("forward: modality " + std::string(kModalityNames[m]) +
                             " has " + shape_str(mods[m].shape()) +
                             ", expected sequence length " + std::to_string(L));
        if (mods[m].cols() != model.in_dims[m])
            throw ShapeError("forward: modality " + std::string(kModalityNames[m]) +
                             " width " + std::to_string(mods[m].cols()) +
                             " does not match model input dim " +
                             std::to_string(model.in_dims[m]));
    }

    ForwardTrace tr;
    for (std::size_t m : idx)
        tr.projected[m] = affine(Var::constant(mods[m]), model.proj_w[m], model.proj_b[m]);

    // CSD; a single active modality has no cross-modal reference, so it
    // degenerates to the identity split like no-csd
    if (cfg.ablation.no_csd || idx.size() < 2) {
        for (std::size_t m : idx) {
            tr.common[m] = tr.projected[m];
            tr.specific[m] = tr.projected[m];
        }
    } else {
        for (std::size_t m : idx) {
            std::vector<Var> others;
            for (std::size_t o : idx)
                if (o != m) others.push_back(tr.projected[o]);
            DecoupledPair dp = decouple(tr.projected[m], others, cfg.compare_mode);
            tr.common[m] = dp.common;
            tr.specific[m] = dp.specific;
            tr.decoupled[m] = std::move(dp);
        }
    }

    // CCE
    for (std::size_t m : idx)
        tr.enhanced[m] = cfg.ablation.no_cce
                             ? tr.common[m]
                             : enhance(tr.common[m], model.enhance_blocks[m]);

    // CSM
    for (std::size_t m : idx) {
        if (cfg.ablation.no_csm) {
            tr.complementary[m] = tr.specific[m];
        } else {
            Var a = policy_act(tr.specific[m], model.policies[m]);
            tr.complementary[m] = apply_action(tr.specific[m], a);
            tr.actions[m] = std::move(a);
        }
    }

    std::vector<Var> blocks;
    blocks.reserve(idx.size());
    for (std::size_t m : idx) {
        switch (cfg.ablation.branch) {
            case BranchMode::CommonOnly: blocks.push_back(tr.enhanced[m]); break;
            case BranchMode::SpecificOnly: blocks.push_back(tr.complementary[m]); break;
            default:
                blocks.push_back(concat_cols({tr.complementary[m], tr.enhanced[m]}));
        }
    }
    tr.fused = fuse(blocks, idx, model);

    Var pooled = mean_pool_time(tr.fused);
    Var logits = affine(pooled, model.head_w, model.head_b);
    tr.prediction =
        cfg.task.task == TaskKind::Regression ? pick(logits, 0) : logits;
    return tr;
}

// ---------------------------------------------------------------------------
// losses

// MAE for regression, cross-entropy over softmaxed logits for classification
inline Var prediction_loss(const Var& prediction, double label, const RewardSpec& task) {
    if (task.task == TaskKind::Regression) {
        return vabs(add_scalar(prediction, -label));
    }
    const int cls = static_cast<int>(label);
    if (cls < 0 || cls >= task.num_classes)
        throw std::out_of_range("prediction_loss: class " + std::to_string(cls) +
                                " outside [0," + std::to_string(task.num_classes) + ")");
    Var probs = softmax_vec(prediction);
    return neg(vlog(pick(probs, static_cast<std::size_t>(cls))));
}

// L = alpha1 * Lp + alpha2 * (Lpolicy + Lcritic)
inline Var total_loss(const Var& lp, const Var& lpolicy, const Var& lcritic,
                      const MmclConfig& cfg) {
    return add(scalar_mul(lp, cfg.alpha1), scalar_mul(add(lpolicy, lcritic), cfg.alpha2));
}

// ---------------------------------------------------------------------------
// batch step

// Detached context of one batch step. When captured, replaying the step with
// perturbed parameters keeps every stop-gradient quantity fixed, which makes
// the analytic gradient of the batch loss directly comparable with finite
// differences.
struct FrozenStep {
    bool captured = false;
    std::vector<std::vector<Tensor>> zs_det;   // [sample][active modality]
    std::vector<std::vector<Tensor>> act_det;  // [sample][active modality]
    std::vector<double> qprime;
    std::optional<CriticModel> critic_const;
};

struct BatchParts {
    Var total, lp, lpolicy, lcritic;
    double mean_reward = 0.0;
    double mean_q = 0.0;
};

inline BatchParts build_batch_loss(MmclModel& model,
                                   const std::vector<const Sample*>& batch,
                                   double q_next_mean, bool terminal,
                                   FrozenStep* frozen = nullptr) {
    const MmclConfig& cfg = model.cfg;
    const std::vector<std::size_t> idx = active_indices(cfg);
    const bool csm = model.uses_csm();
    if (csm && !model.critic)
        throw std::logic_error("build_batch_loss: training a CSM model needs the critic");
    const bool replay = frozen && frozen->captured;
    if (frozen && !replay) {
        frozen->zs_det.assign(batch.size(), {});
        frozen->act_det.assign(batch.size(), {});
        frozen->qprime.assign(batch.size(), 0.0);
    }

    CriticModel critic_const;
    if (csm) critic_const = replay ? *frozen->critic_const : model.critic->detached();
    if (frozen && !replay && csm) frozen->critic_const = critic_const;

    std::vector<Var> lp_terms, lpolicy_terms, lcritic_terms;
    double reward_sum = 0.0, q_sum = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Sample& s = *batch[i];
        ForwardTrace tr = forward(model, s.mods);
        lp_terms.push_back(prediction_loss(tr.prediction, s.label, cfg.task));

        if (!csm) continue;
        const double r = compute_reward(tr.prediction.value(), s.label, cfg.task);
        reward_sum += r;
        double qprime;
        if (replay) {
            qprime = frozen->qprime[i];
        } else {
            qprime = td_target(r, TdContext{q_next_mean, terminal}, cfg.task);
            if (frozen) frozen->qprime[i] = qprime;
        }

        std::vector<Var> zs_det, act_det, act_pol;
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const std::size_t m = idx[k];
            Var z = replay ? Var::constant(frozen->zs_det[i][k]) : tr.specific[m].detach();
            Var a = replay ? Var::constant(frozen->act_det[i][k]) : tr.actions[m]->detach();
            if (frozen && !replay) {
                frozen->zs_det[i].push_back(z.value());
                frozen->act_det[i].push_back(a.value());
            }
            act_pol.push_back(policy_act(z, model.policies[m]));
            zs_det.push_back(std::move(z));
            act_det.push_back(std::move(a));
        }

        Var q_live = critic_eval(zs_det, act_det, *model.critic);
        q_sum += q_live.value().item();
        lcritic_terms.push_back(critic_loss(q_live, qprime));
        lpolicy_terms.push_back(policy_objective(critic_eval(zs_det, act_pol, critic_const)));
    }

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    BatchParts parts;
    parts.lp = scalar_mul(add_n(lp_terms), inv_b);
    parts.lpolicy = csm ? scalar_mul(add_n(lpolicy_terms), inv_b) : Var::scalar(0.0);
    parts.lcritic = csm ? scalar_mul(add_n(lcritic_terms), inv_b) : Var::scalar(0.0);
    parts.total = total_loss(parts.lp, parts.lpolicy, parts.lcritic, cfg);
    parts.mean_reward = csm ? reward_sum * inv_b : 0.0;
    parts.mean_q = csm ? q_sum * inv_b : 0.0;
    if (frozen && !replay) frozen->captured = true;
    return parts;
}

// detached mean critic value over a batch, used as the TD bootstrap Q''
inline double estimate_batch_q(const MmclModel& model,
                               const std::vector<const Sample*>& batch) {
    MmclModel frozen = model.detached();
    const std::vector<std::size_t> idx = active_indices(model.cfg);
    double q_sum = 0.0;
    for (const Sample* s : batch) {
        ForwardTrace tr = forward(frozen, s->mods);
        std::vector<Var> zs, acts;
        for (std::size_t m : idx) {
            zs.push_back(tr.specific[m]);
            acts.push_back(*tr.actions[m]);
        }
        q_sum += critic_eval(zs, acts, *frozen.critic).value().item();
    }
    return q_sum / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// training

struct EpochStats {
    double total = 0, lp = 0, lpolicy = 0, lcritic = 0, q = 0, reward = 0;
};

struct TrainResult {
    MmclModel model;  // inference form, critic stripped
    std::vector<EpochStats> history;
};

inline void check_finite(const char* term, double v) {
    if (!std::isfinite(v))
        throw NumericError(std::string("training aborted: non-finite ") + term);
}

inline TrainResult train(const MmclConfig& cfg, const Dataset& data) {
    cfg.validate();
    if (data.samples.empty()) throw DataError("train: dataset is empty");
    if (cfg.task.task != data.task)
        throw ConfigError("train: config task does not match dataset task");
    if (cfg.task.task == TaskKind::Classification &&
        cfg.task.num_classes != data.num_classes)
        throw ConfigError("train: config num_classes does not match dataset");

    MmclModel model = MmclModel::init(cfg, data.dims);
    Adam opt(model.parameters(), AdamHyper{.lr = cfg.lr});
    Rng shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

    std::vector<std::size_t> order(data.samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<EpochStats> history;
    history.reserve(cfg.epochs);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.lr_decay != 1.0)
            opt.set_lr(cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(epoch)));
        shuffle_rng.shuffle(order);
        std::vector<std::vector<const Sample*>> batches;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            std::vector<const Sample*> batch;
            for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch_size); ++i)
                batch.push_back(&data.samples[order[i]]);
            batches.push_back(std::move(batch));
        }

        EpochStats stats;
        for (std::size_t t = 0; t < batches.size(); ++t) {
            const bool terminal = t + 1 == batches.size();
            const double q_next =
                (!terminal && model.uses_csm()) ? estimate_batch_q(model, batches[t + 1])
                                                : 0.0;
            BatchParts parts = build_batch_loss(model, batches[t], q_next, terminal);
            check_finite("prediction loss", parts.lp.value().item());
            check_finite("policy loss", parts.lpolicy.value().item());
            check_finite("critic loss", parts.lcritic.value().item());
            check_finite("total loss", parts.total.value().item());
            opt.zero_grad();
            backward(parts.total);
            opt.step();

            stats.total += parts.total.value().item();
            stats.lp += parts.lp.value().item();
            stats.lpolicy += parts.lpolicy.value().item();
            stats.lcritic += parts.lcritic.value().item();
            stats.q += parts.mean_q;
            stats.reward += parts.mean_reward;
        }
        const double inv = 1.0 / static_cast<double>(batches.size());
        stats.total *= inv;
        stats.lp *= inv;
        stats.lpolicy *= inv;
        stats.lcritic *= inv;
        stats.q *= inv;
        stats.reward *= inv;
        history.push_back(stats);
    }
    return TrainResult{model.inference_copy(), std::move(history)};
}

// ---------------------------------------------------------------------------
// inference

inline Tensor infer(const MmclModel& model, const std::array<Tensor, 3>& mods) {
    if (model.critic)
        throw std::logic_error("infer: model still carries a critic; strip it first");
    return forward(model, mods).prediction.value();
}

inline std::vector<double> predict_dataset(const MmclModel& model, const Dataset& data,
                                           std::vector<Tensor>* logits_out = nullptr) {
    std::vector<double> preds;
    preds.reserve(data.samples.size());
    MmclModel frozen = model.detached();
    frozen.critic.reset();
    for (const Sample& s : data.samples) {
        Tensor p = infer(frozen, s.mods);
        if (model.cfg.task.task == TaskKind::Regression) {
            preds.push_back(p.item());
        } else {
            std::size_t best = 0;
            for (std::size_t c = 1; c < p.size(); ++c)
                if (p[c] > p[best]) best = c;
            preds.push_back(static_cast<double>(best));
            if (logits_out) logits_out->push_back(p);
        }
    }
    return preds;
}

}  // namespace mmcl
