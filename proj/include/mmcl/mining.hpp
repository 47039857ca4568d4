#pragma once

// Complementary Specific feature Mining (CSM). Per-modality policy models
// emit temporal importance weights for the specific features; a centralized
// critic scores the joint policy from all modalities' observations and
// actions and is trained with TD error. The critic exists only during
// training.

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmcl/autodiff.hpp"
#include "mmcl/enhance.hpp"
#include "mmcl/rng.hpp"
#include "mmcl/tensor.hpp"

namespace mmcl {

enum class TaskKind { Regression, Classification };

struct RewardSpec {
    TaskKind task = TaskKind::Regression;
    int num_classes = 0;     // classification only
    double gamma = 0.5;

    void validate() const {
        if (gamma < 0.0 || gamma > 1.0)
            throw std::invalid_argument("reward spec: gamma must be in [0,1]");
        if (task == TaskKind::Classification && num_classes < 2)
            throw std::invalid_argument("reward spec: classification needs >= 2 classes");
    }
};

struct TdContext {
    std::optional<double> q_next;  // detached mean critic value of the next stage
    bool is_terminal = false;
};

// ---------------------------------------------------------------------------
// policy

struct PolicyModel {
    Var w;  // [d]
    Var b;  // scalar

    static PolicyModel init(std::size_t d, Rng& rng, const std::string& prefix) {
        PolicyModel p;
        const double bound = std::sqrt(6.0 / static_cast<double>(d + 1));
        Tensor w(Shape{d});
        for (std::size_t i = 0; i < d; ++i) w[i] = rng.uniform(-bound, bound);
        p.w = Var::param(std::move(w), prefix + ".w");
        p.b = Var::param(Tensor::scalar(0.0), prefix + ".b");
        return p;
    }

    template <class F>
    void visit(F&& f) {
        f(w);
        f(b);
    }
};

// A = sigmoid(zs w + b), one weight per timestep, each strictly in (0,1)
inline Var policy_act(const Var& zs, const PolicyModel& policy) {
    const Tensor& Z = zs.value();
    if (Z.rank() != 2 || Z.cols() != policy.w.value().size())
        throw ShapeError("policy_act: input " + shape_str(Z.shape()) +
                         " does not match policy dim " +
                         std::to_string(policy.w.value().size()));
    return sigmoid(add(matmul(zs, policy.w), policy.b));
}

// row i of zs scaled by a[i]
inline Var apply_action(const Var& zs, const Var& a) {
    const Tensor& Z = zs.value();
    const Tensor& A = a.value();
    if (Z.rank() != 2 || A.rank() != 1 || A.size() != Z.rows())
        throw ShapeError("apply_action: action length " + shape_str(A.shape()) +
                         " does not match sequence " + shape_str(Z.shape()));
    return scale_rows(zs, a);
}

// ---------------------------------------------------------------------------
// centralized critic

struct MultiHeadBlock {
    Var wq, bq, wk, bk, wv, bv, wo, bo;
    Var ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    std::size_t heads = 8;

    static MultiHeadBlock init(std::size_t dim, std::size_t heads, Rng& rng,
                               const std::string& prefix) {
        if (heads == 0 || dim % heads != 0)
            throw std::invalid_argument("multi-head block: dim " + std::to_string(dim) +
                                        " not divisible by " + std::to_string(heads) +
                                        " heads");
        MultiHeadBlock b;
        b.heads = heads;
        b.wq = Var::param(glorot_uniform(rng, dim, dim), prefix + ".wq");
        b.bq = Var::param(Tensor::zeros({dim}), prefix + ".bq");
        b.wk = Var::param(glorot_uniform(rng, dim, dim), prefix + ".wk");
        b.bk = Var::param(Tensor::zeros({dim}), prefix + ".bk");
        b.wv = Var::param(glorot_uniform(rng, dim, dim), prefix + ".wv");
        b.bv = Var::param(Tensor::zeros({dim}), prefix + ".bv");
        b.wo = Var::param(glorot_uniform(rng, dim, dim), prefix + ".wo");
        b.bo = Var::param(Tensor::zeros({dim}), prefix + ".bo");
        b.ffn_w1 = Var::param(glorot_uniform(rng, dim, 2 * dim), prefix + ".ffn_w1");
        b.ffn_b1 = Var::param(Tensor::zeros({2 * dim}), prefix + ".ffn_b1");
        b.ffn_w2 = Var::param(glorot_uniform(rng, 2 * dim, dim), prefix + ".ffn_w2");
        b.ffn_b2 = Var::param(Tensor::zeros({dim}), prefix + ".ffn_b2");
        return b;
    }

    template <class F>
    void visit(F&& f) {
        f(wq); f(bq); f(wk); f(bk); f(wv); f(bv); f(wo); f(bo);
        f(ffn_w1); f(ffn_b1); f(ffn_w2); f(ffn_b2);
    }

    MultiHeadBlock detached() const {
        MultiHeadBlock b;
        b.heads = heads;
        b.wq = wq.detach(); b.bq = bq.detach();
        b.wk = wk.detach(); b.bk = bk.detach();
        b.wv = wv.detach(); b.bv = bv.detach();
        b.wo = wo.detach(); b.bo = bo.detach();
        b.ffn_w1 = ffn_w1.detach(); b.ffn_b1 = ffn_b1.detach();
        b.ffn_w2 = ffn_w2.detach(); b.ffn_b2 = ffn_b2.detach();
        return b;
    }
};

inline Var multi_head_encode(const Var& x, const MultiHeadBlock& block) {
    const std::size_t dim = block.wq.value().rows();
    const std::size_t hd = dim / block.heads;
    Var q = affine(x, block.wq, block.bq);
    Var k = affine(x, block.wk, block.bk);
    Var v = affine(x, block.wv, block.bv);
    std::vector<Var> heads;
    heads.reserve(block.heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (std::size_t h = 0; h < block.heads; ++h) {
        Var qh = slice_cols(q, h * hd, hd);
        Var kh = slice_cols(k, h * hd, hd);
        Var vh = slice_cols(v, h * hd, hd);
        Var w = softmax_rows(scalar_mul(matmul(qh, transpose(kh)), scale));
        heads.push_back(matmul(w, vh));
    }
    Var attn = affine(concat_cols(heads), block.wo, block.bo);
    Var x1 = add(x, attn);
    Var hidden = relu(affine(x1, block.ffn_w1, block.ffn_b1));
    Var ffn = affine(hidden, block.ffn_w2, block.ffn_b2);
    return add(x1, ffn);
}

struct CriticModel {
    Var w_in, b_in;        // (n_mods*(d+1)) x d_c projection
    MultiHeadBlock block;  // 8-head encoder over L positions
    Var w_out, b_out;      // d_c -> 1 head

    static CriticModel init(std::size_t d, std::size_t d_c, Rng& rng,
                            const std::string& prefix = "critic",
                            std::size_t n_mods = 3) {
        if (d_c % 8 != 0)
            throw std::invalid_argument("critic: d_c " + std::to_string(d_c) +
                                        " must be divisible by 8");
        CriticModel c;
        const std::size_t in_dim = n_mods * (d + 1);
        c.w_in = Var::param(glorot_uniform(rng, in_dim, d_c), prefix + ".w_in");
        c.b_in = Var::param(Tensor::zeros({d_c}), prefix + ".b_in");
        c.block = MultiHeadBlock::init(d_c, 8, rng, prefix + ".block");
        Tensor wo(Shape{d_c});
        const double bound = std::sqrt(6.0 / static_cast<double>(d_c + 1));
        for (std::size_t i = 0; i < d_c; ++i) wo[i] = rng.uniform(-bound, bound);
        c.w_out = Var::param(std::move(wo), prefix + ".w_out");
        c.b_out = Var::param(Tensor::scalar(0.0), prefix + ".b_out");
        return c;
    }

    template <class F>
    void visit(F&& f) {
        f(w_in); f(b_in);
        block.visit(f);
        f(w_out); f(b_out);
    }

    CriticModel detached() const {
        CriticModel c;
        c.w_in = w_in.detach();
        c.b_in = b_in.detach();
        c.block = block.detached();
        c.w_out = w_out.detach();
        c.b_out = b_out.detach();
        return c;
    }
};

// Q from the modalities' specific sequences and actions: each action joins
// its sequence as an extra feature column, blocks are concatenated,
// projected, encoded, mean-pooled over time and mapped to a scalar.
inline Var critic_eval(const std::vector<Var>& specifics, const std::vector<Var>& actions,
                       const CriticModel& critic) {
    if (specifics.empty() || specifics.size() != actions.size())
        throw ShapeError("critic_eval: needs matching non-empty observation/action lists");
    const std::size_t L = specifics[0].value().rows();
    std::vector<Var> blocks;
    blocks.reserve(specifics.size());
    for (std::size_t m = 0; m < specifics.size(); ++m) {
        const Tensor& Z = specifics[m].value();
        const Tensor& A = actions[m].value();
        if (Z.rank() != 2 || Z.rows() != L)
            throw ShapeError("critic_eval: modality " + std::to_string(m) + " shape " +
                             shape_str(Z.shape()) + " inconsistent with L=" +
                             std::to_string(L));
        if (A.rank() != 1 || A.size() != L)
            throw ShapeError("critic_eval: action " + std::to_string(m) + " shape " +
                             shape_str(A.shape()) + " inconsistent with L=" +
                             std::to_string(L));
        blocks.push_back(concat_cols({specifics[m], reshape(actions[m], Shape{L, 1})}));
    }
    Var x = affine(concat_cols(blocks), critic.w_in, critic.b_in);
    Var enc = multi_head_encode(x, critic.block);
    Var pooled = mean_pool_time(enc);
    return add(matmul(pooled, critic.w_out), critic.b_out);
}

inline Var critic_eval(const std::array<Var, 3>& specifics,
                       const std::array<Var, 3>& actions, const CriticModel& critic) {
    return critic_eval(std::vector<Var>(specifics.begin(), specifics.end()),
                       std::vector<Var>(actions.begin(), actions.end()), critic);
}

// ---------------------------------------------------------------------------
// rewards and losses

// detached scalar: -|err| for regression, true-class softmax probability for
// classification
inline double compute_reward(const Tensor& prediction, double label,
                             const RewardSpec& spec) {
    if (spec.task == TaskKind::Regression) {
        return -std::abs(label - prediction.item());
    }
    const int cls = static_cast<int>(label);
    if (cls < 0 || cls >= spec.num_classes ||
        prediction.size() != static_cast<std::size_t>(spec.num_classes))
        throw std::out_of_range("compute_reward: class index " + std::to_string(cls) +
                                " outside [0," + std::to_string(spec.num_classes) + ")");
    double mx = prediction[0];
    for (std::size_t i = 1; i < prediction.size(); ++i) mx = std::max(mx, prediction[i]);
    double z = 0;
    for (std::size_t i = 0; i < prediction.size(); ++i) z += std::exp(prediction[i] - mx);
    return std::exp(prediction[static_cast<std::size_t>(cls)] - mx) / z;
}

// Q' = R + gamma * Q'' with Q'' = 0 at the terminal stage
inline double td_target(double r, const TdContext& ctx, const RewardSpec& spec) {
    if (!std::isfinite(r)) throw std::invalid_argument("td_target: non-finite reward");
    const double q_next = (ctx.is_terminal || !ctx.q_next) ? 0.0 : *ctx.q_next;
    return r + spec.gamma * q_next;
}

// (Q - Q')^2; qprime is detached so only critic parameters receive gradient
inline Var critic_loss(const Var& q, double qprime) {
    return square(add_scalar(q, -qprime));
}

// -Q; minimizing ascends Q through the actions into the policy models
inline Var policy_objective(const Var& q) { return neg(q); }

}  // namespace mmcl
