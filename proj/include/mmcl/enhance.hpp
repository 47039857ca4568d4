#pragma once

// Crucial Common feature Enhancement (CCE): single-head self-attention over
// one modality's common features, a feed-forward layer, and a residual sum
// of the two outputs.

#include <cmath>
#include <string>
#include <vector>

#include "mmcl/autodiff.hpp"
#include "mmcl/rng.hpp"
#include "mmcl/tensor.hpp"

namespace mmcl {

inline Tensor glorot_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(Shape{fan_in, fan_out});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

struct EnhanceBlock {
    Var wq, bq;
    Var wk, bk;
    Var wv, bv;
    Var ffn_w1, ffn_b1;
    Var ffn_w2, ffn_b2;

    static EnhanceBlock init(std::size_t d, std::size_t d_ff, Rng& rng,
                             const std::string& prefix) {
        EnhanceBlock b;
        b.wq = Var::param(glorot_uniform(rng, d, d), prefix + ".wq");
        b.bq = Var::param(Tensor::zeros({d}), prefix + ".bq");
        b.wk = Var::param(glorot_uniform(rng, d, d), prefix + ".wk");
        b.bk = Var::param(Tensor::zeros({d}), prefix + ".bk");
        b.wv = Var::param(glorot_uniform(rng, d, d), prefix + ".wv");
        b.bv = Var::param(Tensor::zeros({d}), prefix + ".bv");
        b.ffn_w1 = Var::param(glorot_uniform(rng, d, d_ff), prefix + ".ffn_w1");
        b.ffn_b1 = Var::param(Tensor::zeros({d_ff}), prefix + ".ffn_b1");
        b.ffn_w2 = Var::param(glorot_uniform(rng, d_ff, d), prefix + ".ffn_w2");
        b.ffn_b2 = Var::param(Tensor::zeros({d}), prefix + ".ffn_b2");
        return b;
    }

    std::size_t dim() const { return wq.value().rows(); }

    template <class F>
    void visit(F&& f) {
        f(wq); f(bq); f(wk); f(bk); f(wv); f(bv);
        f(ffn_w1); f(ffn_b1); f(ffn_w2); f(ffn_b2);
    }

    EnhanceBlock detached() const {
        EnhanceBlock b;
        b.wq = wq.detach(); b.bq = bq.detach();
        b.wk = wk.detach(); b.bk = bk.detach();
        b.wv = wv.detach(); b.bv = bv.detach();
        b.ffn_w1 = ffn_w1.detach(); b.ffn_b1 = ffn_b1.detach();
        b.ffn_w2 = ffn_w2.detach(); b.ffn_b2 = ffn_b2.detach();
        return b;
    }
};

// row-stochastic attention matrix softmax(Q K^T / sqrt(d))
inline Var attention_rows(const Var& zc, const EnhanceBlock& block) {
    const std::size_t d = block.dim();
    Var q = affine(zc, block.wq, block.bq);
    Var k = affine(zc, block.wk, block.bk);
    Var scores = scalar_mul(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d)));
    return softmax_rows(scores);
}

inline Var self_attention(const Var& zc, const EnhanceBlock& block) {
    const Tensor& Z = zc.value();
    if (Z.rank() != 2 || Z.cols() != block.dim())
        throw ShapeError("self_attention: input " + shape_str(Z.shape()) +
                         " does not match block dim " + std::to_string(block.dim()));
    Var v = affine(zc, block.wv, block.bv);
    return matmul(attention_rows(zc, block), v);
}

// attn + FFN(attn); the residual sums the two sublayer outputs
inline Var enhance(const Var& zc, const EnhanceBlock& block) {
    Var attn = self_attention(zc, block);
    Var hidden = relu(affine(attn, block.ffn_w1, block.ffn_b1));
    Var ffn_out = affine(hidden, block.ffn_w2, block.ffn_b2);
    return add(attn, ffn_out);
}

}  // namespace mmcl
