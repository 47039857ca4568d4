#pragma once

// Bias-corrected Adam over a fixed list of leaf Vars.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmcl/autodiff.hpp"
#include "mmcl/tensor.hpp"

namespace mmcl {

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class Adam {
public:
    explicit Adam(std::vector<Var> params, AdamHyper hyper = {})
        : params_(std::move(params)), hyper_(hyper) {
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (const Var& p : params_) {
            m_.push_back(Tensor::zeros(p.value().shape()));
            v_.push_back(Tensor::zeros(p.value().shape()));
        }
    }

    std::size_t step_count() const { return step_; }
    const AdamHyper& hyper() const { return hyper_; }
    const std::vector<Var>& params() const { return params_; }

    void set_lr(double lr) { hyper_.lr = lr; }

    void step() {
        ++step_;
        const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(step_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            Var& p = params_[k];
            const Tensor& g = p.grad();
            if (!g.all_finite())
                throw std::runtime_error(
                    "adam: non-finite gradient for parameter '" +
                    (p.name().empty() ? std::string("#") + std::to_string(k) : p.name()) +
                    "'");
            Tensor value = p.value();
            Tensor& m = m_[k];
            Tensor& v = v_[k];
            for (std::size_t i = 0; i < value.size(); ++i) {
                m[i] = hyper_.beta1 * m[i] + (1.0 - hyper_.beta1) * g[i];
                v[i] = hyper_.beta2 * v[i] + (1.0 - hyper_.beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                value[i] -= hyper_.lr * mhat / (std::sqrt(vhat) + hyper_.epsilon);
            }
            p.set_value(std::move(value));
        }
    }

    void zero_grad() {
        for (Var& p : params_) p.zero_grad();
    }

private:
    std::vector<Var> params_;
    AdamHyper hyper_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::size_t step_ = 0;
};

}  // namespace mmcl
