#pragma once

// Canned finite-difference verification: one check per primitive in the op
// catalog plus an end-to-end check of the composite training loss on a tiny
// model. Used by the gradcheck CLI command and the acceptance suite.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mmcl/autodiff.hpp"
#include "mmcl/dataset.hpp"
#include "mmcl/model.hpp"
#include "mmcl/rng.hpp"

namespace mmcl {

struct GradCheckEntry {
    std::string op;
    double max_rel_error = 0.0;
};

inline std::vector<GradCheckEntry> catalog_gradcheck(std::uint64_t seed = 2024) {
    Rng rng(seed);
    auto rand_t = [&](Shape shape, double lo = -2.0, double hi = 2.0) {
        Tensor t(std::move(shape));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
        return t;
    };
    auto offzero = [&](Shape shape) {
        Tensor t(std::move(shape));
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double mag = rng.uniform(0.2, 2.0);
            t[i] = rng.uniform() < 0.5 ? -mag : mag;
        }
        return t;
    };

    std::vector<GradCheckEntry> out;
    auto run = [&](const char* name, std::function<Var(const std::vector<Var>&)> fn,
                   std::vector<Tensor> inputs) {
        out.push_back({name, grad_check(fn, inputs)});
    };

    run("matmul(m,m)", [](const std::vector<Var>& v) { return sum_all(matmul(v[0], v[1])); },
        {rand_t({3, 4}), rand_t({4, 2})});
    run("matmul(v,m)", [](const std::vector<Var>& v) { return sum_all(matmul(v[0], v[1])); },
        {rand_t({4}), rand_t({4, 2})});
    run("matmul(m,v)", [](const std::vector<Var>& v) { return sum_all(matmul(v[0], v[1])); },
        {rand_t({3, 4}), rand_t({4})});
    run("dot", [](const std::vector<Var>& v) { return matmul(v[0], v[1]); },
        {rand_t({5}), rand_t({5})});
    run("transpose",
        [](const std::vector<Var>& v) { return sum_all(square(transpose(v[0]))); },
        {rand_t({3, 4})});
    run("add", [](const std::vector<Var>& v) { return sum_all(square(add(v[0], v[1]))); },
        {rand_t({3, 3}), rand_t({3, 3})});
    run("add(scalar)",
        [](const std::vector<Var>& v) { return sum_all(square(add(v[0], v[1]))); },
        {rand_t({3, 3}), rand_t({})});
    run("sub", [](const std::vector<Var>& v) { return sum_all(square(sub(v[0], v[1]))); },
        {rand_t({2, 3}), rand_t({2, 3})});
    run("mul", [](const std::vector<Var>& v) { return sum_all(mul(v[0], v[1])); },
        {rand_t({2, 3}), rand_t({2, 3})});
    run("mul(scalar)", [](const std::vector<Var>& v) { return sum_all(mul(v[0], v[1])); },
        {rand_t({2, 3}), rand_t({})});
    run("scalar_mul",
        [](const std::vector<Var>& v) { return sum_all(scalar_mul(v[0], -1.7)); },
        {rand_t({2, 3})});
    run("add_scalar",
        [](const std::vector<Var>& v) { return sum_all(square(add_scalar(v[0], 0.4))); },
        {rand_t({2, 3})});
    run("add_n",
        [](const std::vector<Var>& v) { return sum_all(square(add_n({v[0], v[1], v[2]}))); },
        {rand_t({2, 2}), rand_t({2, 2}), rand_t({2, 2})});
    run("scale_rows",
        [](const std::vector<Var>& v) { return sum_all(square(scale_rows(v[0], v[1]))); },
        {rand_t({3, 2}), rand_t({3})});
    run("scale_cols",
        [](const std::vector<Var>& v) { return sum_all(square(scale_cols(v[0], v[1]))); },
        {rand_t({3, 2}), rand_t({2})});
    run("add_bias",
        [](const std::vector<Var>& v) { return sum_all(square(add_bias(v[0], v[1]))); },
        {rand_t({3, 2}), rand_t({2})});
    run("concat_rows",
        [](const std::vector<Var>& v) { return sum_all(square(concat_rows({v[0], v[1]}))); },
        {rand_t({2, 3}), rand_t({1, 3})});
    run("concat_cols",
        [](const std::vector<Var>& v) { return sum_all(square(concat_cols({v[0], v[1]}))); },
        {rand_t({2, 2}), rand_t({2, 3})});
    run("slice_rows",
        [](const std::vector<Var>& v) { return sum_all(square(slice_rows(v[0], 1, 2))); },
        {rand_t({4, 2})});
    run("slice_cols",
        [](const std::vector<Var>& v) { return sum_all(square(slice_cols(v[0], 1, 2))); },
        {rand_t({2, 4})});
    run("slice_vec",
        [](const std::vector<Var>& v) { return sum_all(square(slice_vec(v[0], 1, 3))); },
        {rand_t({5})});
    run("gather_vec",
        [](const std::vector<Var>& v) {
            return sum_all(square(gather_vec(v[0], {0, 2})));
        },
        {rand_t({4})});
    run("reshape",
        [](const std::vector<Var>& v) { return sum_all(square(reshape(v[0], {6, 1}))); },
        {rand_t({2, 3})});
    run("pick", [](const std::vector<Var>& v) { return square(pick(v[0], 1)); },
        {rand_t({4})});
    run("sum_all", [](const std::vector<Var>& v) { return square(sum_all(v[0])); },
        {rand_t({3, 2})});
    run("mean_all", [](const std::vector<Var>& v) { return square(mean_all(v[0])); },
        {rand_t({3, 2})});
    run("sum_axis0",
        [](const std::vector<Var>& v) { return sum_all(square(sum_axis(v[0], 0))); },
        {rand_t({3, 2})});
    run("sum_axis1",
        [](const std::vector<Var>& v) { return sum_all(square(sum_axis(v[0], 1))); },
        {rand_t({3, 2})});
    run("mean_axis0",
        [](const std::vector<Var>& v) { return sum_all(square(mean_axis(v[0], 0))); },
        {rand_t({3, 2})});
    run("mean_axis1",
        [](const std::vector<Var>& v) { return sum_all(square(mean_axis(v[0], 1))); },
        {rand_t({3, 2})});
    run("mean_pool_time",
        [](const std::vector<Var>& v) { return sum_all(square(mean_pool_time(v[0]))); },
        {rand_t({4, 3})});
    run("sigmoid", [](const std::vector<Var>& v) { return sum_all(sigmoid(v[0])); },
        {rand_t({2, 3})});
    run("relu", [](const std::vector<Var>& v) { return sum_all(relu(v[0])); },
        {offzero({2, 3})});
    run("abs", [](const std::vector<Var>& v) { return sum_all(vabs(v[0])); },
        {offzero({2, 3})});
    run("square", [](const std::vector<Var>& v) { return sum_all(square(v[0])); },
        {rand_t({2, 3})});
    run("log", [](const std::vector<Var>& v) { return sum_all(vlog(v[0])); },
        {rand_t({2, 3}, 0.2, 3.0)});
    run("inv_or_zero", [](const std::vector<Var>& v) { return sum_all(inv_or_zero(v[0])); },
        {rand_t({2, 3}, 0.3, 3.0)});
    run("clamp01",
        [](const std::vector<Var>& v) { return sum_all(square(clamp01(v[0]))); },
        {rand_t({2, 3}, 0.1, 0.9)});
    run("min_elem",
        [](const std::vector<Var>& v) { return sum_all(square(min_elem(v[0], v[1]))); },
        {rand_t({2, 3}), rand_t({2, 3})});
    run("max_elem",
        [](const std::vector<Var>& v) { return sum_all(square(max_elem(v[0], v[1]))); },
        {rand_t({2, 3}), rand_t({2, 3})});
    run("softmax_rows",
        [](const std::vector<Var>& v) { return sum_all(square(softmax_rows(v[0]))); },
        {rand_t({3, 4})});
    run("softmax_vec",
        [](const std::vector<Var>& v) { return sum_all(square(softmax_vec(v[0]))); },
        {rand_t({4})});
    run("row_l2_norm",
        [](const std::vector<Var>& v) { return sum_all(square(row_l2_norm(v[0]))); },
        {rand_t({3, 4}, 0.3, 2.0)});
    run("affine",
        [](const std::vector<Var>& v) { return sum_all(square(affine(v[0], v[1], v[2]))); },
        {rand_t({3, 4}), rand_t({4, 2}), rand_t({2})});
    return out;
}

// Composite-loss gradient check on a tiny full model (L=4, d=8, d_ff=16,
// d_c=8 with 8 heads of width 1). Stop-gradient quantities are captured once
// and replayed so the finite-difference probe sees exactly the function the
// analytic gradient differentiates.
inline double end_to_end_gradcheck(std::uint64_t seed = 7) {
    MmclConfig cfg;
    cfg.d = 8;
    cfg.d_ff = 16;
    cfg.d_c = 8;
    cfg.batch_size = 2;
    cfg.seed = seed;
    cfg.alpha1 = 15.0;
    cfg.alpha2 = 5.0;

    SyntheticSpec spec;
    spec.n_samples = 2;
    spec.length = 4;
    spec.dims = {3, 4, 5};
    spec.segments = {{0, 2, 0}, {2, 4, 2}};
    spec.sigma = 0.4;
    spec.seed = seed + 1;
    SyntheticData data = generate_synthetic(spec);

    MmclModel model = MmclModel::init(cfg, spec.dims);
    std::vector<const Sample*> batch{&data.dataset.samples[0], &data.dataset.samples[1]};
    const double q_next = 0.37;  // exercises the gamma * Q'' path

    FrozenStep frozen;
    build_batch_loss(model, batch, q_next, /*terminal=*/false, &frozen);

    std::vector<Tensor> param_values;
    model.visit_params([&](Var& v) { param_values.push_back(v.value()); });

    auto fn = [&](const std::vector<Var>& vars) {
        std::size_t i = 0;
        model.visit_params([&](Var& v) { v = vars[i++]; });
        return build_batch_loss(model, batch, q_next, false, &frozen).total;
    };
    return grad_check(fn, param_values);
}

}  // namespace mmcl
