// Acceptance suite: one line per criterion, nonzero exit if any fails.
// The two training-dynamics criteria (complementarity ratio and ablation
// ordering) live in acceptance_blocked.cpp.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "mmcl/adam.hpp"
#include "mmcl/autodiff.hpp"
#include "mmcl/checkpoint.hpp"
#include "mmcl/config.hpp"
#include "mmcl/dataset.hpp"
#include "mmcl/decouple.hpp"
#include "mmcl/enhance.hpp"
#include "mmcl/gradcheck_suite.hpp"
#include "mmcl/infogain.hpp"
#include "mmcl/metrics.hpp"
#include "mmcl/mining.hpp"
#include "mmcl/model.hpp"
#include "mmcl/rng.hpp"

using namespace mmcl;

namespace {

int g_failures = 0;

void report(int id, const char* desc, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", id, desc,
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

nlohmann::json load_json(const std::string& path) {
    std::ifstream f(path);
    nlohmann::json j;
    f >> j;
    return j;
}

const std::string kConfigDir = MMCL_CONFIG_DIR;
const std::string kGoldenDir = MMCL_GOLDEN_DIR;

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// --- criterion 1 -----------------------------------------------------------

void criterion1() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0;
    std::string worst_op = "-";
    for (const GradCheckEntry& e : catalog_gradcheck()) {
        if (e.max_rel_error > worst) {
            worst = e.max_rel_error;
            worst_op = e.op;
        }
    }
    const double e2e = end_to_end_gradcheck();
    if (e2e > worst) {
        worst = e2e;
        worst_op = "end-to-end";
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char buf[160];
    std::snprintf(buf, sizeof buf, "max rel error %.3e at %s, %.1f s", worst,
                  worst_op.c_str(), secs);
    report(1, "gradient suite over every primitive and the end-to-end loss",
           worst < 1e-4 && secs < 60.0, buf);
}

// --- criterion 2 -----------------------------------------------------------

void criterion2() {
    Rng rng(2024);
    bool row_sums_ok = true, ordering_ok = true, scaling_ok = true;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t L = 2 + rng.below(4), d = 2 + rng.below(3);
        auto rand_m = [&](void) {
            Tensor t(Shape{L, d});
            for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-2, 2);
            return t;
        };
        Tensor z = rand_m(), o1 = rand_m(), o2 = rand_m();
        DecoupledPair dp = decouple(Var(z), {Var(o1), Var(o2)}, CompareMode::Minor);
        for (const Var* w : {&dp.w_common, &dp.w_specific})
            for (std::size_t i = 0; i < L; ++i) {
                double s = 0;
                for (std::size_t j = 0; j < L; ++j) s += w->value().at(i, j);
                row_sums_ok = row_sums_ok && std::abs(s - 1.0) < 1e-9;
            }

        std::vector<Var> sims{pairwise_cosine(Var(z), Var(o1)),
                              pairwise_cosine(Var(z), Var(o2))};
        Tensor lo = combine_similarities(sims, CompareMode::Minor).value();
        Tensor mid = combine_similarities(sims, CompareMode::Mean).value();
        Tensor hi = combine_similarities(sims, CompareMode::Major).value();
        for (std::size_t i = 0; i < lo.size(); ++i)
            ordering_ok = ordering_ok && lo[i] <= mid[i] + 1e-15 && mid[i] <= hi[i] + 1e-15;

        Tensor z2 = z;
        const double c = rng.uniform(0.1, 8.0);
        const std::size_t row = rng.below(L);
        for (std::size_t j = 0; j < d; ++j) z2.at(row, j) *= c;
        DecoupledPair dp2 = decouple(Var(z2), {Var(o1), Var(o2)}, CompareMode::Minor);
        scaling_ok =
            scaling_ok && max_abs_diff(dp.w_common.value(), dp2.w_common.value()) < 1e-12;
    }

    // exact joint permutation equivariance on integer-valued inputs (L = 2,
    // swap permutation: every inner sum has two terms, so IEEE commutativity
    // makes both sides bitwise identical)
    bool perm_ok = true;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t d = 2 + rng.below(5);
        auto int_m = [&](void) {
            Tensor t(Shape{2, d});
            for (std::size_t i = 0; i < t.size(); ++i)
                t[i] = static_cast<double>(static_cast<long>(rng.below(9)) - 4);
            return t;
        };
        auto swap_rows = [&](const Tensor& t) {
            Tensor s(Shape{2, d});
            for (std::size_t j = 0; j < d; ++j) {
                s.at(0, j) = t.at(1, j);
                s.at(1, j) = t.at(0, j);
            }
            return s;
        };
        Tensor z = int_m(), o1 = int_m(), o2 = int_m();
        DecoupledPair a = decouple(Var(z), {Var(o1), Var(o2)}, CompareMode::Minor);
        DecoupledPair b = decouple(Var(swap_rows(z)), {Var(swap_rows(o1)), Var(swap_rows(o2))},
                                   CompareMode::Minor);
        const Tensor &W = a.w_common.value(), &Wp = b.w_common.value();
        perm_ok = perm_ok && Wp.at(0, 0) == W.at(1, 1) && Wp.at(0, 1) == W.at(1, 0) &&
                  Wp.at(1, 0) == W.at(0, 1) && Wp.at(1, 1) == W.at(0, 0);
        const Tensor &C = a.common.value(), &Cp = b.common.value();
        for (std::size_t j = 0; j < d; ++j)
            perm_ok = perm_ok && Cp.at(0, j) == C.at(1, j) && Cp.at(1, j) == C.at(0, j);
    }

    char buf[160];
    std::snprintf(buf, sizeof buf, "row sums %s, mode ordering %s, scaling %s, permutation %s",
                  row_sums_ok ? "ok" : "BAD", ordering_ok ? "ok" : "BAD",
                  scaling_ok ? "ok" : "BAD", perm_ok ? "ok" : "BAD");
    report(2, "decoupling invariants on 200 random tri-modal inputs",
           row_sums_ok && ordering_ok && scaling_ok && perm_ok, buf);
}

// --- criterion 3 -----------------------------------------------------------

void criterion3() {
    // frozen brute-force oracle values for the L=2, d=2 decouple hand case
    const double r2 = 1.0 / std::sqrt(2.0);
    DecoupledPair dp = decouple(Var(Tensor::row_major(2, 2, {1, 0, 0, 1})),
                                {Var(Tensor::row_major(2, 2, {1, 0, r2, r2}))},
                                CompareMode::Minor);
    const Tensor wc_exp =
        Tensor::row_major(2, 2, {0.58578643762690497, 0.41421356237309509, 0.0, 1.0});
    const Tensor ws_exp =
        Tensor::row_major(2, 2, {0.0, 1.0, 0.77345908033901356, 0.22654091966098638});
    const double err_dec =
        std::max({max_abs_diff(dp.w_common.value(), wc_exp),
                  max_abs_diff(dp.w_specific.value(), ws_exp),
                  max_abs_diff(dp.common.value(), wc_exp),
                  max_abs_diff(dp.specific.value(), ws_exp)});

    // frozen independent attention oracle values for the L=3, d=2 case
    EnhanceBlock b;
    b.wq = Var::param(Tensor::row_major(2, 2, {0.2, -0.3, 0.4, 0.1}), "wq");
    b.bq = Var::param(Tensor::vec({0.05, -0.05}), "bq");
    b.wk = Var::param(Tensor::row_major(2, 2, {-0.1, 0.6, 0.5, -0.2}), "wk");
    b.bk = Var::param(Tensor::vec({0.0, 0.1}), "bk");
    b.wv = Var::param(Tensor::row_major(2, 2, {0.7, 0.3, -0.4, 0.8}), "wv");
    b.bv = Var::param(Tensor::vec({0.2, -0.1}), "bv");
    b.ffn_w1 = Var::param(Tensor::zeros({2, 4}), "w1");
    b.ffn_b1 = Var::param(Tensor::zeros({4}), "b1");
    b.ffn_w2 = Var::param(Tensor::zeros({4, 2}), "w2");
    b.ffn_b2 = Var::param(Tensor::zeros({2}), "b2");
    Tensor got =
        self_attention(Var(Tensor::row_major(3, 2, {0.5, -1.0, 1.5, 0.25, -0.75, 2.0})), b)
            .value();
    const Tensor attn_exp = Tensor::row_major(
        3, 2,
        {0.28084182963789123, 0.34768512565613546, -0.1728840914469838,
         0.68080420324869495, 0.20784146150479677, 0.50807186232941315});
    const double err_attn = max_abs_diff(got, attn_exp);

    char buf[120];
    std::snprintf(buf, sizeof buf, "decouple err %.2e, attention err %.2e", err_dec,
                  err_attn);
    report(3, "hand cases match independent brute-force oracles",
           err_dec < 1e-10 && err_attn < 1e-10, buf);
}

// --- criterion 4 -----------------------------------------------------------

void criterion4() {
    // (a) critic-only TD training on a frozen batch with constant reward
    Rng rng(19);
    const std::size_t L = 3, d = 3, dc = 8, batch = 4;
    CriticModel critic = CriticModel::init(d, dc, rng);
    std::vector<std::array<Tensor, 3>> zs(batch), actions(batch);
    for (std::size_t s = 0; s < batch; ++s)
        for (int m = 0; m < 3; ++m) {
            Tensor z(Shape{L, d});
            for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.uniform(-1, 1);
            zs[s][m] = z;
            Tensor a(Shape{L});
            for (std::size_t i = 0; i < L; ++i) a[i] = rng.uniform(0.1, 0.9);
            actions[s][m] = a;
        }
    const double qprime = -0.4;
    std::vector<Var> critic_params;
    critic.visit([&](Var& v) { critic_params.push_back(v); });
    Adam opt(critic_params, AdamHyper{.lr = 1e-3});
    double loss_value = 1.0;
    int steps = 0;
    for (; steps < 2000 && loss_value >= 1e-4; ++steps) {
        std::vector<Var> terms;
        for (std::size_t s = 0; s < batch; ++s) {
            std::array<Var, 3> z{Var(zs[s][0]), Var(zs[s][1]), Var(zs[s][2])};
            std::array<Var, 3> a{Var(actions[s][0]), Var(actions[s][1]), Var(actions[s][2])};
            terms.push_back(critic_loss(critic_eval(z, a, critic), qprime));
        }
        Var loss = scalar_mul(add_n(terms), 1.0 / static_cast<double>(batch));
        loss_value = loss.value().item();
        if (loss_value < 1e-4) break;
        opt.zero_grad();
        backward(loss);
        opt.step();
    }
    const bool td_ok = loss_value < 1e-4;

    // (b) one small-lr policy step with frozen critic never decreases Q
    int ascent_failures = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng prng(seed * 97);
        CriticModel c2 = CriticModel::init(2, 8, prng);
        std::array<PolicyModel, 3> policies{PolicyModel::init(2, prng, "p0"),
                                            PolicyModel::init(2, prng, "p1"),
                                            PolicyModel::init(2, prng, "p2")};
        std::vector<std::array<Tensor, 3>> obs(3);
        for (auto& sample : obs)
            for (int m = 0; m < 3; ++m) {
                Tensor z(Shape{3, 2});
                for (std::size_t i = 0; i < z.size(); ++i) z[i] = prng.uniform(-1, 1);
                sample[m] = z;
            }
        auto mean_q = [&]() {
            std::vector<Var> qs;
            for (auto& sample : obs) {
                std::array<Var, 3> z{Var(sample[0]), Var(sample[1]), Var(sample[2])};
                std::array<Var, 3> a;
                for (int m = 0; m < 3; ++m) a[m] = policy_act(z[m], policies[m]);
                qs.push_back(critic_eval(z, a, c2.detached()));
            }
            return scalar_mul(add_n(qs), 1.0 / 3.0);
        };
        Var q_before = mean_q();
        std::vector<Var> policy_params;
        for (auto& p : policies) p.visit([&](Var& v) { policy_params.push_back(v); });
        Adam popt(policy_params, AdamHyper{.lr = 1e-4});
        popt.zero_grad();
        backward(policy_objective(q_before));
        popt.step();
        if (mean_q().value().item() < q_before.value().item() - 1e-8) ++ascent_failures;
    }

    char buf[160];
    std::snprintf(buf, sizeof buf, "TD loss %.2e after %d steps, ascent failures %d/10",
                  loss_value, steps, ascent_failures);
    report(4, "actor-critic sanity: TD fixed point and policy ascent",
           td_ok && ascent_failures == 0, buf);
}

// --- criterion 5 -----------------------------------------------------------

void criterion5() {
    SyntheticSpec spec =
        synthetic_spec_from_json(load_json(kConfigDir + "/overfit.spec.json"));
    MmclConfig cfg = config_from_json(load_json(kConfigDir + "/overfit.config.json"));
    SyntheticData data = generate_synthetic(spec);
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult r = train(cfg, data.dataset);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::vector<double> preds = predict_dataset(r.model, data.dataset);
    std::vector<double> labels;
    for (const Sample& s : data.dataset.samples) labels.push_back(s.label);
    const double mae = regression_metrics(preds, labels).mae;
    char buf[120];
    std::snprintf(buf, sizeof buf, "train MAE %.4f after %zu epochs in %.0f s", mae,
                  cfg.epochs, secs);
    report(5, "64-sample synthetic overfit run (alpha1=15, alpha2=5, gamma=0.5)",
           mae < 0.05 && cfg.epochs <= 500 && secs < 300.0, buf);
}

// --- criterion 8 -----------------------------------------------------------

void criterion8() {
    bool ok = true;
    std::string detail = "hand cases exact";

    RegressionMetrics rm = regression_metrics({1, -1, 2}, {1, 1, 2});
    ok = ok && std::abs(rm.acc2 - 2.0 / 3.0) < 1e-15 && std::abs(rm.mae - 2.0 / 3.0) < 1e-15 &&
         std::abs(rm.f1 - 0.8) < 1e-12;

    ClassificationMetrics cm =
        classification_metrics({0, 1, 1, 2, 2, 2}, {0, 0, 1, 1, 2, 2}, 3);
    ok = ok && std::abs(cm.per_class[0].f1 - 2.0 / 3.0) < 1e-12 &&
         std::abs(cm.per_class[1].f1 - 0.5) < 1e-12 &&
         std::abs(cm.per_class[2].f1 - 0.8) < 1e-12 &&
         std::abs(cm.per_class[0].acc - 5.0 / 6.0) < 1e-12 &&
         std::abs(cm.per_class[1].acc - 4.0 / 6.0) < 1e-12;

    double worst_entropy = 0;
    for (int C = 2; C <= 8; ++C) {
        std::vector<double> u(static_cast<std::size_t>(C), 1.0 / C);
        worst_entropy = std::max(worst_entropy, std::abs(entropy(u) - std::log2(double(C))));
    }
    ok = ok && worst_entropy < 1e-12;
    if (!ok) detail = "mismatch against hand-computed values";
    char buf[120];
    std::snprintf(buf, sizeof buf, "%s; uniform-entropy err %.2e", detail.c_str(),
                  worst_entropy);
    report(8, "metrics match hand-computed confusion fixtures", ok, buf);
}

// --- criterion 9 -----------------------------------------------------------

void criterion9() {
    Rng rng(101);
    const std::size_t n = 600, dim = 8;
    const int C = 3;
    FeatureMatrix weak, noise, leak;
    std::vector<int> labels;
    std::vector<std::vector<double>> means(C, std::vector<double>(dim));
    for (auto& mu : means)
        for (double& v : mu) v = 0.35 * rng.normal();
    for (std::size_t i = 0; i < n; ++i) {
        const int y = static_cast<int>(rng.below(C));
        labels.push_back(y);
        std::vector<double> f(dim), z(dim), l(C, 0.0);
        for (std::size_t j = 0; j < dim; ++j) {
            f[j] = means[static_cast<std::size_t>(y)][j] + rng.normal();
            z[j] = rng.normal();
        }
        l[static_cast<std::size_t>(y)] = 1.0;
        weak.push_back(std::move(f));
        noise.push_back(std::move(z));
        leak.push_back(std::move(l));
    }
    const double g_dup = *info_gain_pair(weak, weak, labels, C);
    const double g_noise = *info_gain_pair(weak, noise, labels, C);
    const double g_leak = *info_gain_pair(weak, leak, labels, C);
    char buf[120];
    std::snprintf(buf, sizeof buf, "duplicate %.3f, noise %.3f, label-leak %.3f", g_dup,
                  g_noise, g_leak);
    report(9, "info-gain protocol oracle runs",
           std::abs(g_dup) <= 0.05 && g_noise <= 0.05 && g_leak > 0.8, buf);
}

// --- criterion 10 ----------------------------------------------------------

void criterion10() {
    auto slurp = [](const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)),
                           std::istreambuf_iterator<char>());
    };
    bool golden_ok = true;
    {
        const std::string bytes = slurp(kGoldenDir + "/mat_3x2_f64.mmf");
        Tensor m = decode_matrix(bytes);
        const double expected[6] = {1.5, -2.25, 0.0, 1e300, -0.001, 42.0};
        for (std::size_t i = 0; i < 6; ++i) golden_ok = golden_ok && m[i] == expected[i];
        golden_ok = golden_ok && encode_matrix(m) == bytes;
    }
    {
        const std::string bytes = slurp(kGoldenDir + "/mat_2x3_f32.mmf");
        Tensor m = decode_matrix(bytes);
        golden_ok = golden_ok && encode_matrix(m, true) == bytes;
    }
    {
        const std::string bytes = slurp(kGoldenDir + "/mat_0x4_f64.mmf");
        Tensor m = decode_matrix(bytes);
        golden_ok = golden_ok && m.rows() == 0 && m.cols() == 4 &&
                    encode_matrix(m) == bytes;
    }

    // inference checkpoint carries no critic tensors
    SyntheticSpec spec =
        synthetic_spec_from_json(load_json(kConfigDir + "/overfit.spec.json"));
    spec.n_samples = 8;
    MmclConfig cfg = config_from_json(load_json(kConfigDir + "/overfit.config.json"));
    cfg.epochs = 1;
    SyntheticData data = generate_synthetic(spec);
    TrainResult r = train(cfg, data.dataset);
    const std::string path = "acceptance_ckpt.mmck";
    save_checkpoint(path, r.model);
    bool no_critic = true;
    std::size_t keys = 0;
    for (const std::string& k : checkpoint_keys(path)) {
        ++keys;
        no_critic = no_critic && k.rfind("critic.", 0) != 0;
    }
    std::remove(path.c_str());
    char buf[120];
    std::snprintf(buf, sizeof buf, "golden files %s, %zu checkpoint keys, critic-free %s",
                  golden_ok ? "bit-exact" : "MISMATCH", keys, no_critic ? "yes" : "NO");
    report(10, "format stability: MMF golden files and inference checkpoints",
           golden_ok && no_critic && keys > 0, buf);
}

}  // namespace

int main() {
    criterion1();
    criterion2();
    criterion3();
    criterion4();
    criterion5();
    criterion8();
    criterion9();
    criterion10();
    std::printf("%s: %d criterion(s) failed\n", g_failures == 0 ? "OK" : "FAILURE",
                g_failures);
    return g_failures == 0 ? 0 : 1;
}
