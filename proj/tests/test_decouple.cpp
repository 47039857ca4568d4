#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "mmcl/autodiff.hpp"
#include "mmcl/decouple.hpp"
#include "mmcl/rng.hpp"
#include "mmcl/tensor.hpp"

using namespace mmcl;

// ---------------------------------------------------------------------------
// Brute-force oracle: plain scalar loops, no mmcl ops. Used to pin the hand
// case and to cross-check random inputs.

namespace oracle {

using Mat = std::vector<std::vector<double>>;

Mat cosine(const Mat& a, const Mat& b) {
    const std::size_t L = a.size(), d = a[0].size();
    Mat out(L, std::vector<double>(L, 0.0));
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j) {
            double na = 0, nb = 0, dp = 0;
            for (std::size_t k = 0; k < d; ++k) {
                na += a[i][k] * a[i][k];
                nb += b[j][k] * b[j][k];
                dp += a[i][k] * b[j][k];
            }
            na = std::sqrt(na);
            nb = std::sqrt(nb);
            out[i][j] = (na == 0.0 || nb == 0.0) ? 0.0 : dp / (na * nb);
        }
    return out;
}

Mat norm_rows(const Mat& m) {
    const std::size_t L = m.size();
    Mat out(L, std::vector<double>(L, 0.0));
    for (std::size_t i = 0; i < L; ++i) {
        double s = 0;
        for (double v : m[i]) s += v;
        for (std::size_t j = 0; j < L; ++j)
            out[i][j] = s > 0 ? m[i][j] / s : 1.0 / static_cast<double>(L);
    }
    return out;
}

struct Result {
    Mat wc, ws, zc, zs;
};

Result decouple_minor(const Mat& z, const std::vector<Mat>& others) {
    const std::size_t L = z.size(), d = z[0].size();
    Mat s = cosine(z, others[0]);
    for (std::size_t k = 1; k < others.size(); ++k) {
        Mat sk = cosine(z, others[k]);
        for (std::size_t i = 0; i < L; ++i)
            for (std::size_t j = 0; j < L; ++j) s[i][j] = std::min(s[i][j], sk[i][j]);
    }
    for (auto& row : s)
        for (double& v : row) v = std::min(std::max(v, 0.0), 1.0);
    Mat raw_s(L, std::vector<double>(L));
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j) raw_s[i][j] = 1.0 - s[i][j];
    Result r;
    r.wc = norm_rows(s);
    r.ws = norm_rows(raw_s);
    r.zc.assign(L, std::vector<double>(d, 0.0));
    r.zs.assign(L, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t k = 0; k < L; ++k)
            for (std::size_t j = 0; j < d; ++j) {
                r.zc[i][j] += r.wc[i][k] * z[k][j];
                r.zs[i][j] += r.ws[i][k] * z[k][j];
            }
    return r;
}

}  // namespace oracle

namespace {

Tensor to_tensor(const oracle::Mat& m) {
    Tensor t(Shape{m.size(), m[0].size()});
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = 0; j < m[0].size(); ++j) t.at(i, j) = m[i][j];
    return t;
}

Tensor random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.5,
                     double hi = 1.5) {
    Tensor t(Shape{rows, cols});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("pairwise cosine: self similarity diagonal") {
    Rng rng(1);
    Var z(random_matrix(rng, 4, 3));
    Tensor s = pairwise_cosine(z, z).value();
    for (std::size_t i = 0; i < 4; ++i) CHECK(s.at(i, i) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pairwise cosine: orthogonal rows give zero") {
    Var a(Tensor::row_major(2, 2, {1, 0, 0, 2}));
    Var b(Tensor::row_major(2, 2, {0, 3, 5, 0}));
    Tensor s = pairwise_cosine(a, b).value();
    CHECK(s.at(0, 0) == doctest::Approx(0.0));
    CHECK(s.at(1, 1) == doctest::Approx(0.0));
    CHECK(s.at(0, 1) == doctest::Approx(1.0));
    CHECK(s.at(1, 0) == doctest::Approx(1.0));
}

TEST_CASE("pairwise cosine: analytic 1/sqrt(2) entry") {
    Var a(Tensor::row_major(1, 2, {1, 0}));
    Var b(Tensor::row_major(1, 2, {1, 1}));
    CHECK(pairwise_cosine(a, b).value().at(0, 0) ==
          doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("pairwise cosine: zero-norm rows yield zero not NaN") {
    Var a(Tensor::row_major(2, 2, {0, 0, 1, 1}));
    Var b(Tensor::row_major(2, 2, {1, 2, 0, 0}));
    Tensor s = pairwise_cosine(a, b).value();
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::isfinite(s[i]));
    CHECK(s.at(0, 0) == 0.0);
    CHECK(s.at(0, 1) == 0.0);
    CHECK(s.at(1, 1) == 0.0);
}

TEST_CASE("pairwise cosine: entries bounded and symmetric under transpose") {
    Rng rng(13);
    for (int t = 0; t < 20; ++t) {
        Var a(random_matrix(rng, 3, 4));
        Var b(random_matrix(rng, 3, 4));
        Tensor sab = pairwise_cosine(a, b).value();
        Tensor sba = pairwise_cosine(b, a).value();
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) {
                CHECK(sab.at(i, j) >= -1.0 - 1e-12);
                CHECK(sab.at(i, j) <= 1.0 + 1e-12);
                CHECK(sab.at(i, j) == doctest::Approx(sba.at(j, i)).epsilon(1e-12));
            }
    }
}

TEST_CASE("pairwise cosine rejects mismatched shapes") {
    Var a(Tensor(Shape{2, 3}));
    Var b(Tensor(Shape{3, 3}));
    CHECK_THROWS_AS(pairwise_cosine(a, b), ShapeError);
}

TEST_CASE("combine_similarities basic modes") {
    Var a(Tensor::row_major(1, 2, {0.2, 0.6}));
    Var b(Tensor::row_major(1, 2, {0.8, 0.1}));
    Tensor lo = combine_similarities(std::vector<Var>{a, b}, CompareMode::Minor).value();
    Tensor hi = combine_similarities(std::vector<Var>{a, b}, CompareMode::Major).value();
    Tensor mid = combine_similarities(std::vector<Var>{a, b}, CompareMode::Mean).value();
    CHECK(lo.at(0, 0) == doctest::Approx(0.2));
    CHECK(hi.at(0, 0) == doctest::Approx(0.8));
    CHECK(mid.at(0, 0) == doctest::Approx(0.5));
    CHECK(mid.at(0, 1) == doctest::Approx(0.35));
}

TEST_CASE("combine_similarities of identical matrices is mode-independent") {
    Rng rng(3);
    Var m(random_matrix(rng, 3, 3));
    Tensor lo = combine_similarities(std::vector<Var>{m, m}, CompareMode::Minor).value();
    Tensor hi = combine_similarities(std::vector<Var>{m, m}, CompareMode::Major).value();
    Tensor mid = combine_similarities(std::vector<Var>{m, m}, CompareMode::Mean).value();
    CHECK(max_abs_diff(lo, m.value()) == 0.0);
    CHECK(max_abs_diff(hi, m.value()) == 0.0);
    CHECK(max_abs_diff(mid, m.value()) < 1e-15);
}

TEST_CASE("combine_similarities rejects empty list") {
    CHECK_THROWS(combine_similarities(std::vector<Var>{}, CompareMode::Minor));
}

TEST_CASE("decouple hand case matches frozen brute-force oracle values") {
    const double r2 = 1.0 / std::sqrt(2.0);
    Var z(Tensor::row_major(2, 2, {1, 0, 0, 1}));
    Var other(Tensor::row_major(2, 2, {1, 0, r2, r2}));
    DecoupledPair dp = decouple(z, {other}, CompareMode::Minor);

    // frozen from the independent oracle run
    const Tensor wc_exp = Tensor::row_major(
        2, 2, {0.58578643762690497, 0.41421356237309509, 0.0, 1.0});
    const Tensor ws_exp = Tensor::row_major(
        2, 2, {0.0, 1.0, 0.77345908033901356, 0.22654091966098638});

    CHECK(max_abs_diff(dp.w_common.value(), wc_exp) < 1e-12);
    CHECK(max_abs_diff(dp.w_specific.value(), ws_exp) < 1e-12);
    // z is the identity, so Z_c == W_c and Z_s == W_s here
    CHECK(max_abs_diff(dp.common.value(), wc_exp) < 1e-12);
    CHECK(max_abs_diff(dp.specific.value(), ws_exp) < 1e-12);

    // and the embedded oracle agrees with itself end to end
    oracle::Result r = oracle::decouple_minor({{1, 0}, {0, 1}}, {{{1, 0}, {r2, r2}}});
    CHECK(max_abs_diff(dp.w_common.value(), to_tensor(r.wc)) < 1e-12);
    CHECK(max_abs_diff(dp.specific.value(), to_tensor(r.zs)) < 1e-12);
}

TEST_CASE("decouple matches brute-force oracle on random tri-modal inputs") {
    Rng rng(77);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t L = 2 + rng.below(4), d = 2 + rng.below(3);
        oracle::Mat z(L, std::vector<double>(d)), o1 = z, o2 = z;
        for (std::size_t i = 0; i < L; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                z[i][j] = rng.uniform(-2, 2);
                o1[i][j] = rng.uniform(-2, 2);
                o2[i][j] = rng.uniform(-2, 2);
            }
        DecoupledPair dp = decouple(Var(to_tensor(z)), {Var(to_tensor(o1)), Var(to_tensor(o2))},
                                    CompareMode::Minor);
        oracle::Result r = oracle::decouple_minor(z, {o1, o2});
        CHECK(max_abs_diff(dp.w_common.value(), to_tensor(r.wc)) < 1e-12);
        CHECK(max_abs_diff(dp.w_specific.value(), to_tensor(r.ws)) < 1e-12);
        CHECK(max_abs_diff(dp.common.value(), to_tensor(r.zc)) < 1e-12);
        CHECK(max_abs_diff(dp.specific.value(), to_tensor(r.zs)) < 1e-12);
    }
}

TEST_CASE("decouple row sums equal one and weights are nonnegative") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t L = 2 + rng.below(5), d = 2 + rng.below(4);
        Var z(random_matrix(rng, L, d));
        std::vector<Var> others{Var(random_matrix(rng, L, d)), Var(random_matrix(rng, L, d))};
        const CompareMode mode = static_cast<CompareMode>(rng.below(3));
        DecoupledPair dp = decouple(z, others, mode);
        for (const Var* w : {&dp.w_common, &dp.w_specific}) {
            const Tensor& W = w->value();
            for (std::size_t i = 0; i < L; ++i) {
                double s = 0;
                for (std::size_t j = 0; j < L; ++j) {
                    CHECK(W.at(i, j) >= 0.0);
                    s += W.at(i, j);
                }
                CHECK(std::abs(s - 1.0) < 1e-9);
            }
        }
    }
}

TEST_CASE("decouple degenerate fallback when all similarities non-positive") {
    // rows of z orthogonal or opposed to the other modality everywhere
    Var z(Tensor::row_major(2, 2, {1, 0, 0, 1}));
    Var other(Tensor::row_major(2, 2, {-1, 0, 0, -1}));
    DecoupledPair dp = decouple(z, {other}, CompareMode::Minor);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            CHECK(dp.w_common.value().at(i, j) == doctest::Approx(0.5));
            CHECK(dp.w_specific.value().at(i, j) == doctest::Approx(0.5));
        }
}

TEST_CASE("decouple scale invariance under positive row scaling") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t L = 3, d = 4;
        Tensor z = random_matrix(rng, L, d);
        Tensor o1 = random_matrix(rng, L, d);
        Tensor o2 = random_matrix(rng, L, d);
        DecoupledPair base = decouple(Var(z), {Var(o1), Var(o2)}, CompareMode::Minor);

        Tensor z2 = z, o1b = o1;
        const double cz = rng.uniform(0.1, 9.0);
        const double co = rng.uniform(0.1, 9.0);
        const std::size_t rz = rng.below(L), ro = rng.below(L);
        for (std::size_t j = 0; j < d; ++j) {
            z2.at(rz, j) *= cz;
            o1b.at(ro, j) *= co;
        }
        DecoupledPair scaled = decouple(Var(z2), {Var(o1b), Var(o2)}, CompareMode::Minor);
        CHECK(max_abs_diff(base.w_common.value(), scaled.w_common.value()) < 1e-12);
        CHECK(max_abs_diff(base.w_specific.value(), scaled.w_specific.value()) < 1e-12);
    }
}

TEST_CASE("mode ordering minor <= mean <= major entrywise") {
    Rng rng(41);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t L = 2 + rng.below(4), d = 3;
        Var z(random_matrix(rng, L, d));
        std::vector<Var> sims{pairwise_cosine(z, Var(random_matrix(rng, L, d))),
                              pairwise_cosine(z, Var(random_matrix(rng, L, d)))};
        Tensor lo = combine_similarities(sims, CompareMode::Minor).value();
        Tensor mid = combine_similarities(sims, CompareMode::Mean).value();
        Tensor hi = combine_similarities(sims, CompareMode::Major).value();
        for (std::size_t i = 0; i < lo.size(); ++i) {
            CHECK(lo[i] <= mid[i] + 1e-15);
            CHECK(mid[i] <= hi[i] + 1e-15);
        }
    }
}

TEST_CASE("joint permutation equivariance is exact on integer inputs") {
    // L = 2 with the swap permutation: every inner sum has two terms, so
    // IEEE commutativity makes the equality bitwise exact
    Rng rng(59);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t d = 2 + rng.below(5);
        auto int_matrix = [&](void) {
            Tensor t(Shape{2, d});
            for (std::size_t i = 0; i < t.size(); ++i)
                t[i] = static_cast<double>(static_cast<long>(rng.below(9)) - 4);
            return t;
        };
        Tensor z = int_matrix(), o1 = int_matrix(), o2 = int_matrix();
        auto swap_rows = [&](const Tensor& t) {
            Tensor s(Shape{2, d});
            for (std::size_t j = 0; j < d; ++j) {
                s.at(0, j) = t.at(1, j);
                s.at(1, j) = t.at(0, j);
            }
            return s;
        };
        DecoupledPair a = decouple(Var(z), {Var(o1), Var(o2)}, CompareMode::Minor);
        DecoupledPair b =
            decouple(Var(swap_rows(z)), {Var(swap_rows(o1)), Var(swap_rows(o2))},
                     CompareMode::Minor);
        // W' == P W P^T and common' == P common, exactly
        const Tensor &W = a.w_common.value(), &Wp = b.w_common.value();
        CHECK(Wp.at(0, 0) == W.at(1, 1));
        CHECK(Wp.at(0, 1) == W.at(1, 0));
        CHECK(Wp.at(1, 0) == W.at(0, 1));
        CHECK(Wp.at(1, 1) == W.at(0, 0));
        const Tensor &C = a.common.value(), &Cp = b.common.value();
        for (std::size_t j = 0; j < d; ++j) {
            CHECK(Cp.at(0, j) == C.at(1, j));
            CHECK(Cp.at(1, j) == C.at(0, j));
        }
    }
}

TEST_CASE("decouple is parameter-free and deterministic") {
    Rng rng(71);
    Tensor z = random_matrix(rng, 4, 3);
    Tensor o = random_matrix(rng, 4, 3);
    DecoupledPair a = decouple(Var(z), {Var(o)});
    DecoupledPair b = decouple(Var(z), {Var(o)});
    CHECK(max_abs_diff(a.common.value(), b.common.value()) == 0.0);
    CHECK(max_abs_diff(a.w_specific.value(), b.w_specific.value()) == 0.0);
}

TEST_CASE("decouple rejects empty others and shape mismatch") {
    Var z(Tensor(Shape{2, 2}));
    CHECK_THROWS(decouple(z, {}));
    CHECK_THROWS_AS(decouple(z, {Var(Tensor(Shape{3, 2}))}), ShapeError);
}

TEST_CASE("gradients flow through decouple into the inputs") {
    Rng rng(83);
    Tensor z = random_matrix(rng, 3, 3, 0.2, 1.8);
    Tensor o = random_matrix(rng, 3, 3, 0.2, 1.8);
    auto fn = [](const std::vector<Var>& v) {
        DecoupledPair dp = decouple(v[0], {v[1]}, CompareMode::Minor);
        return mean_all(square(add(dp.common, dp.specific)));
    };
    CHECK(grad_check(fn, {z, o}) < 1e-5);
}
