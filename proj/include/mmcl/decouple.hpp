#pragma once

// Common-Specific Decoupling (CSD). Parameter-free: splits one modality's
// sequence into common and specific parts by comparing each temporal element
// against the other modalities' elements with cosine similarity. The whole
// path is built from differentiable primitives so gradients reach the
// upstream projections.

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mmcl/autodiff.hpp"
#include "mmcl/tensor.hpp"

namespace mmcl {

enum class CompareMode { Minor, Major, Mean };

inline const char* to_string(CompareMode m) {
    switch (m) {
        case CompareMode::Minor: return "minor";
        case CompareMode::Major: return "major";
        default: return "mean";
    }
}

struct SimilarityMatrix {
    Var values;                        // LxL, entries in [-1, 1]
    std::pair<int, int> source_pair;   // modality indices, -1 when unknown
};

struct DecoupledPair {
    Var common;      // LxD
    Var specific;    // LxD
    Var w_common;    // LxL, rows sum to 1
    Var w_specific;  // LxL, rows sum to 1
};

// entry (i,j) = cos(za_i, zb_j); zero-norm rows contribute 0, not NaN
inline Var pairwise_cosine(const Var& za, const Var& zb) {
    const Tensor& A = za.value();
    const Tensor& B = zb.value();
    if (A.rank() != 2 || B.rank() != 2 || A.rows() != B.rows() || A.cols() != B.cols())
        throw ShapeError("pairwise_cosine: shapes " + shape_str(A.shape()) + " and " +
                         shape_str(B.shape()) + " must be equal LxD");
    Var dots = matmul(za, transpose(zb));
    Var inv_na = inv_or_zero(row_l2_norm(za));
    Var inv_nb = inv_or_zero(row_l2_norm(zb));
    return scale_rows(scale_cols(dots, inv_nb), inv_na);
}

inline SimilarityMatrix make_similarity(const Var& za, const Var& zb, int ia = -1,
                                        int ib = -1) {
    return SimilarityMatrix{pairwise_cosine(za, zb), {ia, ib}};
}

// entrywise minimum / maximum / mean over the stacked matrices
inline Var combine_similarities(const std::vector<Var>& sims, CompareMode mode) {
    if (sims.empty())
        throw std::invalid_argument("combine_similarities: empty similarity list");
    for (const Var& s : sims)
        if (!s.value().same_shape(sims[0].value()))
            throw ShapeError("combine_similarities: shapes " +
                             shape_str(sims[0].value().shape()) + " and " +
                             shape_str(s.value().shape()) + " differ");
    if (mode == CompareMode::Mean) {
        Var acc = add_n(sims);
        return scalar_mul(acc, 1.0 / static_cast<double>(sims.size()));
    }
    Var acc = sims[0];
    for (std::size_t k = 1; k < sims.size(); ++k)
        acc = mode == CompareMode::Minor ? min_elem(acc, sims[k]) : max_elem(acc, sims[k]);
    return acc;
}

inline Var combine_similarities(const std::vector<SimilarityMatrix>& sims,
                                CompareMode mode) {
    std::vector<Var> vals;
    vals.reserve(sims.size());
    for (const SimilarityMatrix& s : sims) vals.push_back(s.values);
    return combine_similarities(vals, mode);
}

// Rows divided by their sums; an all-zero row becomes the uniform 1/L row.
// The uniform fallback enters as a constant, so no gradient flows through it.
inline Var normalize_rows(const Var& x) {
    const Tensor& X = x.value();
    const std::size_t m = X.rows(), n = X.cols();
    Var row_sums = sum_axis(x, 1);
    Var scaled = scale_rows(x, inv_or_zero(row_sums));

    Tensor fallback(Shape{m, n});
    bool any_zero = false;
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < n; ++j) s += X.at(i, j);
        if (s <= 0.0) {
            any_zero = true;
            for (std::size_t j = 0; j < n; ++j)
                fallback.at(i, j) = 1.0 / static_cast<double>(n);
        }
    }
    if (!any_zero) return scaled;
    return add(scaled, Var::constant(std::move(fallback)));
}

// Splits z into common/specific parts using the other modalities as the
// reference. Similarities are clamped to [0,1]; the complement is taken on
// the raw matrices and both are then row-normalized to unit mass.
inline DecoupledPair decouple(const Var& z, const std::vector<Var>& others,
                              CompareMode mode = CompareMode::Minor) {
    if (others.empty())
        throw std::invalid_argument("decouple: needs at least one other modality");
    std::vector<Var> sims;
    sims.reserve(others.size());
    for (const Var& o : others) sims.push_back(pairwise_cosine(z, o));

    Var s = clamp01(combine_similarities(sims, mode));
    Var raw_common = s;
    Var raw_specific = add_scalar(scalar_mul(s, -1.0), 1.0);  // 1 - S

    DecoupledPair out;
    out.w_common = normalize_rows(raw_common);
    out.w_specific = normalize_rows(raw_specific);
    out.common = matmul(out.w_common, z);
    out.specific = matmul(out.w_specific, z);
    return out;
}

}  // namespace mmcl
