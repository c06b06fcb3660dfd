#pragma once

#include <algorithm>
#include <vector>

#include "pseg/common.hpp"
#include "pseg/tensor.hpp"

namespace pseg::geom {

/// Squared Euclidean distance between rows i and j of a feature matrix.
inline double row_dist2(const Tensor& f, Index i, Index j) {
    const Index d = f.cols();
    const double* a = f.v.data() + i * d;
    const double* b = f.v.data() + j * d;
    double acc = 0.0;
    for (Index c = 0; c < d; ++c) {
        const double diff = a[c] - b[c];
        acc += diff * diff;
    }
    return acc;
}

/// Brute-force k nearest neighbors per row of an n x d feature matrix.
/// Distances compare as squared Euclidean; ties break by ascending index.
inline std::vector<std::vector<Index>> knn(const Tensor& features, Index k, bool exclude_self) {
    if (features.rank() != 2) throw ShapeError("knn expects an n x d matrix");
    const Index n = features.rows();
    const Index limit = exclude_self ? n - 1 : n;
    if (k < 1 || k > limit) throw ParameterError("knn: k out of range");

    std::vector<std::vector<Index>> result(static_cast<std::size_t>(n));
    std::vector<std::pair<double, Index>> cand;
    cand.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        cand.clear();
        for (Index j = 0; j < n; ++j) {
            if (exclude_self && j == i) continue;
            cand.emplace_back(row_dist2(features, i, j), j);
        }
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        auto& out = result[static_cast<std::size_t>(i)];
        out.reserve(static_cast<std::size_t>(k));
        for (Index t = 0; t < k; ++t) out.push_back(cand[static_cast<std::size_t>(t)].second);
    }
    return result;
}

}  // namespace pseg::geom
