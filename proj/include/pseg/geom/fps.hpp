#pragma once

#include <limits>
#include <vector>

#include "pseg/geom/knn.hpp"

namespace pseg::geom {

/// Farthest point sampling over the rows of an n x d feature matrix.
/// result[0] = start; each following pick maximizes the minimum squared
/// distance to everything already selected, ties broken by ascending index.
inline std::vector<Index> fps(const Tensor& features, Index m, Index start) {
    if (features.rank() != 2) throw ShapeError("fps expects an n x d matrix");
    const Index n = features.rows();
    if (m < 1 || m > n) throw ParameterError("fps: m out of range");
    if (start < 0 || start >= n) throw ParameterError("fps: start index out of range");

    std::vector<Index> picks;
    picks.reserve(static_cast<std::size_t>(m));
    picks.push_back(start);

    std::vector<double> min_d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    std::vector<char> taken(static_cast<std::size_t>(n), 0);
    taken[static_cast<std::size_t>(start)] = 1;

    for (Index t = 1; t < m; ++t) {
        const Index last = picks.back();
        for (Index j = 0; j < n; ++j) {
            auto& dj = min_d2[static_cast<std::size_t>(j)];
            const double d2 = row_dist2(features, last, j);
            if (d2 < dj) dj = d2;
        }
        Index best = -1;
        double best_d2 = -1.0;
        for (Index j = 0; j < n; ++j) {
            if (taken[static_cast<std::size_t>(j)]) continue;
            if (min_d2[static_cast<std::size_t>(j)] > best_d2) {
                best_d2 = min_d2[static_cast<std::size_t>(j)];
                best = j;
            }
        }
        picks.push_back(best);
        taken[static_cast<std::size_t>(best)] = 1;
    }
    return picks;
}

}  // namespace pseg::geom
