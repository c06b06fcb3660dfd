#pragma once

#include <cmath>
#include <vector>

#include "pseg/tensor.hpp"

namespace pseg::lpa {

inline constexpr double kProbClamp = 1e-12;

/// Row softmax over the label-confidence matrix rows of the query points.
inline Tensor predict_probs(const Tensor& z_query) {
    if (z_query.rank() != 2 || z_query.cols() < 1)
        throw ShapeError("predict_probs: need a nonempty matrix");
    Tensor out = z_query;
    auto m = out.mat();
    for (Index i = 0; i < m.rows(); ++i) {
        const double mx = m.row(i).maxCoeff();
        m.row(i) = (m.row(i).array() - mx).exp();
        m.row(i) /= m.row(i).sum();
    }
    return out;
}

/// Mean over all query points of -log p(true class), probabilities clamped
/// below at 1e-12. Rows must cover num_queries clouds of points_per_cloud
/// points each.
inline double cross_entropy(const Tensor& probs, const std::vector<Index>& truth,
                            Index num_queries, Index points_per_cloud) {
    if (num_queries < 1 || points_per_cloud < 1)
        throw ParameterError("cross_entropy: query counts must be positive");
    if (probs.rows() != num_queries * points_per_cloud)
        throw ShapeError("cross_entropy: rows must equal num_queries * points_per_cloud");
    if (static_cast<Index>(truth.size()) != probs.rows())
        throw ShapeError("cross_entropy: one label per row required");
    double acc = 0.0;
    for (Index i = 0; i < probs.rows(); ++i) {
        const Index y = truth[static_cast<std::size_t>(i)];
        if (y < 0 || y >= probs.cols()) throw ParameterError("cross_entropy: label out of range");
        acc -= std::log(std::max(probs.at(i, y), kProbClamp));
    }
    return acc / static_cast<double>(num_queries * points_per_cloud);
}

/// Argmax labels per row; ties go to the lower class id.
inline std::vector<Index> argmax_rows(const Tensor& probs) {
    std::vector<Index> out(static_cast<std::size_t>(probs.rows()));
    for (Index i = 0; i < probs.rows(); ++i) {
        Index best = 0;
        for (Index c = 1; c < probs.cols(); ++c)
            if (probs.at(i, c) > probs.at(i, best)) best = c;
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

}  // namespace pseg::lpa
