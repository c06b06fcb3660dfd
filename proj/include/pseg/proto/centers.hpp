#pragma once

#include <string>
#include <vector>

#include "pseg/ad/graph.hpp"
#include "pseg/tensor.hpp"

namespace pseg::proto {

/// Running per-class feature centers, keyed by global class id. A center is
/// initialized to the class mean of the first batch that contains the class
/// and afterwards moves toward each batch mean at `rate`.
struct ClassCenters {
    Tensor data;             // num_classes x d
    std::vector<char> seen;  // 1 once a class has been initialized
    double rate = 0.5;

    ClassCenters() = default;
    ClassCenters(Index num_classes, Index dim, double update_rate = 0.5)
        : data({num_classes, dim}), seen(static_cast<std::size_t>(num_classes), 0),
          rate(update_rate) {}

    Index num_classes() const { return data.rank() == 2 ? data.rows() : 0; }
};

namespace detail {

inline void check_center_labels(const ClassCenters& centers, const Tensor& features,
                                const std::vector<Index>& labels) {
    if (features.rank() != 2) throw ShapeError("center_loss: features must be a matrix");
    if (static_cast<Index>(labels.size()) != features.rows())
        throw ShapeError("center_loss: one label per feature row required");
    if (centers.data.cols() != features.cols())
        throw ShapeError("center_loss: center and feature widths differ");
    for (Index y : labels)
        if (y < 0 || y >= centers.num_classes() || !centers.seen[static_cast<std::size_t>(y)])
            throw ParameterError("center_loss: no center for class " + std::to_string(y));
}

}  // namespace detail

/// 0.5 * sum_i ||v_i - center[y_i]||^2.
inline double center_loss(const Tensor& features, const std::vector<Index>& labels,
                          const ClassCenters& centers) {
    detail::check_center_labels(centers, features, labels);
    double acc = 0.0;
    for (Index i = 0; i < features.rows(); ++i) {
        const Index y = labels[static_cast<std::size_t>(i)];
        acc += (features.mat().row(i) - centers.data.mat().row(y)).squaredNorm();
    }
    return 0.5 * acc;
}

/// Graph version: centers enter as constants, so gradients only reach the
/// features (the centers follow their own running update instead).
inline ad::NodeId center_loss(ad::Graph& g, ad::NodeId features,
                              const std::vector<Index>& labels, const ClassCenters& centers) {
    detail::check_center_labels(centers, g.value(features), labels);
    const ad::NodeId c = g.constant(centers.data);
    const ad::NodeId picked = g.gather_rows(c, labels);
    const ad::NodeId diff = g.subtract(features, picked);
    return g.scale(g.sum_squares(diff), 0.5);
}

/// Initializes any class that appears in the batch and has no center yet to
/// the batch class mean. Call before computing the loss on a batch.
inline void ensure_centers(ClassCenters& centers, const Tensor& features,
                           const std::vector<Index>& labels) {
    if (static_cast<Index>(labels.size()) != features.rows())
        throw ShapeError("ensure_centers: one label per feature row required");
    for (Index c = 0; c < centers.num_classes(); ++c) {
        if (centers.seen[static_cast<std::size_t>(c)]) continue;
        Index count = 0;
        Tensor mean({1, features.cols()});
        for (Index i = 0; i < features.rows(); ++i) {
            if (labels[static_cast<std::size_t>(i)] != c) continue;
            mean.mat() += features.mat().row(i);
            ++count;
        }
        if (count == 0) continue;
        centers.data.mat().row(c) = mean.mat() / static_cast<double>(count);
        centers.seen[static_cast<std::size_t>(c)] = 1;
    }
}

/// Moves each center present in the batch toward the batch class mean:
/// center <- center - rate * (center - batch_mean). Absent classes keep
/// their centers unchanged.
inline void update_centers(ClassCenters& centers, const Tensor& features,
                           const std::vector<Index>& labels) {
    if (static_cast<Index>(labels.size()) != features.rows())
        throw ShapeError("update_centers: one label per feature row required");
    for (Index c = 0; c < centers.num_classes(); ++c) {
        if (!centers.seen[static_cast<std::size_t>(c)]) continue;
        Index count = 0;
        Tensor mean({1, features.cols()});
        for (Index i = 0; i < features.rows(); ++i) {
            if (labels[static_cast<std::size_t>(i)] != c) continue;
            mean.mat() += features.mat().row(i);
            ++count;
        }
        if (count == 0) continue;
        mean.mat() /= static_cast<double>(count);
        centers.data.mat().row(c) -=
            centers.rate * (centers.data.mat().row(c) - mean.mat());
    }
}

}  // namespace pseg::proto
