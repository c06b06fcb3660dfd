#pragma once

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

#include "pseg/geom/fps.hpp"
#include "pseg/geom/knn.hpp"
#include "pseg/tensor.hpp"

namespace pseg::proto {

/// Nearest-anchor partition of one class's support features. Anchors are
/// fps picks (start = row 0); every anchor owns its own cell, other rows join
/// the nearest anchor with ties to the lower anchor position.
struct PrototypePartition {
    std::vector<Index> anchors;
    std::vector<std::vector<Index>> cells;
};

inline PrototypePartition prototype_partition(const Tensor& class_feats, Index n_p) {
    if (class_feats.rank() != 2 || class_feats.rows() < 1)
        throw ParameterError("prototype_partition: empty class subset");
    if (n_p < 1) throw ParameterError("prototype_partition: n_p must be >= 1");
    const Index n = class_feats.rows();
    const Index m = std::min(n_p, n);

    PrototypePartition part;
    part.anchors = geom::fps(class_feats, m, 0);
    part.cells.resize(static_cast<std::size_t>(m));

    std::vector<Index> anchor_of(static_cast<std::size_t>(n), -1);
    for (Index a = 0; a < m; ++a)
        anchor_of[static_cast<std::size_t>(part.anchors[static_cast<std::size_t>(a)])] = a;

    for (Index r = 0; r < n; ++r) {
        Index cell = anchor_of[static_cast<std::size_t>(r)];
        if (cell < 0) {
            double best = std::numeric_limits<double>::infinity();
            for (Index a = 0; a < m; ++a) {
                const double d2 =
                    geom::row_dist2(class_feats, r, part.anchors[static_cast<std::size_t>(a)]);
                if (d2 < best) {
                    best = d2;
                    cell = a;
                }
            }
            if (cell < 0)
                throw NumericError("prototype_partition: non-finite feature distances");
        }
        part.cells[static_cast<std::size_t>(cell)].push_back(r);
    }
    return part;
}

inline Tensor prototype_means(const Tensor& class_feats, const PrototypePartition& part) {
    const Index d = class_feats.cols();
    Tensor out({static_cast<Index>(part.cells.size()), d});
    for (std::size_t c = 0; c < part.cells.size(); ++c) {
        const auto& cell = part.cells[c];
        for (Index r : cell)
            out.mat().row(static_cast<Index>(c)) += class_feats.mat().row(r);
        out.mat().row(static_cast<Index>(c)) /= static_cast<double>(cell.size());
    }
    return out;
}

/// Averaging matrix M such that M * class_feats = prototype means; kept
/// constant so prototypes stay differentiable in the features.
inline Tensor averaging_matrix(const PrototypePartition& part, Index num_rows) {
    Tensor m({static_cast<Index>(part.cells.size()), num_rows});
    for (std::size_t c = 0; c < part.cells.size(); ++c)
        for (Index r : part.cells[c])
            m.at(static_cast<Index>(c), r) = 1.0 / static_cast<double>(part.cells[c].size());
    return m;
}

/// All prototypes of an episode, class-major (class 0 = background first).
struct PrototypeSet {
    Tensor features;               // total_prototypes x d
    std::vector<Index> class_of;   // episode class id per prototype row
};

inline PrototypeSet build_prototypes(const std::vector<Tensor>& per_class_features, Index n_p) {
    if (per_class_features.empty()) throw ParameterError("build_prototypes: no classes");
    std::vector<Tensor> blocks;
    std::vector<Index> class_of;
    Index total = 0;
    const Index d = per_class_features[0].cols();
    for (std::size_t c = 0; c < per_class_features.size(); ++c) {
        const Tensor& feats = per_class_features[c];
        if (feats.rows() < 1)
            throw ParameterError("build_prototypes: class " + std::to_string(c) +
                                 " has no support features");
        if (feats.cols() != d) throw ShapeError("build_prototypes: feature width mismatch");
        auto part = prototype_partition(feats, n_p);
        blocks.push_back(prototype_means(feats, part));
        for (Index i = 0; i < blocks.back().rows(); ++i)
            class_of.push_back(static_cast<Index>(c));
        total += blocks.back().rows();
    }
    PrototypeSet out;
    out.features = Tensor({total, d});
    Index at = 0;
    for (const Tensor& b : blocks) {
        out.features.mat().middleRows(at, b.rows()) = b.mat();
        at += b.rows();
    }
    out.class_of = std::move(class_of);
    return out;
}

}  // namespace pseg::proto
