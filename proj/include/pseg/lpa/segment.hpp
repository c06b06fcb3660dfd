#pragma once

#include <vector>

#include "pseg/lpa/affinity.hpp"
#include "pseg/lpa/losses.hpp"
#include "pseg/lpa/propagate.hpp"
#include "pseg/tensor.hpp"

namespace pseg::lpa {

struct PropagationConfig {
    Index k = 10;
    double alpha = 0.99;
    double sigma = 0.0;  // <= 0 selects the adaptive mean-kNN-distance value
    Index steps = 0;     // 0 selects the closed-form solve
};

struct SegmentResult {
    Tensor z;                   // full label-confidence matrix, one row per node
    Tensor probs;               // query rows after softmax
    std::vector<Index> labels;  // episode-alphabet predictions per query point
    double sigma2 = 0.0;
};

/// Label propagation over prototypes plus query points. Prototype rows carry
/// one-hot seeds for their class, query rows start at zero; predictions are
/// the row-softmax argmax of the propagated query rows.
inline SegmentResult segment_episode(const Tensor& proto_features,
                                     const std::vector<Index>& proto_class,
                                     const Tensor& query_features, Index num_way,
                                     const PropagationConfig& cfg) {
    if (proto_features.rank() != 2 || query_features.rank() != 2 ||
        proto_features.cols() != query_features.cols())
        throw ShapeError("segment_episode: feature widths must match");
    if (static_cast<Index>(proto_class.size()) != proto_features.rows())
        throw ShapeError("segment_episode: one class per prototype required");
    const Index num_labels = num_way + 1;
    const Index n_l = proto_features.rows();
    const Index n_q = query_features.rows();

    Tensor nodes({n_l + n_q, proto_features.cols()});
    nodes.mat().topRows(n_l) = proto_features.mat();
    nodes.mat().bottomRows(n_q) = query_features.mat();

    Tensor y({n_l + n_q, num_labels});
    for (Index i = 0; i < n_l; ++i) {
        const Index c = proto_class[static_cast<std::size_t>(i)];
        if (c < 0 || c >= num_labels) throw ParameterError("segment_episode: prototype class");
        y.at(i, c) = 1.0;
    }

    SegmentResult out;
    out.sigma2 = cfg.sigma > 0.0 ? cfg.sigma * cfg.sigma : adaptive_sigma2(nodes, cfg.k);
    const AffinityGraph graph = build_graph(nodes, cfg.k, std::sqrt(out.sigma2));
    out.z = cfg.steps > 0 ? propagate_iterative(graph, y, cfg.alpha, cfg.steps)
                          : propagate_closed_form(graph, y, cfg.alpha);

    Tensor zq({n_q, num_labels});
    zq.mat() = out.z.mat().bottomRows(n_q);
    out.probs = predict_probs(zq);
    out.labels = argmax_rows(out.probs);
    return out;
}

}  // namespace pseg::lpa
