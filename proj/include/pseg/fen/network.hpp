#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "pseg/ad/graph.hpp"
#include "pseg/fen/config.hpp"
#include "pseg/geom/cloud_ops.hpp"
#include "pseg/geom/knn.hpp"

namespace pseg::fen {

using ad::Graph;
using ad::NodeId;

/// Parameter tensors lifted into a graph. Trainable names become leaves
/// (receive gradients); the rest enter as constants, which is what freezing
/// means at the tape level.
struct ParamNodes {
    std::map<std::string, NodeId> ids;

    NodeId at(const std::string& name) const {
        auto it = ids.find(name);
        if (it == ids.end()) throw ParameterError("missing parameter: " + name);
        return it->second;
    }
};

inline ParamNodes make_param_nodes(Graph& g, const ParamMap& params,
                                   const std::set<std::string>& trainable = {}) {
    ParamNodes out;
    for (const auto& [name, t] : params)
        out.ids[name] = trainable.count(name) ? g.leaf(t) : g.constant(t);
    return out;
}

namespace detail {

inline NodeId linear(Graph& g, NodeId x, const ParamNodes& p, const std::string& name) {
    return g.add_rowvec(g.matmul(x, g.transpose(p.at(name + ".w"))), p.at(name + ".b"));
}

inline std::vector<std::vector<Index>> contiguous_groups(Index n, Index k) {
    std::vector<std::vector<Index>> groups(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        auto& grp = groups[static_cast<std::size_t>(i)];
        grp.reserve(static_cast<std::size_t>(k));
        for (Index j = 0; j < k; ++j) grp.push_back(i * k + j);
    }
    return groups;
}

}  // namespace detail

/// Shared per-point MLP, max-pool over points, then a projection whose
/// zero-weight/identity-bias initialization yields A = I.
inline NodeId tnet_predict(Graph& g, NodeId coords, const ParamNodes& p, const ModelConfig& cfg) {
    NodeId h = coords;
    for (std::size_t i = 0; i < cfg.tnet_point_widths.size(); ++i)
        h = g.leaky_relu(detail::linear(g, h, p, "tnet.point" + std::to_string(i)),
                         cfg.leaky_slope);
    std::vector<Index> all(static_cast<std::size_t>(g.value(h).rows()));
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<Index>(i);
    NodeId pooled = g.reduce_max_groups(h, {all});
    for (std::size_t i = 0; i < cfg.tnet_post_widths.size(); ++i)
        pooled = g.leaky_relu(detail::linear(g, pooled, p, "tnet.post" + std::to_string(i)),
                              cfg.leaky_slope);
    return g.reshape(detail::linear(g, pooled, p, "tnet.out"), {3, 3});
}

struct TransformedCloud {
    NodeId coords;
    NodeId normals;
};

/// Rows are points, so P' = A P becomes coords * A^T. Normals rotate the same
/// way and are re-normalized; zero normals stay zero.
inline TransformedCloud apply_transform(Graph& g, NodeId coords, NodeId normals, NodeId a_hat) {
    NodeId at = g.transpose(a_hat);
    return {g.matmul(coords, at), g.normalize_rows(g.matmul(normals, at))};
}

/// || I - A A^T ||_F^2
inline NodeId reg_loss(Graph& g, NodeId a_hat) {
    NodeId gram = g.matmul(a_hat, g.transpose(a_hat));
    return g.sum_squares(g.subtract(g.constant(Tensor::identity(3)), gram));
}

/// One dynamic-graph convolution: per neighbor j of i, an affine map of
/// (x_j - x_i) plus one of x_i, max-aggregated over the neighborhood.
inline NodeId edgeconv(Graph& g, NodeId x, const std::vector<std::vector<Index>>& neighbors,
                       NodeId theta, NodeId phi, NodeId bias, double slope) {
    const Index n = g.value(x).rows();
    if (static_cast<Index>(neighbors.size()) != n) throw ShapeError("edgeconv: neighbor count");
    const Index k = static_cast<Index>(neighbors[0].size());
    std::vector<Index> centers, nbrs;
    centers.reserve(static_cast<std::size_t>(n * k));
    nbrs.reserve(static_cast<std::size_t>(n * k));
    for (Index i = 0; i < n; ++i) {
        if (static_cast<Index>(neighbors[static_cast<std::size_t>(i)].size()) != k)
            throw ShapeError("edgeconv: ragged neighbor lists");
        for (Index j : neighbors[static_cast<std::size_t>(i)]) {
            centers.push_back(i);
            nbrs.push_back(j);
        }
    }
    NodeId xi = g.gather_rows(x, centers);
    NodeId xj = g.gather_rows(x, nbrs);
    NodeId edge = g.add(g.matmul(g.subtract(xj, xi), g.transpose(theta)),
                        g.matmul(xi, g.transpose(phi)));
    edge = g.leaky_relu(g.add_rowvec(edge, bias), slope);
    return g.reduce_max_groups(edge, detail::contiguous_groups(n, k));
}

/// Single-head dot-product attention with a residual connection; the value
/// projection keeps the input width.
inline NodeId self_attention(Graph& g, NodeId x, const ParamNodes& p, const ModelConfig& cfg) {
    NodeId q = g.matmul(x, g.transpose(p.at("attn.wq")));
    NodeId k = g.matmul(x, g.transpose(p.at("attn.wk")));
    NodeId v = g.matmul(x, g.transpose(p.at("attn.wv")));
    NodeId scores = g.scale(g.matmul(q, g.transpose(k)),
                            1.0 / std::sqrt(static_cast<double>(cfg.attention_dk)));
    return g.add(x, g.matmul(g.softmax_rows(scores), v));
}

/// Neighbor lists for the current feature values; k is clamped to n-1 and a
/// single-point cloud neighbors itself.
inline std::vector<std::vector<Index>> dynamic_neighbors(const Tensor& features, Index k) {
    const Index n = features.rows();
    if (n == 1) return {{0}};
    return geom::knn(features, std::min(k, n - 1), true);
}

/// Transform plus stacked edgeconv layers, concatenated with the broadcast
/// global max-pooled feature: everything the fine-tune stage can freeze and
/// cache ends here.
struct BackboneOut {
    NodeId concat;
    NodeId a_hat;
};

inline BackboneOut backbone(Graph& g, NodeId coords, NodeId normals, const ParamNodes& p,
                            const ModelConfig& cfg) {
    NodeId a_hat = tnet_predict(g, coords, p, cfg);
    TransformedCloud t = apply_transform(g, coords, normals, a_hat);
    NodeId x = g.concat_cols(t.coords, t.normals);

    NodeId cat = -1;
    for (std::size_t m = 0; m < cfg.edgeconv_widths.size(); ++m) {
        const auto neighbors = dynamic_neighbors(g.value(x), cfg.k_neighbors);
        const std::string name = "ec" + std::to_string(m);
        x = edgeconv(g, x, neighbors, p.at(name + ".theta"), p.at(name + ".phi"),
                     p.at(name + ".b"), cfg.leaky_slope);
        cat = (m == 0) ? x : g.concat_cols(cat, x);
    }

    const Index n = g.value(cat).rows();
    std::vector<Index> all(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<Index>(i);
    NodeId global = g.reduce_max_groups(cat, {all});
    NodeId broadcast = g.gather_rows(global, std::vector<Index>(static_cast<std::size_t>(n), 0));
    return {g.concat_cols(cat, broadcast), a_hat};
}

/// The trainable tail: two per-point MLP layers, activation between them,
/// linear output.
inline NodeId head(Graph& g, NodeId x, const ParamNodes& p, const ModelConfig& cfg) {
    NodeId h = x;
    for (std::size_t i = 0; i < cfg.head_widths.size(); ++i) {
        h = detail::linear(g, h, p, "head.l" + std::to_string(i));
        if (i + 1 < cfg.head_widths.size()) h = g.leaky_relu(h, cfg.leaky_slope);
    }
    return h;
}

struct ExtractorOut {
    NodeId features;
    NodeId a_hat;
};

inline ExtractorOut extract_features(Graph& g, NodeId coords, NodeId normals, const ParamNodes& p,
                                     const ModelConfig& cfg) {
    BackboneOut bb = backbone(g, coords, normals, p, cfg);
    NodeId attended = self_attention(g, bb.concat, p, cfg);
    return {head(g, attended, p, cfg), bb.a_hat};
}

/// Plain-value entry points (no gradients): build a throwaway graph with all
/// parameters as constants and read the results off the tape.

struct Features {
    Tensor features;
    Tensor a_hat;
};

inline Features extract_features(const geom::PointCloud& cloud, const ParamMap& params,
                                 const ModelConfig& cfg) {
    Graph g;
    ParamNodes p = make_param_nodes(g, params);
    ExtractorOut out = extract_features(g, g.constant(geom::cloud_coords(cloud)),
                                        g.constant(geom::cloud_normals(cloud)), p, cfg);
    return {g.value(out.features), g.value(out.a_hat)};
}

inline Tensor tnet_predict(const geom::PointCloud& cloud, const ParamMap& params,
                           const ModelConfig& cfg) {
    Graph g;
    ParamNodes p = make_param_nodes(g, params);
    return g.value(tnet_predict(g, g.constant(geom::cloud_coords(cloud)), p, cfg));
}

inline geom::PointCloud apply_transform(const geom::PointCloud& cloud, const Tensor& a_hat) {
    Graph g;
    TransformedCloud t = apply_transform(g, g.constant(geom::cloud_coords(cloud)),
                                         g.constant(geom::cloud_normals(cloud)),
                                         g.constant(a_hat));
    const Tensor& c = g.value(t.coords);
    const Tensor& n = g.value(t.normals);
    geom::PointCloud out;
    out.points.reserve(cloud.size());
    for (Index i = 0; i < c.rows(); ++i)
        out.points.push_back({{c.at(i, 0), c.at(i, 1), c.at(i, 2)},
                              {n.at(i, 0), n.at(i, 1), n.at(i, 2)}});
    return out;
}

inline double reg_loss(const Tensor& a_hat) {
    Graph g;
    return g.value(reg_loss(g, g.constant(a_hat))).value();
}

}  // namespace pseg::fen
