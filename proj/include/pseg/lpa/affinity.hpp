#pragma once

#include <cmath>
#include <vector>

#include "pseg/geom/knn.hpp"
#include "pseg/tensor.hpp"

namespace pseg::lpa {

/// Sparse affinity over kNN pairs with Gaussian weights and a zero diagonal.
/// Propagation uses the symmetrically normalized matrix
/// S = D^-1/2 (W + W^T) D^-1/2 where D holds the row sums of W + W^T plus
/// 1e-12, so isolated nodes stay finite.
struct AffinityGraph {
    Index n = 0;
    Index k = 0;
    double sigma2 = 0.0;
    std::vector<std::vector<Index>> nbr;      // directed kNN lists, self excluded
    std::vector<std::vector<double>> weight;  // exp(-d^2 / sigma^2) per edge
    std::vector<double> inv_sqrt_deg;

    /// y = S x for one column vector x (size n).
    void apply_s(const std::vector<double>& x, std::vector<double>& y) const {
        y.assign(static_cast<std::size_t>(n), 0.0);
        for (Index i = 0; i < n; ++i) {
            const auto& js = nbr[static_cast<std::size_t>(i)];
            const auto& ws = weight[static_cast<std::size_t>(i)];
            for (std::size_t e = 0; e < js.size(); ++e) {
                const Index j = js[e];
                const double w = ws[e];
                // A directed edge contributes to both (i, j) and (j, i) of W + W^T.
                y[static_cast<std::size_t>(i)] += inv_sqrt_deg[static_cast<std::size_t>(i)] * w *
                                                  inv_sqrt_deg[static_cast<std::size_t>(j)] *
                                                  x[static_cast<std::size_t>(j)];
                y[static_cast<std::size_t>(j)] += inv_sqrt_deg[static_cast<std::size_t>(j)] * w *
                                                  inv_sqrt_deg[static_cast<std::size_t>(i)] *
                                                  x[static_cast<std::size_t>(i)];
            }
        }
    }
};

/// Mean squared distance over all directed kNN edges; the default sigma^2.
inline double adaptive_sigma2(const Tensor& features, Index k) {
    if (features.rank() != 2 || features.rows() < 2)
        throw ParameterError("adaptive_sigma2: need at least two nodes");
    const auto nbr = geom::knn(features, std::min<Index>(k, features.rows() - 1), true);
    double acc = 0.0;
    Index count = 0;
    for (Index i = 0; i < features.rows(); ++i) {
        for (Index j : nbr[static_cast<std::size_t>(i)]) {
            acc += geom::row_dist2(features, i, j);
            ++count;
        }
    }
    if (count == 0) throw ParameterError("adaptive_sigma2: graph has no edges");
    return acc / static_cast<double>(count);
}

inline AffinityGraph build_graph(const Tensor& features, Index k, double sigma) {
    if (features.rank() != 2 || features.rows() < 2)
        throw ParameterError("build_graph: need at least two nodes");
    if (!(sigma > 0.0)) throw ParameterError("build_graph: sigma must be positive");
    AffinityGraph g;
    g.n = features.rows();
    g.k = std::min<Index>(k, g.n - 1);
    g.sigma2 = sigma * sigma;
    g.nbr = geom::knn(features, g.k, true);
    g.weight.resize(static_cast<std::size_t>(g.n));

    std::vector<double> degree(static_cast<std::size_t>(g.n), 0.0);
    for (Index i = 0; i < g.n; ++i) {
        auto& ws = g.weight[static_cast<std::size_t>(i)];
        ws.reserve(g.nbr[static_cast<std::size_t>(i)].size());
        for (Index j : g.nbr[static_cast<std::size_t>(i)]) {
            const double w = std::exp(-geom::row_dist2(features, i, j) / g.sigma2);
            ws.push_back(w);
            degree[static_cast<std::size_t>(i)] += w;
            degree[static_cast<std::size_t>(j)] += w;
        }
    }
    g.inv_sqrt_deg.resize(static_cast<std::size_t>(g.n));
    for (Index i = 0; i < g.n; ++i)
        g.inv_sqrt_deg[static_cast<std::size_t>(i)] =
            1.0 / std::sqrt(degree[static_cast<std::size_t>(i)] + 1e-12);
    return g;
}

/// Dense S, mainly for tests and small problems.
inline Tensor dense_s(const AffinityGraph& g) {
    Tensor s({g.n, g.n});
    for (Index i = 0; i < g.n; ++i) {
        const auto& js = g.nbr[static_cast<std::size_t>(i)];
        const auto& ws = g.weight[static_cast<std::size_t>(i)];
        for (std::size_t e = 0; e < js.size(); ++e) {
            const Index j = js[e];
            const double v = g.inv_sqrt_deg[static_cast<std::size_t>(i)] * ws[e] *
                             g.inv_sqrt_deg[static_cast<std::size_t>(j)];
            s.at(i, j) += v;
            s.at(j, i) += v;
        }
    }
    return s;
}

}  // namespace pseg::lpa
