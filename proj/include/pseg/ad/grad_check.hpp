#pragma once

#include <cmath>
#include <functional>

#include "pseg/ad/graph.hpp"

namespace pseg::ad {

/// Builds a scalar loss from one leaf. The callable may add constants and
/// further ops to the graph; it must return the root node id.
using ScalarFn = std::function<NodeId(Graph&, NodeId)>;

/// Max over coordinates of |analytic - central difference| / max(1, |cd|).
inline double grad_check(const ScalarFn& f, const Tensor& x, double h = 1e-5) {
    Graph g;
    const NodeId xid = g.leaf(x);
    const NodeId root = f(g, xid);
    if (g.value(root).numel() != 1) throw ParameterError("grad_check: f must be scalar");
    g.backward(root);
    const Tensor analytic = g.grad(xid);

    auto eval = [&](const Tensor& probe) {
        Graph gp;
        const double y = gp.value(f(gp, gp.leaf(probe))).value();
        if (!std::isfinite(y)) throw NumericError("grad_check: non-finite function value");
        return y;
    };

    double worst = 0.0;
    Tensor probe = x;
    for (std::size_t i = 0; i < x.v.size(); ++i) {
        probe.v[i] = x.v[i] + h;
        const double fp = eval(probe);
        probe.v[i] = x.v[i] - h;
        const double fm = eval(probe);
        probe.v[i] = x.v[i];
        const double cd = (fp - fm) / (2.0 * h);
        const double err = std::abs(analytic.v[i] - cd) / std::max(1.0, std::abs(cd));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace pseg::ad
