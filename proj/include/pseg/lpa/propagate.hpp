#pragma once

#include <cmath>
#include <vector>

#include "pseg/lpa/affinity.hpp"
#include "pseg/tensor.hpp"

namespace pseg::lpa {

namespace detail {

inline void check_propagate_args(const AffinityGraph& g, const Tensor& y, double alpha) {
    if (y.rank() != 2 || y.rows() != g.n) throw ShapeError("propagate: Y rows must match graph");
    if (!(alpha >= 0.0 && alpha < 1.0)) throw ParameterError("propagate: alpha must be in [0, 1)");
}

}  // namespace detail

/// Runs Z_{t+1} = alpha * S * Z_t + (1 - alpha) * Y from Z_0 = Y for `steps`
/// steps, then rescales by 1 / (1 - alpha) so the result converges to the
/// closed-form solution of (I - alpha S) Z = Y. steps = 0 returns Y.
inline Tensor propagate_iterative(const AffinityGraph& g, const Tensor& y, double alpha,
                                  Index steps) {
    detail::check_propagate_args(g, y, alpha);
    if (steps < 0) throw ParameterError("propagate_iterative: steps must be >= 0");
    Tensor z = y;
    if (steps == 0) return z;

    const Index cols = y.cols();
    std::vector<double> xc(static_cast<std::size_t>(g.n));
    std::vector<double> sc;
    for (Index t = 0; t < steps; ++t) {
        Tensor next({g.n, cols});
        for (Index c = 0; c < cols; ++c) {
            for (Index i = 0; i < g.n; ++i) xc[static_cast<std::size_t>(i)] = z.at(i, c);
            g.apply_s(xc, sc);
            for (Index i = 0; i < g.n; ++i)
                next.at(i, c) = alpha * sc[static_cast<std::size_t>(i)] + (1.0 - alpha) * y.at(i, c);
        }
        z = std::move(next);
    }
    z.mat() /= (1.0 - alpha);
    return z;
}

/// Solves (I - alpha S) Z = Y column by column with conjugate gradients. The
/// system is symmetric positive definite because the spectrum of S lies in
/// [-1, 1] and alpha < 1.
inline Tensor propagate_closed_form(const AffinityGraph& g, const Tensor& y, double alpha) {
    detail::check_propagate_args(g, y, alpha);
    const Index n = g.n;
    const Index cols = y.cols();
    Tensor z({n, cols});

    const std::size_t un = static_cast<std::size_t>(n);
    std::vector<double> b(un), x(un), r(un), p(un), ap(un), sp;
    for (Index c = 0; c < cols; ++c) {
        for (Index i = 0; i < n; ++i) b[static_cast<std::size_t>(i)] = y.at(i, c);
        double b2 = 0.0;
        for (double v : b) b2 += v * v;
        const double target = 1e-12 * std::max(1.0, std::sqrt(b2));

        // x = 0 start, so r = p = b.
        std::fill(x.begin(), x.end(), 0.0);
        r = b;
        p = b;
        double r2 = b2;
        const Index max_iters = 20 * n + 50;
        for (Index it = 0; it < max_iters && std::sqrt(r2) > target; ++it) {
            g.apply_s(p, sp);
            for (std::size_t i = 0; i < un; ++i) ap[i] = p[i] - alpha * sp[i];
            double pap = 0.0;
            for (std::size_t i = 0; i < un; ++i) pap += p[i] * ap[i];
            if (!(pap > 0.0)) throw NumericError("propagate_closed_form: lost definiteness");
            const double step = r2 / pap;
            for (std::size_t i = 0; i < un; ++i) {
                x[i] += step * p[i];
                r[i] -= step * ap[i];
            }
            double r2_next = 0.0;
            for (double v : r) r2_next += v * v;
            const double beta = r2_next / r2;
            for (std::size_t i = 0; i < un; ++i) p[i] = r[i] + beta * p[i];
            r2 = r2_next;
        }

        // Recompute the true residual; CG's running recurrence can drift.
        g.apply_s(x, sp);
        double true_r2 = 0.0;
        for (std::size_t i = 0; i < un; ++i) {
            const double ri = b[i] - (x[i] - alpha * sp[i]);
            true_r2 += ri * ri;
        }
        if (!(std::sqrt(true_r2) <= 1e-10 * std::max(1.0, std::sqrt(b2))))
            throw NumericError("propagate_closed_form: residual did not converge");
        for (Index i = 0; i < n; ++i) z.at(i, c) = x[static_cast<std::size_t>(i)];
    }
    return z;
}

}  // namespace pseg::lpa
