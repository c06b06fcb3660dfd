#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pseg/ad/grad_check.hpp"
#include "pseg/episodes/prepare.hpp"
#include "pseg/episodes/sampler.hpp"
#include "pseg/fen/config.hpp"
#include "pseg/fen/network.hpp"
#include "pseg/geom/cloud_ops.hpp"
#include "pseg/proto/centers.hpp"
#include "pseg/rng.hpp"
#include "pseg/synth/corpus.hpp"
#include "pseg/train/config.hpp"
#include "pseg/train/episode_loss.hpp"

namespace pseg::train {

/// One finite-difference comparison: the largest relative error observed
/// over every probed coordinate.
struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;

    double worst() const {
        double w = 0.0;
        for (const auto& e : entries) w = std::max(w, e.max_rel_err);
        return w;
    }

    bool passed(double tol) const { return worst() <= tol; }
};

namespace detail {

inline Tensor random_tensor(Rng& rng, Index r, Index c, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros({r, c});
    for (auto& x : t.v) x = rng.uniform(lo, hi);
    return t;
}

/// Values with |x| >= margin, so kinked ops (leaky_relu) and row norms stay
/// away from their non-differentiable points under the probe step.
inline Tensor signed_tensor(Rng& rng, Index r, Index c, double margin) {
    Tensor t = random_tensor(rng, r, c);
    for (auto& x : t.v) x += x >= 0.0 ? margin : -margin;
    return t;
}

}  // namespace detail

/// Checks every tape operation against central differences on small random
/// inputs. Binary operations are probed through each argument in turn.
inline std::vector<GradCheckEntry> op_checks(std::uint64_t seed) {
    using ad::Graph;
    using ad::NodeId;
    std::vector<GradCheckEntry> out;
    Rng rng(sub_seed(seed, "gradcheck.ops"));

    // Standard scalarization: one half the squared Frobenius norm.
    const auto ss = [](Graph& g, NodeId x) { return g.scale(g.sum_squares(x), 0.5); };
    const auto record = [&out](const std::string& name, double err) {
        out.push_back({"op." + name, err});
    };

    {
        const Tensor a = detail::random_tensor(rng, 3, 4);
        const Tensor b = detail::random_tensor(rng, 4, 2);
        const double e1 = ad::grad_check(
            [&](Graph& g, NodeId x) { return ss(g, g.matmul(x, g.constant(b))); }, a);
        const double e2 = ad::grad_check(
            [&](Graph& g, NodeId x) { return ss(g, g.matmul(g.constant(a), x)); }, b);
        record("matmul", std::max(e1, e2));
    }
    {
        const Tensor a = detail::random_tensor(rng, 3, 4);
        record("transpose",
               ad::grad_check([&](Graph& g, NodeId x) { return ss(g, g.transpose(x)); }, a));
    }
    {
        const Tensor a = detail::random_tensor(rng, 3, 4);
        const Tensor b = detail::random_tensor(rng, 3, 4);
        const double e1 = ad::grad_check(
            [&](Graph& g, NodeId x) { return ss(g, g.add(x, g.constant(b))); }, a);
        const double e2 = ad::grad_check(
            [&](Graph& g, NodeId x) { return ss(g, g.add(g.constant(a), x)); }, b);
        record("add", std::max(e1, e2));
        const double e3 = ad::grad_check(
            [&](Graph& g, NodeId x) { return ss(g, g.subtract(x, g.constant(b))); }, a);
        const double e4 = ad::grad_check(
            [&](Graph& g, NodeId x) { return ss(g, g.subtract(g.constant(a), x)); }, b);
        record("subtract", std::max(e3, e4));
    }
    {
        const Tensor a = detail::random_tensor(rng, 3, 4);
        const Tensor b = detail::random_tensor(rng, 1, 4);
        const double e1 = ad::grad_check(
            [&](Graph& g, NodeId x) { return ss(g, g.add_rowvec(x, g.constant(b))); }, a);
        const double e2 = ad::grad_check(
            [&](Graph& g, NodeId x) { return ss(g, g.add_rowvec(g.constant(a), x)); }, b);
        record("add_rowvec", std::max(e1, e2));
    }
    {
        const Tensor a = detail::random_tensor(rng, 3, 4);
        record("scale",
               ad::grad_check([&](Graph& g, NodeId x) { return ss(g, g.scale(x, -1.7)); }, a));
    }
    {
        const Tensor a = detail::random_tensor(rng, 3, 4);
        const Tensor s = detail::random_tensor(rng, 1, 1, 0.5, 1.5);
        const double e1 = ad::grad_check(
            [&](Graph& g, NodeId x) { return ss(g, g.mul_scalar_node(x, g.constant(s))); }, a);
        const double e2 = ad::grad_check(
            [&](Graph& g, NodeId x) { return ss(g, g.mul_scalar_node(g.constant(a), x)); }, s);
        record("mul_scalar_node", std::max(e1, e2));
    }
    {
        const Tensor a = detail::random_tensor(rng, 3, 4, 0.5, 1.5);
        record("reciprocal",
               ad::grad_check([&](Graph& g, NodeId x) { return ss(g, g.reciprocal(x)); }, a));
        record("rsqrt", ad::grad_check([&](Graph& g, NodeId x) { return ss(g, g.rsqrt(x)); }, a));
    }
    {
        const Tensor a = detail::random_tensor(rng, 3, 4);
        record("exp", ad::grad_check([&](Graph& g, NodeId x) { return ss(g, g.exp(x)); }, a));
    }
    {
        const Tensor a = detail::signed_tensor(rng, 3, 4, 0.2);
        record("leaky_relu",
               ad::grad_check([&](Graph& g, NodeId x) { return ss(g, g.leaky_relu(x)); }, a));
    }
    {
        const Tensor a = detail::random_tensor(rng, 3, 2);
        const Tensor b = detail::random_tensor(rng, 3, 3);
        const double e1 = ad::grad_check(
            [&](Graph& g, NodeId x) { return ss(g, g.concat_cols(x, g.constant(b))); }, a);
        const double e2 = ad::grad_check(
            [&](Graph& g, NodeId x) { return ss(g, g.concat_cols(g.constant(a), x)); }, b);
        record("concat_cols", std::max(e1, e2));
    }
    {
        // The probed leaf appears twice, so the split gradient accumulates.
        const Tensor a = detail::random_tensor(rng, 2, 3);
        const Tensor b = detail::random_tensor(rng, 2, 3);
        record("concat_rows", ad::grad_check(
                                  [&](Graph& g, NodeId x) {
                                      return ss(g, g.concat_rows(
                                                       {x, g.constant(b), g.scale(x, 0.5)}));
                                  },
                                  a));
    }
    {
        const Tensor a = detail::random_tensor(rng, 4, 3);
        record("gather_rows", ad::grad_check(
                                  [&](Graph& g, NodeId x) {
                                      return ss(g, g.gather_rows(x, {2, 0, 2, 1, 3}));
                                  },
                                  a));
    }
    {
        // Includes a duplicate (row, col) pair to exercise accumulation.
        const Tensor v = detail::random_tensor(rng, 6, 1);
        record("scatter_matrix",
               ad::grad_check(
                   [&](Graph& g, NodeId x) {
                       return ss(g, g.scatter_matrix(x, {0, 1, 1, 2, 0, 1}, {1, 0, 2, 2, 1, 0},
                                                     3, 3));
                   },
                   v));
    }
    {
        // Well-separated values so the probe step cannot change the argmax.
        std::vector<double> vals(12);
        for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.3 * static_cast<double>(i);
        rng.shuffle(vals);
        const Tensor a({6, 2}, vals);
        record("reduce_max_groups",
               ad::grad_check(
                   [&](Graph& g, NodeId x) {
                       return ss(g, g.reduce_max_groups(x, {{0, 1, 2}, {3, 4, 5}}));
                   },
                   a));
    }
    {
        const Tensor a = detail::random_tensor(rng, 3, 4);
        record("reduce_mean",
               ad::grad_check([&](Graph& g, NodeId x) { return g.reduce_mean(g.exp(x)); }, a));
        record("rowwise_sum_sq",
               ad::grad_check(
                   [&](Graph& g, NodeId x) { return g.reduce_mean(g.rowwise_sum_sq(x)); }, a));
        record("sum_squares",
               ad::grad_check([&](Graph& g, NodeId x) { return g.sum_squares(x); }, a));
        record("reshape",
               ad::grad_check([&](Graph& g, NodeId x) { return ss(g, g.reshape(x, {2, 6})); },
                              a));
    }
    {
        const Tensor a = detail::random_tensor(rng, 3, 4);
        record("softmax_rows",
               ad::grad_check([&](Graph& g, NodeId x) { return ss(g, g.softmax_rows(x)); }, a));
    }
    {
        const Tensor p = detail::random_tensor(rng, 4, 3, 0.2, 0.9);
        record("nll_rows",
               ad::grad_check([&](Graph& g, NodeId x) { return g.nll_rows(x, {0, 2, 1, 1}); },
                              p));
    }
    {
        // Diagonally dominant system, well away from singularity.
        Tensor k = detail::random_tensor(rng, 4, 4, -0.3, 0.3);
        for (Index i = 0; i < 4; ++i) k.v[static_cast<std::size_t>(i * 4 + i)] += 3.0;
        const Tensor y = detail::random_tensor(rng, 4, 2);
        const double e1 = ad::grad_check(
            [&](Graph& g, NodeId x) { return ss(g, g.solve_lu(x, g.constant(y))); }, k);
        const double e2 = ad::grad_check(
            [&](Graph& g, NodeId x) { return ss(g, g.solve_lu(g.constant(k), x)); }, y);
        record("solve_lu", std::max(e1, e2));
    }
    {
        const Tensor a = detail::random_tensor(rng, 3, 4);
        const Tensor r = detail::random_tensor(rng, 3, 1, 0.5, 1.5);
        const Tensor c = detail::random_tensor(rng, 4, 1, 0.5, 1.5);
        const double e1 = ad::grad_check(
            [&](Graph& g, NodeId x) { return ss(g, g.mul_rows(x, g.constant(r))); }, a);
        const double e2 = ad::grad_check(
            [&](Graph& g, NodeId x) { return ss(g, g.mul_rows(g.constant(a), x)); }, r);
        record("mul_rows", std::max(e1, e2));
        const double e3 = ad::grad_check(
            [&](Graph& g, NodeId x) { return ss(g, g.mul_cols(x, g.constant(c))); }, a);
        const double e4 = ad::grad_check(
            [&](Graph& g, NodeId x) { return ss(g, g.mul_cols(g.constant(a), x)); }, c);
        record("mul_cols", std::max(e3, e4));
    }
    {
        const Tensor a = detail::signed_tensor(rng, 3, 4, 0.5);
        record("normalize_rows",
               ad::grad_check([&](Graph& g, NodeId x) { return ss(g, g.normalize_rows(x)); },
                              a));
    }
    return out;
}

/// Differentiates the full feature extractor with respect to every parameter
/// tensor in turn, on a small random cloud.
inline GradCheckEntry extractor_check(std::uint64_t seed) {
    fen::ModelConfig cfg;
    // Full neighborhood on the 10-point probe cloud. The neighbor set then
    // cannot re-wire when a parameter is nudged, so the loss stays smooth at
    // the probe point; with a partial graph the finite differences would
    // occasionally straddle a neighborhood flip and report a false mismatch.
    cfg.k_neighbors = 9;
    cfg.tnet_point_widths = {8, 8};
    cfg.tnet_post_widths = {8};
    cfg.edgeconv_widths = {8, 8};
    cfg.attention_dk = 4;
    cfg.head_widths = {8, 8};

    const fen::ParamMap params = fen::init_params(cfg, sub_seed(seed, "gradcheck.fen"));
    Rng rng(sub_seed(seed, "gradcheck.cloud"));
    geom::PointCloud cloud;
    for (Index i = 0; i < 10; ++i) {
        const geom::Vec3 pos{rng.normal(), rng.normal(), rng.normal()};
        const geom::Vec3 nrm = geom::Vec3{rng.normal(), rng.normal(), rng.normal()}.normalized();
        cloud.points.push_back({pos, nrm});
    }
    const Tensor coords = geom::cloud_coords(cloud);
    const Tensor normals = geom::cloud_normals(cloud);

    double worst = 0.0;
    for (const auto& [name, tensor] : params) {
        auto f = [&](ad::Graph& g, ad::NodeId leaf) {
            fen::ParamNodes p;
            for (const auto& [pname, pt] : params)
                p.ids[pname] = pname == name ? leaf : g.constant(pt);
            const auto ex =
                fen::extract_features(g, g.constant(coords), g.constant(normals), p, cfg);
            return g.add(g.scale(g.sum_squares(ex.features), 0.5), fen::reg_loss(g, ex.a_hat));
        };
        worst = std::max(worst, ad::grad_check(f, tensor, 1e-5));
    }
    return {"extract_features", worst};
}

/// Differentiates the complete episodic training loss with respect to every
/// unfrozen parameter on a 32-point episode with 16-dimensional features.
inline GradCheckEntry episode_loss_check(std::uint64_t seed) {
    const auto specs = synth::random_specs(8, sub_seed(seed, "gradcheck.specs"), 320, 0.0);
    const auto corpus = episodes::prepare_corpus(
        synth::generate_corpus(specs, 1, sub_seed(seed, "gradcheck.gen")), 32,
        sub_seed(seed, "gradcheck.prep"));

    // Pick the two foreground classes with the widest cloud coverage.
    std::vector<std::pair<int, geom::Label>> coverage;
    for (Index c = 1; c < geom::kNumClasses; ++c) {
        int n = 0;
        for (const auto& cloud : corpus) {
            const geom::Label lc = static_cast<geom::Label>(c);
            if (std::find(cloud.labels.begin(), cloud.labels.end(), lc) != cloud.labels.end())
                ++n;
        }
        if (n >= 2) coverage.push_back({-n, static_cast<geom::Label>(c)});
    }
    std::sort(coverage.begin(), coverage.end());
    if (coverage.size() < 2)
        throw SamplingError("episode_loss_check: corpus seed lacks two usable classes");
    const std::vector<geom::Label> active{coverage[0].second, coverage[1].second};

    fen::ModelConfig mcfg;
    mcfg.k_neighbors = 4;
    mcfg.tnet_point_widths = {8, 8};
    mcfg.tnet_post_widths = {8};
    mcfg.edgeconv_widths = {8, 8};
    mcfg.attention_dk = 4;
    mcfg.head_widths = {16, 16};

    TrainConfig tcfg;
    tcfg.seed = seed;
    tcfg.way = 2;
    tcfg.shot = 1;
    tcfg.num_queries = 1;
    tcfg.n_p = 2;
    tcfg.lpa_k = 5;
    tcfg.alpha = 0.9;

    const fen::ParamMap params = fen::init_params(mcfg, sub_seed(seed, "gradcheck.params"));
    const auto ep = episodes::sample_episode(corpus, active, tcfg.way, tcfg.shot,
                                             tcfg.num_queries, sub_seed(seed, "gradcheck.ep"));

    FeatureCache cache;
    const proto::ClassCenters base(geom::kNumClasses, mcfg.feature_dim(), tcfg.center_rate);

    proto::ClassCenters ca = base;
    EpisodeLoss loss = build_episode_loss(ep, corpus, params, ca, mcfg, tcfg, cache);
    loss.graph.backward(loss.root);
    std::map<std::string, Tensor> analytic;
    for (const auto& [name, id] : loss.leaves.ids) analytic.emplace(name, loss.graph.grad(id));

    const auto objective = [&](const fen::ParamMap& p) {
        proto::ClassCenters c = base;
        return build_episode_loss(ep, corpus, p, c, mcfg, tcfg, cache).values.total;
    };

    const double h = 1e-6;
    double worst = 0.0;
    fen::ParamMap probe = params;
    for (const auto& name : fen::unfrozen_names(params, tcfg.unfreeze_attention)) {
        Tensor& t = probe.at(name);
        const Tensor& g = analytic.at(name);
        for (std::size_t i = 0; i < t.v.size(); ++i) {
            const double saved = t.v[i];
            t.v[i] = saved + h;
            const double fp = objective(probe);
            t.v[i] = saved - h;
            const double fm = objective(probe);
            t.v[i] = saved;
            const double cd = (fp - fm) / (2.0 * h);
            worst = std::max(worst, std::abs(g.v[i] - cd) / std::max(1.0, std::abs(cd)));
        }
    }
    return {"episode_loss", worst};
}

/// The full battery: every operation, the extractor, and the episode loss.
inline GradCheckReport run_gradcheck(std::uint64_t seed) {
    GradCheckReport report;
    report.entries = op_checks(seed);
    report.entries.push_back(extractor_check(seed));
    report.entries.push_back(episode_loss_check(seed));
    return report;
}

}  // namespace pseg::train
