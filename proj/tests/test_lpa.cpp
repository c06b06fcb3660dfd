#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "pseg/geom/knn.hpp"
#include "pseg/lpa/affinity.hpp"
#include "pseg/lpa/losses.hpp"
#include "pseg/lpa/propagate.hpp"
#include "pseg/lpa/segment.hpp"
#include "pseg/rng.hpp"

using namespace pseg;

namespace {

Tensor random_features(Index n, Index d, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t({n, d});
    for (double& v : t.v) v = rng.normal();
    return t;
}

/// A two-node graph with no edges at all; degrees fall back to the 1e-12
/// regularizer.
lpa::AffinityGraph edgeless_graph(Index n) {
    lpa::AffinityGraph g;
    g.n = n;
    g.k = 0;
    g.sigma2 = 1.0;
    g.nbr.assign(static_cast<std::size_t>(n), {});
    g.weight.assign(static_cast<std::size_t>(n), {});
    g.inv_sqrt_deg.assign(static_cast<std::size_t>(n), 1.0 / std::sqrt(1e-12));
    return g;
}

Tensor dense_propagation_matrix(const lpa::AffinityGraph& g) { return lpa::dense_s(g); }

}  // namespace

TEST_CASE("affinity weights") {
    SECTION("identical features weigh exp(0) = 1") {
        Tensor f({3, 2});
        f.at(0, 0) = 1.0;
        f.at(0, 1) = 2.0;
        f.mat().row(1) = f.mat().row(0);
        f.at(2, 0) = 9.0;
        const auto g = lpa::build_graph(f, 1, 1.0);
        REQUIRE(g.nbr[0][0] == 1);
        REQUIRE(g.weight[0][0] == 1.0);
        REQUIRE(g.nbr[1][0] == 0);
        REQUIRE(g.weight[1][0] == 1.0);
    }

    SECTION("distance d with sigma^2 = d gives 1/e") {
        Tensor f({2, 1});
        f.at(0, 0) = 0.0;
        f.at(1, 0) = 2.0;  // squared distance 4
        const auto g = lpa::build_graph(f, 1, 2.0);
        REQUIRE(g.weight[0][0] == Catch::Approx(std::exp(-1.0)).margin(1e-15));
    }

    SECTION("nonzero pattern matches the knn oracle and weights lie in (0, 1]") {
        const Tensor f = random_features(30, 4, 8);
        const auto g = lpa::build_graph(f, 5, 1.3);
        const auto oracle = geom::knn(f, 5, true);
        REQUIRE(g.nbr == oracle);
        for (const auto& row : g.weight)
            for (double w : row) {
                REQUIRE(w > 0.0);
                REQUIRE(w <= 1.0);
            }
    }

    SECTION("parameter validation") {
        const Tensor f = random_features(4, 2, 1);
        REQUIRE_THROWS_AS(lpa::build_graph(f, 2, 0.0), ParameterError);
        REQUIRE_THROWS_AS(lpa::build_graph(f, 2, -1.0), ParameterError);
        REQUIRE_THROWS_AS(lpa::build_graph(Tensor({1, 2}), 1, 1.0), ParameterError);
    }
}

TEST_CASE("adaptive sigma is the mean squared neighbor distance") {
    const Tensor f = random_features(12, 3, 4);
    const Index k = 3;
    const auto nbr = geom::knn(f, k, true);
    double acc = 0.0;
    for (Index i = 0; i < f.rows(); ++i)
        for (Index j : nbr[static_cast<std::size_t>(i)]) acc += geom::row_dist2(f, i, j);
    const double expect = acc / static_cast<double>(12 * k);
    REQUIRE(lpa::adaptive_sigma2(f, k) == Catch::Approx(expect).margin(1e-15));
}

TEST_CASE("propagation matrix is symmetric") {
    const Tensor f = random_features(25, 3, 19);
    const auto g = lpa::build_graph(f, 6, 1.0);
    const Tensor s = lpa::dense_s(g);
    REQUIRE((s.mat() - s.mat().transpose()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("hand-solved two-node propagation") {
    // Two identical features: mutual neighbors with weight 1, S = [[0,1],[1,0]].
    Tensor f({2, 2});
    f.at(0, 0) = 0.7;
    f.at(0, 1) = -0.3;
    f.mat().row(1) = f.mat().row(0);
    const auto g = lpa::build_graph(f, 1, 1.0);

    const Tensor y = Tensor::matrix(2, 2, {1, 0, 0, 0});
    const Tensor z = lpa::propagate_closed_form(g, y, 0.5);
    REQUIRE(std::abs(z.at(0, 0) - 4.0 / 3.0) <= 1e-12);
    REQUIRE(std::abs(z.at(1, 0) - 2.0 / 3.0) <= 1e-12);
    REQUIRE(std::abs(z.at(0, 1)) <= 1e-12);
    REQUIRE(std::abs(z.at(1, 1)) <= 1e-12);
}

TEST_CASE("edgeless graph propagates nothing") {
    const auto g = edgeless_graph(2);
    const Tensor y = Tensor::matrix(2, 2, {1, 0, 0, 1});
    const Tensor closed = lpa::propagate_closed_form(g, y, 0.9);
    REQUIRE((closed.mat() - y.mat()).cwiseAbs().maxCoeff() <= 1e-12);
    const Tensor iter = lpa::propagate_iterative(g, y, 0.9, 7);
    REQUIRE((iter.mat() - y.mat()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("iterative propagation boundary cases") {
    const Tensor f = random_features(10, 2, 3);
    const auto g = lpa::build_graph(f, 3, 1.0);
    Tensor y({10, 3});
    y.at(0, 1) = 1.0;
    y.at(1, 2) = 1.0;

    SECTION("zero steps returns Y unchanged") {
        const Tensor z = lpa::propagate_iterative(g, y, 0.7, 0);
        REQUIRE((z.mat() - y.mat()).cwiseAbs().maxCoeff() == 0.0);
    }

    SECTION("alpha = 0 collapses to Y after one step") {
        const Tensor z = lpa::propagate_iterative(g, y, 0.0, 1);
        REQUIRE((z.mat() - y.mat()).cwiseAbs().maxCoeff() == 0.0);
    }

    SECTION("negative steps and out-of-range alpha are rejected") {
        REQUIRE_THROWS_AS(lpa::propagate_iterative(g, y, 0.5, -1), ParameterError);
        REQUIRE_THROWS_AS(lpa::propagate_iterative(g, y, 1.0, 5), ParameterError);
        REQUIRE_THROWS_AS(lpa::propagate_closed_form(g, y, -0.1), ParameterError);
    }
}

TEST_CASE("iterative propagation approaches the closed form") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Index n = 20;
        const Tensor f = random_features(n, 3, 100 + seed);
        const double sigma = std::sqrt(lpa::adaptive_sigma2(f, 5));
        const auto g = lpa::build_graph(f, 5, sigma);

        Tensor y({n, 3});
        Rng rng(seed);
        for (Index i = 0; i < 6; ++i) y.at(static_cast<Index>(rng.below(20)), i % 3) = 1.0;

        const Tensor closed = lpa::propagate_closed_form(g, y, 0.9);
        const Tensor iter = lpa::propagate_iterative(g, y, 0.9, 500);
        REQUIRE((iter.mat() - closed.mat()).cwiseAbs().maxCoeff() <= 1e-8);
    }
}

TEST_CASE("iterative updates eventually shrink monotonically") {
    const Tensor f = random_features(16, 3, 55);
    const auto g = lpa::build_graph(f, 4, 1.0);
    Tensor y({16, 2});
    y.at(0, 0) = 1.0;
    y.at(5, 1) = 1.0;

    std::vector<double> deltas;
    Tensor prev = lpa::propagate_iterative(g, y, 0.8, 1);
    for (Index t = 2; t <= 40; ++t) {
        const Tensor cur = lpa::propagate_iterative(g, y, 0.8, t);
        deltas.push_back((cur.mat() - prev.mat()).cwiseAbs().maxCoeff());
        prev = cur;
    }
    // Allow a warmup, then require monotone decay to (near) zero.
    for (std::size_t i = 10; i + 1 < deltas.size(); ++i) REQUIRE(deltas[i + 1] <= deltas[i]);
    REQUIRE(deltas.back() < 1e-3);
}

TEST_CASE("closed form satisfies the fixed-point residual") {
    const Tensor f = random_features(20, 4, 71);
    const auto g = lpa::build_graph(f, 6, 1.1);
    Tensor y({20, 3});
    y.at(2, 0) = 1.0;
    y.at(7, 1) = 1.0;
    y.at(11, 2) = 1.0;

    const double alpha = 0.95;
    const Tensor z = lpa::propagate_closed_form(g, y, alpha);
    const Tensor s = dense_propagation_matrix(g);
    Tensor residual({20, 3});
    residual.mat() = z.mat() - alpha * (s.mat() * z.mat()) - y.mat();
    for (Index c = 0; c < 3; ++c) REQUIRE(residual.mat().col(c).norm() <= 1e-10);
}

TEST_CASE("probability decoding") {
    SECTION("uniform rows decode to uniform probabilities") {
        Tensor z({2, 4});
        z.mat().setConstant(0.37);
        const Tensor h = lpa::predict_probs(z);
        for (Index i = 0; i < 2; ++i)
            for (Index c = 0; c < 4; ++c) REQUIRE(h.at(i, c) == Catch::Approx(0.25).margin(1e-12));
    }

    SECTION("a dominant score saturates") {
        const Tensor h = lpa::predict_probs(Tensor::matrix(1, 3, {10, 0, 0}));
        REQUIRE(h.at(0, 0) == Catch::Approx(0.9999092).margin(1e-6));
        REQUIRE(h.at(0, 1) == Catch::Approx(4.5396e-5).margin(1e-8));
        REQUIRE(h.at(0, 2) == Catch::Approx(4.5396e-5).margin(1e-8));
    }

    SECTION("rows sum to one and argmax ignores shifts") {
        const Tensor z = random_features(9, 5, 13);
        const Tensor h = lpa::predict_probs(z);
        for (Index i = 0; i < 9; ++i)
            REQUIRE(std::abs(h.mat().row(i).sum() - 1.0) <= 1e-9);

        Tensor shifted = z;
        shifted.mat().array() += 3.75;
        REQUIRE(lpa::argmax_rows(lpa::predict_probs(shifted)) == lpa::argmax_rows(h));
    }

    SECTION("exact ties break to the lower class") {
        const Tensor h = lpa::predict_probs(Tensor::matrix(1, 3, {1.0, 2.0, 2.0}));
        REQUIRE(lpa::argmax_rows(h) == std::vector<Index>{1});
    }
}

TEST_CASE("cross entropy") {
    SECTION("perfect one-hot predictions cost nothing") {
        Tensor h({4, 3});
        const std::vector<Index> truth = {0, 2, 1, 2};
        for (Index i = 0; i < 4; ++i) h.at(i, truth[static_cast<std::size_t>(i)]) = 1.0;
        REQUIRE(lpa::cross_entropy(h, truth, 2, 2) <= 1e-11);
    }

    SECTION("uniform over three classes costs ln 3") {
        Tensor h({6, 3});
        h.mat().setConstant(1.0 / 3.0);
        const std::vector<Index> truth = {0, 1, 2, 0, 1, 2};
        REQUIRE(lpa::cross_entropy(h, truth, 2, 3) ==
                Catch::Approx(std::log(3.0)).margin(1e-12));
    }

    SECTION("matches the naive triple-loop oracle") {
        const Index num_q = 2, n = 4, classes = 3;
        Tensor h({num_q * n, classes});
        Rng rng(2);
        std::vector<Index> truth;
        for (Index i = 0; i < num_q * n; ++i) {
            double sum = 0.0;
            for (Index c = 0; c < classes; ++c) {
                h.at(i, c) = rng.uniform(0.01, 1.0);
                sum += h.at(i, c);
            }
            for (Index c = 0; c < classes; ++c) h.at(i, c) /= sum;
            truth.push_back(static_cast<Index>(rng.below(3)));
        }

        double naive = 0.0;
        for (Index q = 0; q < num_q; ++q)
            for (Index p = 0; p < n; ++p)
                for (Index c = 0; c < classes; ++c)
                    if (truth[static_cast<std::size_t>(q * n + p)] == c)
                        naive -= std::log(h.at(q * n + p, c));
        naive /= static_cast<double>(num_q * n);

        REQUIRE(lpa::cross_entropy(h, truth, num_q, n) == Catch::Approx(naive).margin(1e-12));
        REQUIRE(lpa::cross_entropy(h, truth, num_q, n) >= 0.0);
    }

    SECTION("labels out of range are rejected") {
        Tensor h({2, 2});
        h.mat().setConstant(0.5);
        REQUIRE_THROWS_AS(lpa::cross_entropy(h, {0, 2}, 1, 2), ParameterError);
        REQUIRE_THROWS_AS(lpa::cross_entropy(h, {0, 1}, 1, 3), ShapeError);
    }
}

TEST_CASE("episode segmentation") {
    lpa::PropagationConfig cfg;
    cfg.k = 3;
    cfg.alpha = 0.9;
    cfg.sigma = 1.0;

    SECTION("queries on top of one class's prototypes take its label") {
        // Class 1 clusters near the origin, class 2 far away.
        Tensor protos({4, 2});
        protos.mat() << 0.0, 0.0, 0.1, 0.0, 50.0, 50.0, 50.1, 50.0;
        const std::vector<Index> proto_class = {1, 1, 2, 2};

        Tensor queries({3, 2});
        queries.mat() << 0.05, 0.02, -0.03, 0.01, 0.0, 0.08;

        const auto res = lpa::segment_episode(protos, proto_class, queries, 2, cfg);
        REQUIRE(res.labels == std::vector<Index>{1, 1, 1});
        REQUIRE(res.probs.rows() == 3);
        REQUIRE(res.z.rows() == 7);

        Tensor far_queries({2, 2});
        far_queries.mat() << 50.02, 50.01, 49.95, 50.05;
        const auto res2 = lpa::segment_episode(protos, proto_class, far_queries, 2, cfg);
        REQUIRE(res2.labels == std::vector<Index>{2, 2});
    }

    SECTION("a perfectly symmetric tie breaks to the lower class") {
        // Both prototypes and the query share one feature vector, so the
        // propagated scores for class 1 and class 2 are exactly equal.
        Tensor protos({2, 2});
        protos.mat() << 1.0, 2.0, 1.0, 2.0;
        Tensor query({1, 2});
        query.mat() << 1.0, 2.0;
        lpa::PropagationConfig tie_cfg;
        tie_cfg.k = 2;
        tie_cfg.alpha = 0.5;
        tie_cfg.sigma = 1.0;
        const auto res = lpa::segment_episode(protos, {1, 2}, query, 2, tie_cfg);
        REQUIRE(res.probs.at(0, 1) == res.probs.at(0, 2));
        REQUIRE(res.labels == std::vector<Index>{1});
    }

    SECTION("permuting queries permutes predictions") {
        const Tensor protos = random_features(6, 3, 42);
        const std::vector<Index> proto_class = {0, 0, 1, 1, 2, 2};
        const Tensor queries = random_features(9, 3, 43);

        lpa::PropagationConfig acfg;
        acfg.k = 4;
        acfg.alpha = 0.9;
        acfg.sigma = 0.0;  // adaptive
        const auto base = lpa::segment_episode(protos, proto_class, queries, 2, acfg);

        std::vector<std::size_t> perm(9);
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        Rng rng(44);
        rng.shuffle(perm);
        Tensor shuffled({9, 3});
        for (std::size_t i = 0; i < perm.size(); ++i)
            shuffled.mat().row(static_cast<Index>(i)) =
                queries.mat().row(static_cast<Index>(perm[i]));

        const auto permuted = lpa::segment_episode(protos, proto_class, shuffled, 2, acfg);
        for (std::size_t i = 0; i < perm.size(); ++i)
            REQUIRE(permuted.labels[i] == base.labels[perm[i]]);
    }
}
