#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pseg/ad/grad_check.hpp"
#include "pseg/ad/graph.hpp"
#include "pseg/rng.hpp"

using namespace pseg;
using namespace pseg::ad;

namespace {

Tensor rand_tensor(Index r, Index c, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Tensor t({r, c});
    Rng rng(seed);
    for (double& x : t.v) x = rng.uniform(lo, hi);
    return t;
}

NodeId sum_all(Graph& g, NodeId a) {
    return g.scale(g.reduce_mean(a), static_cast<double>(g.value(a).numel()));
}

}  // namespace

TEST_CASE("forward op identities") {
    Graph g;
    Tensor a = rand_tensor(3, 3, 1);
    NodeId prod = g.matmul(g.constant(Tensor::identity(3)), g.constant(a));
    for (Index i = 0; i < 9; ++i) REQUIRE(g.value(prod)[i] == a[i]);

    NodeId sm = g.softmax_rows(g.constant(Tensor::row({2.5, 2.5, 2.5, 2.5})));
    for (Index i = 0; i < 4; ++i) REQUIRE(g.value(sm)[i] == Catch::Approx(0.25));

    NodeId mx = g.reduce_max_groups(g.constant(Tensor::matrix(3, 1, {3, 7, 5})), {{0, 1}, {2}});
    REQUIRE(g.value(mx)[0] == 7.0);
    REQUIRE(g.value(mx)[1] == 5.0);
}

TEST_CASE("softmax rows sum to one and are shift-invariant") {
    Tensor x = rand_tensor(6, 5, 3, -4, 4);
    Graph g;
    const Tensor& y = g.value(g.softmax_rows(g.constant(x)));
    for (Index i = 0; i < 6; ++i) {
        double s = 0;
        for (Index j = 0; j < 5; ++j) s += y.at(i, j);
        REQUIRE(std::abs(s - 1.0) < 1e-9);
    }
    Tensor shifted = x;
    shifted.mat().array() += 13.0;
    Graph g2;
    const Tensor& y2 = g2.value(g2.softmax_rows(g2.constant(shifted)));
    for (Index i = 0; i < 30; ++i) REQUIRE(std::abs(y[i] - y2[i]) < 1e-9);
}

TEST_CASE("backward basics") {
    Graph g;
    NodeId x = g.leaf(Tensor::row({1, 2}));
    NodeId loss = g.sum_squares(x);
    g.backward(loss);
    REQUIRE(g.grad(x)[0] == 2.0);
    REQUIRE(g.grad(x)[1] == 4.0);

    // backward twice gives identical gradients
    g.backward(loss);
    REQUIRE(g.grad(x)[0] == 2.0);

    REQUIRE_THROWS_AS(g.backward(g.add(x, x)), ParameterError);
}

TEST_CASE("gradient of sum(AB) w.r.t. A equals ones times B transpose") {
    Tensor a = rand_tensor(4, 3, 5);
    Tensor b = rand_tensor(3, 2, 6);
    Graph g;
    NodeId an = g.leaf(a);
    NodeId loss = sum_all(g, g.matmul(an, g.constant(b)));
    g.backward(loss);
    const Tensor& da = g.grad(an);
    for (Index i = 0; i < 4; ++i)
        for (Index j = 0; j < 3; ++j) {
            double expect = 0;
            for (Index c = 0; c < 2; ++c) expect += b.at(j, c);
            REQUIRE(std::abs(da.at(i, j) - expect) < 1e-12);
        }
}

TEST_CASE("grad_check on linear and quadratic functions") {
    Tensor x = rand_tensor(2, 4, 9);
    REQUIRE(grad_check([](Graph& g, NodeId v) { return sum_all(g, v); }, x) <= 1e-9);
    Tensor x8 = rand_tensor(1, 8, 10);
    REQUIRE(grad_check([](Graph& g, NodeId v) { return g.sum_squares(v); }, x8) <= 1e-6);
}

TEST_CASE("every differentiable op passes grad_check") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Tensor a = rand_tensor(4, 3, seed * 31 + 1);
        const Tensor b = rand_tensor(4, 3, seed * 31 + 2);
        const Tensor m = rand_tensor(3, 5, seed * 31 + 3);
        const Tensor pos = rand_tensor(4, 3, seed * 31 + 4, 0.5, 2.0);
        const Tensor rowv = rand_tensor(1, 3, seed * 31 + 5);
        const Tensor col4 = rand_tensor(4, 1, seed * 31 + 6, 0.5, 1.5);
        const Tensor col3 = rand_tensor(3, 1, seed * 31 + 7, 0.5, 1.5);

        auto check = [&](const char* what, const ScalarFn& fn, const Tensor& x) {
            INFO("op " << what << " seed " << seed);
            REQUIRE(grad_check(fn, x) <= 1e-4);
        };

        check("matmul_lhs",
              [&](Graph& g, NodeId v) { return g.sum_squares(g.matmul(v, g.constant(m))); }, a);
        check("matmul_rhs",
              [&](Graph& g, NodeId v) { return g.sum_squares(g.matmul(g.constant(a), v)); }, m);
        check("transpose", [&](Graph& g, NodeId v) { return g.sum_squares(g.transpose(v)); }, a);
        check("add",
              [&](Graph& g, NodeId v) { return g.sum_squares(g.add(v, g.constant(b))); }, a);
        check("subtract",
              [&](Graph& g, NodeId v) { return g.sum_squares(g.subtract(g.constant(b), v)); }, a);
        check("add_rowvec_mat",
              [&](Graph& g, NodeId v) { return g.sum_squares(g.add_rowvec(v, g.constant(rowv))); },
              a);
        check("add_rowvec_vec",
              [&](Graph& g, NodeId v) { return g.sum_squares(g.add_rowvec(g.constant(a), v)); },
              rowv);
        check("scale", [&](Graph& g, NodeId v) { return g.sum_squares(g.scale(v, -2.5)); }, a);
        check("mul_scalar_node_a",
              [&](Graph& g, NodeId v) {
                  return g.sum_squares(g.mul_scalar_node(v, g.constant(Tensor::row({1.7}))));
              },
              a);
        check("mul_scalar_node_s",
              [&](Graph& g, NodeId v) { return g.sum_squares(g.mul_scalar_node(g.constant(a), v)); },
              rand_tensor(1, 1, seed * 31 + 8, 0.5, 1.5));
        check("reciprocal", [&](Graph& g, NodeId v) { return g.sum_squares(g.reciprocal(v)); },
              pos);
        check("rsqrt", [&](Graph& g, NodeId v) { return g.sum_squares(g.rsqrt(v)); }, pos);
        check("exp", [&](Graph& g, NodeId v) { return g.sum_squares(g.exp(v)); }, a);
        check("leaky_relu",
              [&](Graph& g, NodeId v) { return g.sum_squares(g.leaky_relu(v, 0.2)); }, a);
        check("concat_cols",
              [&](Graph& g, NodeId v) { return g.sum_squares(g.concat_cols(v, g.constant(b))); },
              a);
        check("concat_rows",
              [&](Graph& g, NodeId v) {
                  return g.sum_squares(g.concat_rows({v, g.constant(b), v}));
              },
              a);
        check("gather_rows",
              [&](Graph& g, NodeId v) { return g.sum_squares(g.gather_rows(v, {0, 2, 2, 3, 1})); },
              a);
        check("scatter_matrix",
              [&](Graph& g, NodeId v) {
                  return g.sum_squares(g.scatter_matrix(v, {0, 1, 1, 3}, {2, 0, 0, 4}, 4, 5));
              },
              rand_tensor(4, 1, seed * 31 + 9));
        check("reduce_max_groups",
              [&](Graph& g, NodeId v) {
                  return g.sum_squares(g.reduce_max_groups(v, {{0, 2}, {1, 3}}));
              },
              a);
        check("reduce_mean", [&](Graph& g, NodeId v) { return g.reduce_mean(v); }, a);
        check("rowwise_sum_sq",
              [&](Graph& g, NodeId v) { return g.sum_squares(g.rowwise_sum_sq(v)); }, a);
        check("softmax_rows",
              [&](Graph& g, NodeId v) { return g.sum_squares(g.softmax_rows(v)); }, a);
        check("nll_rows",
              [&](Graph& g, NodeId v) { return g.nll_rows(v, {2, 0, 1, 2}); }, pos);
        check("reshape",
              [&](Graph& g, NodeId v) { return g.sum_squares(g.reshape(v, {2, 6})); }, a);
        check("mul_rows",
              [&](Graph& g, NodeId v) { return g.sum_squares(g.mul_rows(v, g.constant(col4))); },
              a);
        check("mul_rows_scale",
              [&](Graph& g, NodeId v) { return g.sum_squares(g.mul_rows(g.constant(a), v)); },
              col4);
        check("mul_cols",
              [&](Graph& g, NodeId v) { return g.sum_squares(g.mul_cols(v, g.constant(col3))); },
              a);
        check("mul_cols_scale",
              [&](Graph& g, NodeId v) { return g.sum_squares(g.mul_cols(g.constant(a), v)); },
              col3);
        check("normalize_rows",
              [&](Graph& g, NodeId v) { return g.sum_squares(g.normalize_rows(v)); }, pos);

        Tensor k = rand_tensor(4, 4, seed * 31 + 10);
        k.mat() += 4.0 * Eigen::MatrixXd::Identity(4, 4);
        const Tensor y = rand_tensor(4, 2, seed * 31 + 11);
        check("solve_lu_k",
              [&](Graph& g, NodeId v) { return g.sum_squares(g.solve_lu(v, g.constant(y))); }, k);
        check("solve_lu_y",
              [&](Graph& g, NodeId v) { return g.sum_squares(g.solve_lu(g.constant(k), v)); }, y);
    }
}

TEST_CASE("max reduction routes gradient to the lowest tied index") {
    Graph g;
    NodeId x = g.leaf(Tensor::matrix(3, 1, {5, 5, 1}));
    NodeId loss = sum_all(g, g.reduce_max_groups(x, {{0, 1, 2}}));
    g.backward(loss);
    REQUIRE(g.grad(x)[0] == 1.0);
    REQUIRE(g.grad(x)[1] == 0.0);
    REQUIRE(g.grad(x)[2] == 0.0);
}

TEST_CASE("shape and parameter errors") {
    Graph g;
    NodeId a = g.constant(rand_tensor(2, 3, 1));
    NodeId b = g.constant(rand_tensor(2, 2, 2));
    REQUIRE_THROWS_AS(g.matmul(a, b), ShapeError);
    REQUIRE_THROWS_AS(g.add(a, b), ShapeError);
    REQUIRE_THROWS_AS(g.reduce_max_groups(a, {{}}), ParameterError);
    REQUIRE_THROWS_AS(g.gather_rows(a, {5}), ParameterError);
    REQUIRE_THROWS_AS(g.reshape(a, {4, 4}), ShapeError);
}
