#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pseg/ad/grad_check.hpp"
#include "pseg/fen/checkpoint.hpp"
#include "pseg/fen/config.hpp"
#include "pseg/fen/network.hpp"
#include "pseg/geom/cloud_ops.hpp"
#include "pseg/rng.hpp"

using namespace pseg;

namespace {

fen::ModelConfig tiny_config() {
    fen::ModelConfig cfg;
    cfg.k_neighbors = 4;
    cfg.tnet_point_widths = {8, 8};
    cfg.tnet_post_widths = {8};
    cfg.edgeconv_widths = {8, 8};
    cfg.attention_dk = 4;
    cfg.head_widths = {6, 4};
    return cfg;
}

geom::PointCloud random_cloud(Index n, std::uint64_t seed) {
    Rng rng(seed);
    geom::PointCloud c;
    for (Index i = 0; i < n; ++i) {
        geom::Vec3 pos{rng.normal(), rng.normal(), rng.normal()};
        geom::Vec3 nrm = geom::Vec3{rng.normal(), rng.normal(), rng.normal()}.normalized();
        c.points.push_back({pos, nrm});
    }
    return c;
}

geom::PointCloud permute_cloud(const geom::PointCloud& c, const std::vector<std::size_t>& perm) {
    geom::PointCloud out;
    for (std::size_t i : perm) out.points.push_back(c.points[i]);
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.same_shape(b));
    return (a.mat() - b.mat()).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("transform prediction is the identity at initialization") {
    const auto cfg = tiny_config();
    const auto params = fen::init_params(cfg, 7);
    const auto cloud = random_cloud(20, 11);
    const Tensor a = fen::tnet_predict(cloud, params, cfg);
    REQUIRE(a.rows() == 3);
    REQUIRE(a.cols() == 3);
    for (Index i = 0; i < 3; ++i)
        for (Index j = 0; j < 3; ++j) REQUIRE(a.at(i, j) == (i == j ? 1.0 : 0.0));
}

TEST_CASE("transform prediction is permutation invariant") {
    const auto cfg = tiny_config();
    auto params = fen::init_params(cfg, 3);
    // Break the identity initialization so the prediction actually depends
    // on the input.
    params["tnet.out.w"] = fen::detail::gaussian_init(9, 8, 0.3, 99);

    const auto cloud = random_cloud(24, 5);
    std::vector<std::size_t> perm(cloud.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    Rng rng(17);
    rng.shuffle(perm);

    const Tensor a = fen::tnet_predict(cloud, params, cfg);
    const Tensor b = fen::tnet_predict(permute_cloud(cloud, perm), params, cfg);
    REQUIRE(max_abs_diff(a, b) <= 1e-12);
}

TEST_CASE("applying a transform rotates coordinates and normals") {
    const auto cloud = random_cloud(10, 23);

    SECTION("identity leaves the cloud unchanged") {
        const auto out = fen::apply_transform(cloud, Tensor::identity(3));
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            REQUIRE((out.points[i].pos - cloud.points[i].pos).norm() <= 1e-15);
            REQUIRE((out.points[i].normal - cloud.points[i].normal).norm() <= 1e-12);
        }
    }

    SECTION("uniform scaling doubles coordinates but keeps normals unit") {
        const Tensor a = Tensor::matrix(3, 3, {2, 0, 0, 0, 2, 0, 0, 0, 2});
        const auto out = fen::apply_transform(cloud, a);
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            REQUIRE((out.points[i].pos - cloud.points[i].pos * 2.0).norm() <= 1e-12);
            REQUIRE(std::abs(out.points[i].normal.norm() - 1.0) <= 1e-12);
            REQUIRE((out.points[i].normal - cloud.points[i].normal).norm() <= 1e-12);
        }
    }

    SECTION("rotation by 90 degrees about z maps x to y") {
        const Tensor rot = Tensor::matrix(3, 3, {0, -1, 0, 1, 0, 0, 0, 0, 1});
        const auto out = fen::apply_transform(cloud, rot);
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            const geom::Vec3 p = cloud.points[i].pos;
            const geom::Vec3 expect{-p.y, p.x, p.z};
            REQUIRE((out.points[i].pos - expect).norm() <= 1e-12);
            const geom::Vec3 m = cloud.points[i].normal;
            const geom::Vec3 expect_n{-m.y, m.x, m.z};
            REQUIRE((out.points[i].normal - expect_n).norm() <= 1e-12);
        }
    }

    SECTION("zero normals stay zero") {
        geom::PointCloud c = cloud;
        c.points[3].normal = {0, 0, 0};
        const auto out = fen::apply_transform(c, Tensor::matrix(3, 3, {0, -1, 0, 1, 0, 0, 0, 0, 1}));
        REQUIRE(out.points[3].normal.norm() == 0.0);
    }
}

TEST_CASE("orthogonality penalty") {
    REQUIRE(fen::reg_loss(Tensor::identity(3)) == 0.0);

    const double c = std::cos(0.7), s = std::sin(0.7);
    const Tensor rot = Tensor::matrix(3, 3, {c, -s, 0, s, c, 0, 0, 0, 1});
    REQUIRE(fen::reg_loss(rot) <= 1e-12);

    Tensor twice = Tensor::identity(3);
    twice.mat() *= 2.0;
    // I - (2I)(2I)^T = -3I, squared Frobenius norm 27.
    REQUIRE(fen::reg_loss(twice) == 27.0);
}

TEST_CASE("edge convolution") {
    ad::Graph g;
    const double slope = 0.2;

    SECTION("identical features collapse to a pointwise transform") {
        Tensor x({5, 3});
        for (Index i = 0; i < 5; ++i)
            for (Index j = 0; j < 3; ++j) x.at(i, j) = 0.3 * static_cast<double>(j) - 0.1;
        Rng rng(5);
        Tensor theta({4, 3}), phi({4, 3}), bias({1, 4});
        for (double& v : theta.v) v = rng.normal();
        for (double& v : phi.v) v = rng.normal();
        for (double& v : bias.v) v = 0.1 * rng.normal();

        const std::vector<std::vector<Index>> nbrs(5, {0, 1, 2});
        const ad::NodeId y = fen::edgeconv(g, g.constant(x), nbrs, g.constant(theta),
                                           g.constant(phi), g.constant(bias), slope);
        const Tensor& ty = g.value(y);
        // x_j - x_i vanishes, so every row equals leaky_relu(phi x + b).
        for (Index i = 1; i < 5; ++i)
            for (Index j = 0; j < 4; ++j) REQUIRE(ty.at(i, j) == ty.at(0, j));
    }

    SECTION("single point neighbors itself and sees a zero edge vector") {
        const Tensor x = Tensor::matrix(1, 2, {1.5, -0.5});
        const Tensor theta = Tensor::matrix(2, 2, {1, 0, 0, 1});
        const Tensor phi = Tensor::matrix(2, 2, {2, 0, 0, 2});
        const Tensor bias = Tensor::row({0.0, 0.0});
        const auto nbrs = fen::dynamic_neighbors(x, 7);
        REQUIRE(nbrs == std::vector<std::vector<Index>>{{0}});
        const ad::NodeId y = fen::edgeconv(g, g.constant(x), nbrs, g.constant(theta),
                                           g.constant(phi), g.constant(bias), slope);
        REQUIRE(g.value(y).at(0, 0) == 3.0);
        REQUIRE(g.value(y).at(0, 1) == Catch::Approx(-0.2).margin(1e-15));
    }
}

TEST_CASE("self attention with a zero value projection is the identity") {
    auto cfg = tiny_config();
    auto params = fen::init_params(cfg, 2);
    const Index aw = cfg.attention_width();
    params["attn.wv"] = Tensor({aw, aw});

    Rng rng(9);
    Tensor x({7, aw});
    for (double& v : x.v) v = rng.normal();

    ad::Graph g;
    const auto p = fen::make_param_nodes(g, params);
    const ad::NodeId y = fen::self_attention(g, g.constant(x), p, cfg);
    REQUIRE(max_abs_diff(g.value(y), x) == 0.0);
}

TEST_CASE("self attention handles a single row") {
    auto cfg = tiny_config();
    auto params = fen::init_params(cfg, 2);
    Tensor x({1, cfg.attention_width()});
    for (Index j = 0; j < x.cols(); ++j) x.at(0, j) = 0.01 * static_cast<double>(j);

    ad::Graph g;
    const auto p = fen::make_param_nodes(g, params);
    const ad::NodeId y = fen::self_attention(g, g.constant(x), p, cfg);
    REQUIRE(g.value(y).rows() == 1);
    REQUIRE(g.value(y).all_finite());
}

TEST_CASE("feature extraction is permutation equivariant") {
    const auto cfg = tiny_config();
    const auto params = fen::init_params(cfg, 31);
    const auto cloud = random_cloud(26, 13);

    std::vector<std::size_t> perm(cloud.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    Rng rng(41);
    rng.shuffle(perm);

    const auto base = fen::extract_features(cloud, params, cfg);
    const auto permuted = fen::extract_features(permute_cloud(cloud, perm), params, cfg);
    REQUIRE(base.features.rows() == static_cast<Index>(cloud.size()));
    REQUIRE(base.features.cols() == cfg.feature_dim());

    double worst = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i)
        for (Index j = 0; j < base.features.cols(); ++j)
            worst = std::max(worst,
                             std::abs(permuted.features.at(static_cast<Index>(i), j) -
                                      base.features.at(static_cast<Index>(perm[i]), j)));
    REQUIRE(worst <= 1e-9);
    REQUIRE(max_abs_diff(base.a_hat, permuted.a_hat) <= 1e-9);
}

TEST_CASE("feature extraction gradients match finite differences") {
    auto cfg = tiny_config();
    cfg.k_neighbors = 3;
    auto params = fen::init_params(cfg, 47);
    // Give the transform branch real weights so its gradient is nontrivial.
    params["tnet.out.w"] = fen::detail::gaussian_init(9, 8, 0.1, 101);

    const auto cloud = random_cloud(10, 3);
    const Tensor coords = geom::cloud_coords(cloud);
    const Tensor normals = geom::cloud_normals(cloud);

    auto check_param = [&](const std::string& name) {
        const ad::ScalarFn f = [&, name](ad::Graph& g, ad::NodeId leaf) {
            fen::ParamNodes p;
            for (const auto& [pname, t] : params)
                p.ids[pname] = pname == name ? leaf : g.constant(t);
            const auto out =
                fen::extract_features(g, g.constant(coords), g.constant(normals), p, cfg);
            return g.scale(g.sum_squares(out.features), 0.5);
        };
        const double err = ad::grad_check(f, params.at(name), 1e-5);
        INFO(name);
        REQUIRE(err <= 1e-4);
    };

    check_param("tnet.point0.w");
    check_param("tnet.out.w");
    check_param("tnet.out.b");
    check_param("ec0.theta");
    check_param("ec1.phi");
    check_param("ec0.b");
    check_param("attn.wq");
    check_param("head.l0.w");
    check_param("head.l1.b");
}

TEST_CASE("freezing at the tape level stops gradients") {
    const auto cfg = tiny_config();
    const auto params = fen::init_params(cfg, 8);
    const auto cloud = random_cloud(8, 21);

    ad::Graph g;
    const auto p = fen::make_param_nodes(g, params, {"head.l1.w"});
    const auto out = fen::extract_features(g, g.constant(geom::cloud_coords(cloud)),
                                           g.constant(geom::cloud_normals(cloud)), p, cfg);
    g.backward(g.sum_squares(out.features));

    REQUIRE(g.grad(p.at("head.l1.w")).mat().cwiseAbs().maxCoeff() > 0.0);
    REQUIRE(g.grad(p.at("head.l0.w")).mat().cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(g.grad(p.at("ec0.theta")).mat().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("checkpoints round trip bit exactly") {
    const auto cfg = tiny_config();
    const auto params = fen::init_params(cfg, 12345);

    fen::Checkpoint ckpt;
    ckpt.iteration = 77;
    ckpt.tensors = params;
    ckpt.tensors["centers.data"] = fen::detail::gaussian_init(5, cfg.feature_dim(), 1.0, 6);

    const auto path = std::filesystem::temp_directory_path() / "pseg_test_ckpt.bin";
    fen::save_checkpoint(path, ckpt);
    const fen::Checkpoint back = fen::load_checkpoint(path);

    REQUIRE(back.iteration == 77);
    REQUIRE(back.tensors.size() == ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) {
        const auto it = back.tensors.find(name);
        REQUIRE(it != back.tensors.end());
        REQUIRE(it->second.shape == t.shape);
        REQUIRE(std::memcmp(it->second.v.data(), t.v.data(), t.v.size() * sizeof(double)) == 0);
    }
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint loading rejects bad files") {
    const auto dir = std::filesystem::temp_directory_path();
    const auto bad_magic = dir / "pseg_bad_magic.bin";
    {
        std::ofstream out(bad_magic, std::ios::binary);
        out.write("NOPE", 4);
    }
    REQUIRE_THROWS_AS(fen::load_checkpoint(bad_magic), IoError);
    std::filesystem::remove(bad_magic);

    const auto truncated = dir / "pseg_truncated.bin";
    {
        fen::Checkpoint ckpt;
        ckpt.tensors["w"] = Tensor::matrix(2, 2, {1, 2, 3, 4});
        fen::save_checkpoint(truncated, ckpt);
        std::filesystem::resize_file(truncated, std::filesystem::file_size(truncated) - 8);
    }
    REQUIRE_THROWS_AS(fen::load_checkpoint(truncated), IoError);
    std::filesystem::remove(truncated);

    REQUIRE_THROWS_AS(fen::load_checkpoint(dir / "pseg_does_not_exist.bin"), IoError);
}

TEST_CASE("model configuration validation") {
    fen::ModelConfig cfg = tiny_config();
    cfg.k_neighbors = 0;
    REQUIRE_THROWS_AS(cfg.validate(), ParameterError);

    cfg = tiny_config();
    cfg.head_widths.clear();
    REQUIRE_THROWS_AS(cfg.validate(), ParameterError);

    cfg = tiny_config();
    REQUIRE(cfg.attention_width() == 2 * (8 + 8));
    REQUIRE(cfg.feature_dim() == 4);
}
