#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <filesystem>

#include "pseg/synth/corpus.hpp"
#include "pseg/synth/workpiece.hpp"

using namespace pseg;
using namespace pseg::synth;

namespace {

WorkpieceSpec block_with_all_features() {
    WorkpieceSpec s;
    s.base_shape = BaseShape::square_block;
    s.length = s.width = 2.6;
    s.height = 0.8;
    s.points_per_cloud = 4096;
    FeatureSpec hole{.kind = FeatureKind::hole, .cx = 0.8, .cy = 0.8, .radius = 0.25};
    FeatureSpec pocket{
        .kind = FeatureKind::pocket, .cx = 1.8, .cy = 1.8, .hx = 0.22, .hy = 0.2, .depth = 0.4};
    FeatureSpec cham{.kind = FeatureKind::chamfer,
                     .edge = EdgeId::xmax,
                     .t0 = 0.6,
                     .t1 = 2.0,
                     .size = 0.3};
    FeatureSpec fill{.kind = FeatureKind::fillet,
                     .edge = EdgeId::ymin,
                     .t0 = 0.6,
                     .t1 = 2.0,
                     .size = 0.3};
    s.features = {hole, pocket, cham, fill};
    return s;
}

}  // namespace

TEST_CASE("zero-feature spec yields all-Plane labels") {
    WorkpieceSpec s;
    s.points_per_cloud = 256;
    auto cloud = generate_workpiece(s, 42);
    REQUIRE(cloud.size() == 256);
    for (auto l : cloud.labels) REQUIRE(l == geom::kPlane);
}

TEST_CASE("hole points satisfy the bore cylinder equation at zero noise") {
    auto s = block_with_all_features();
    auto cloud = generate_workpiece(s, 7);
    const auto& hole = s.features[0];
    std::size_t count = 0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (cloud.labels[i] != geom::kHole) continue;
        ++count;
        const auto& p = cloud.cloud.points[i].pos;
        const double rho = std::hypot(p.x - hole.cx, p.y - hole.cy);
        REQUIRE(std::abs(rho - hole.radius) < 1e-9);
        REQUIRE(p.z >= -1e-9);
        REQUIRE(p.z <= s.height + 1e-9);
    }
    REQUIRE(count > 0);
}

TEST_CASE("normals are unit length and outward at zero noise") {
    for (int variant = 0; variant < 2; ++variant) {
        WorkpieceSpec s;
        if (variant == 0) {
            s = block_with_all_features();
        } else {
            s.base_shape = BaseShape::round_disc;
            s.disc_radius = 1.5;
            s.height = 0.7;
            s.points_per_cloud = 4096;
            FeatureSpec hole{.kind = FeatureKind::hole, .cx = 0.5, .cy = 0.5, .radius = 0.22};
            FeatureSpec cham{.kind = FeatureKind::chamfer,
                             .edge = EdgeId::rim,
                             .t0 = 0.5,
                             .t1 = 2.4,
                             .size = 0.3};
            FeatureSpec fill{.kind = FeatureKind::fillet,
                             .edge = EdgeId::rim,
                             .t0 = 3.0,
                             .t1 = 5.2,
                             .size = 0.3};
            s.features = {hole, cham, fill};
        }
        auto cloud = generate_workpiece(s, 3);
        for (const auto& p : cloud.cloud.points)
            REQUIRE(std::abs(p.normal.norm() - 1.0) < 1e-6);

        // fillet band normals must vary continuously between face-up and sideways
        bool saw_up = false, saw_side = false;
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            if (cloud.labels[i] != geom::kFillet) continue;
            const double nz = cloud.cloud.points[i].normal.z;
            if (nz > 0.9) saw_up = true;
            if (nz < 0.45) saw_side = true;
        }
        REQUIRE(saw_up);
        REQUIRE(saw_side);
    }
}

TEST_CASE("label proportions track analytic surface areas") {
    auto s = block_with_all_features();
    s.points_per_cloud = 8192;

    std::array<double, geom::kNumClasses> got{};
    std::array<std::size_t, geom::kNumClasses> counts{};
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto cloud = generate_workpiece(s, seed);
        for (auto l : cloud.labels) ++counts[l];
    }
    const double n_total = 10.0 * static_cast<double>(s.points_per_cloud);
    for (std::size_t c = 0; c < got.size(); ++c) got[c] = static_cast<double>(counts[c]) / n_total;

    // analytic areas, recomputed by hand from the spec fields
    const double hole_area = 2.0 * std::numbers::pi * 0.25 * s.height;
    const double top = s.length * s.width - std::numbers::pi * 0.25 * 0.25 - 4 * 0.22 * 0.2 -
                       1.4 * 0.3 * 2.0;
    const double bottom = s.length * s.width - std::numbers::pi * 0.25 * 0.25;
    const double walls = 4.0 * s.length * s.height - 2.0 * 1.4 * 0.3;
    const double plane_area = top + bottom + walls;
    const double pocket_area = 4.0 * 0.22 * 0.2 + 2.0 * (0.44 + 0.4) * 0.4;
    const double cham_area = 1.4 * 0.3 * std::numbers::sqrt2;
    const double fill_area = 1.4 * 0.3 * std::numbers::pi / 2.0;
    const double total = plane_area + hole_area + pocket_area + cham_area + fill_area;

    const std::array<double, geom::kNumClasses> expect{plane_area / total, hole_area / total,
                                                       pocket_area / total, cham_area / total,
                                                       fill_area / total};
    for (std::size_t c = 0; c < got.size(); ++c) {
        INFO("class " << c << " got " << got[c] << " expect " << expect[c]);
        REQUIRE(std::abs(got[c] - expect[c]) <= 0.2 * expect[c]);
    }
}

TEST_CASE("generation is deterministic and overlap is rejected") {
    auto s = block_with_all_features();
    auto a = generate_workpiece(s, 5);
    auto b = generate_workpiece(s, 5);
    REQUIRE(a.cloud.points.size() == b.cloud.points.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a.cloud.points[i].pos.x == b.cloud.points[i].pos.x);
        REQUIRE(a.labels[i] == b.labels[i]);
    }

    auto bad = s;
    bad.features[1].cx = bad.features[0].cx + 0.1;  // pocket on top of hole
    bad.features[1].cy = bad.features[0].cy;
    REQUIRE_THROWS_AS(generate_workpiece(bad, 1), SpecError);

    auto tiny = s;
    tiny.points_per_cloud = 8;
    REQUIRE_THROWS_AS(generate_workpiece(tiny, 1), SpecError);
}

TEST_CASE("corpus generation, spec JSON round-trip, and manifest") {
    namespace fs = std::filesystem;
    auto specs = random_specs(4, 99, 512, 0.0);
    for (const auto& s : specs) REQUIRE_NOTHROW(validate_spec(s));

    auto corpus = generate_corpus(specs, 2, 1234);
    REQUIRE(corpus.size() == 8);
    auto again = generate_corpus(specs, 2, 1234);
    for (std::size_t i = 0; i < corpus.size(); ++i)
        for (std::size_t j = 0; j < corpus[i].size(); ++j)
            REQUIRE(corpus[i].cloud.points[j].pos.x == again[i].cloud.points[j].pos.x);

    // every class appears somewhere in the corpus
    std::array<std::size_t, geom::kNumClasses> counts{};
    for (const auto& c : corpus)
        for (auto l : c.labels) ++counts[l];
    for (std::size_t c = 0; c < counts.size(); ++c) {
        INFO("class " << c);
        REQUIRE(counts[c] > 0);
    }

    const fs::path dir = fs::temp_directory_path() / "pseg_corpus_test";
    fs::remove_all(dir);
    write_corpus(dir, specs, 2, 1234);
    REQUIRE(fs::exists(dir / "specs.json"));
    REQUIRE(fs::exists(dir / "manifest.json"));

    auto specs_back = read_specs(dir / "specs.json");
    REQUIRE(specs_back.size() == specs.size());
    auto corpus_back = load_corpus(dir);
    REQUIRE(corpus_back.size() == corpus.size());
    // PLY stores float32, so compare at float precision
    for (std::size_t i = 0; i < corpus.size(); ++i)
        for (std::size_t j = 0; j < corpus[i].size(); ++j) {
            REQUIRE(static_cast<float>(corpus[i].cloud.points[j].pos.x) ==
                    static_cast<float>(corpus_back[i].cloud.points[j].pos.x));
            REQUIRE(corpus[i].labels[j] == corpus_back[i].labels[j]);
        }
    fs::remove_all(dir);
}
