#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pseg/geom/ply_io.hpp"
#include "pseg/rng.hpp"
#include "pseg/synth/workpiece.hpp"

namespace pseg::synth {

using json = nlohmann::json;

inline std::string to_string(BaseShape b) {
    return b == BaseShape::square_block ? "square_block" : "round_disc";
}
inline std::string to_string(FeatureKind k) {
    switch (k) {
        case FeatureKind::hole: return "hole";
        case FeatureKind::pocket: return "pocket";
        case FeatureKind::chamfer: return "chamfer";
        case FeatureKind::fillet: return "fillet";
    }
    return "?";
}
inline std::string to_string(EdgeId e) {
    switch (e) {
        case EdgeId::xmin: return "xmin";
        case EdgeId::xmax: return "xmax";
        case EdgeId::ymin: return "ymin";
        case EdgeId::ymax: return "ymax";
        case EdgeId::rim: return "rim";
    }
    return "?";
}

inline BaseShape base_shape_from_string(const std::string& s) {
    if (s == "square_block") return BaseShape::square_block;
    if (s == "round_disc") return BaseShape::round_disc;
    throw ConfigError("unknown base_shape: " + s);
}
inline FeatureKind feature_kind_from_string(const std::string& s) {
    if (s == "hole") return FeatureKind::hole;
    if (s == "pocket") return FeatureKind::pocket;
    if (s == "chamfer") return FeatureKind::chamfer;
    if (s == "fillet") return FeatureKind::fillet;
    throw ConfigError("unknown feature kind: " + s);
}
inline EdgeId edge_from_string(const std::string& s) {
    if (s == "xmin") return EdgeId::xmin;
    if (s == "xmax") return EdgeId::xmax;
    if (s == "ymin") return EdgeId::ymin;
    if (s == "ymax") return EdgeId::ymax;
    if (s == "rim") return EdgeId::rim;
    throw ConfigError("unknown edge: " + s);
}

inline json to_json(const FeatureSpec& f) {
    json j{{"kind", to_string(f.kind)}};
    switch (f.kind) {
        case FeatureKind::hole:
            j["cx"] = f.cx;
            j["cy"] = f.cy;
            j["radius"] = f.radius;
            break;
        case FeatureKind::pocket:
            j["cx"] = f.cx;
            j["cy"] = f.cy;
            j["hx"] = f.hx;
            j["hy"] = f.hy;
            j["depth"] = f.depth;
            break;
        case FeatureKind::chamfer:
        case FeatureKind::fillet:
            j["edge"] = to_string(f.edge);
            j["t0"] = f.t0;
            j["t1"] = f.t1;
            j["size"] = f.size;
            break;
    }
    return j;
}

inline FeatureSpec feature_from_json(const json& j) {
    FeatureSpec f;
    f.kind = feature_kind_from_string(j.at("kind").get<std::string>());
    switch (f.kind) {
        case FeatureKind::hole:
            f.cx = j.at("cx").get<double>();
            f.cy = j.at("cy").get<double>();
            f.radius = j.at("radius").get<double>();
            break;
        case FeatureKind::pocket:
            f.cx = j.at("cx").get<double>();
            f.cy = j.at("cy").get<double>();
            f.hx = j.at("hx").get<double>();
            f.hy = j.at("hy").get<double>();
            f.depth = j.at("depth").get<double>();
            break;
        case FeatureKind::chamfer:
        case FeatureKind::fillet:
            f.edge = edge_from_string(j.at("edge").get<std::string>());
            f.t0 = j.at("t0").get<double>();
            f.t1 = j.at("t1").get<double>();
            f.size = j.at("size").get<double>();
            break;
    }
    return f;
}

inline json to_json(const WorkpieceSpec& s) {
    json j{{"base_shape", to_string(s.base_shape)},
           {"height", s.height},
           {"points_per_cloud", s.points_per_cloud},
           {"noise_sigma", s.noise_sigma}};
    if (s.base_shape == BaseShape::square_block) {
        j["length"] = s.length;
        j["width"] = s.width;
    } else {
        j["disc_radius"] = s.disc_radius;
    }
    j["features"] = json::array();
    for (const auto& f : s.features) j["features"].push_back(to_json(f));
    return j;
}

inline WorkpieceSpec spec_from_json(const json& j) {
    WorkpieceSpec s;
    s.base_shape = base_shape_from_string(j.at("base_shape").get<std::string>());
    s.height = j.at("height").get<double>();
    s.points_per_cloud = j.at("points_per_cloud").get<int>();
    s.noise_sigma = j.value("noise_sigma", 0.0);
    if (s.base_shape == BaseShape::square_block) {
        s.length = j.at("length").get<double>();
        s.width = j.at("width").get<double>();
    } else {
        s.disc_radius = j.at("disc_radius").get<double>();
    }
    for (const auto& fj : j.at("features")) s.features.push_back(feature_from_json(fj));
    return s;
}

inline std::vector<WorkpieceSpec> read_specs(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open specs file: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError("specs file is not valid JSON: " + std::string(e.what()));
    }
    std::vector<WorkpieceSpec> out;
    for (const auto& sj : j.at("specs")) out.push_back(spec_from_json(sj));
    return out;
}

inline void write_specs(const std::filesystem::path& path, const std::vector<WorkpieceSpec>& specs) {
    json j;
    j["specs"] = json::array();
    for (const auto& s : specs) j["specs"].push_back(to_json(s));
    std::ofstream out(path);
    if (!out) throw IoError("cannot open specs file for writing: " + path.string());
    out << j.dump(2) << "\n";
}

/// Randomized work-piece specs, every one exhibiting all four feature kinds.
/// Dimension ranges are chosen so the placement rules in validate_spec hold by
/// construction for every draw.
inline std::vector<WorkpieceSpec> random_specs(int count, std::uint64_t seed,
                                               int points_per_cloud = 5000,
                                               double noise_sigma = 0.005) {
    if (count < 1) throw ParameterError("spec count must be >= 1");
    std::vector<WorkpieceSpec> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        Rng rng(sub_seed(seed, "synth.spec", static_cast<std::uint64_t>(i)));
        WorkpieceSpec s;
        s.base_shape = (i % 2 == 0) ? BaseShape::square_block : BaseShape::round_disc;
        s.height = rng.uniform(0.6, 0.9);
        s.points_per_cloud = points_per_cloud;
        s.noise_sigma = noise_sigma;

        FeatureSpec hole;
        hole.kind = FeatureKind::hole;
        hole.radius = rng.uniform(0.2, 0.28);
        FeatureSpec pocket;
        pocket.kind = FeatureKind::pocket;
        pocket.hx = rng.uniform(0.18, 0.26);
        pocket.hy = rng.uniform(0.18, 0.26);
        pocket.depth = rng.uniform(0.3, s.height - 0.15);
        FeatureSpec cham;
        cham.kind = FeatureKind::chamfer;
        cham.size = rng.uniform(0.25, 0.34);
        FeatureSpec fill;
        fill.kind = FeatureKind::fillet;
        fill.size = rng.uniform(0.25, 0.34);

        const bool swap_slots = rng.below(2) == 1;
        if (s.base_shape == BaseShape::square_block) {
            s.length = s.width = 2.6;
            const double a = 0.8 + rng.uniform(-0.03, 0.03);
            const double b = 1.8 + rng.uniform(-0.03, 0.03);
            (swap_slots ? pocket : hole).cx = a;
            (swap_slots ? pocket : hole).cy = a;
            (swap_slots ? hole : pocket).cx = b;
            (swap_slots ? hole : pocket).cy = b;
            // Two distinct edges, bands clear of the corners.
            const EdgeId edges[] = {EdgeId::xmin, EdgeId::xmax, EdgeId::ymin, EdgeId::ymax};
            const std::uint64_t e0 = rng.below(4);
            const std::uint64_t e1 = (e0 + 1 + rng.below(3)) % 4;
            cham.edge = edges[e0];
            fill.edge = edges[e1];
            for (FeatureSpec* band : {&cham, &fill}) {
                const double margin = band->size + 0.05;
                const double len = rng.uniform(1.2, 2.6 - 2.0 * margin);
                const double start = rng.uniform(margin, 2.6 - margin - len);
                band->t0 = start;
                band->t1 = start + len;
            }
        } else {
            s.disc_radius = 1.5;
            const double rho = 0.7;
            const double ang0 = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double ang1 = ang0 + std::numbers::pi;
            (swap_slots ? pocket : hole).cx = rho * std::cos(ang0);
            (swap_slots ? pocket : hole).cy = rho * std::sin(ang0);
            (swap_slots ? hole : pocket).cx = rho * std::cos(ang1);
            (swap_slots ? hole : pocket).cy = rho * std::sin(ang1);
            cham.edge = fill.edge = EdgeId::rim;
            const double len0 = rng.uniform(1.2, 2.2);
            const double len1 = rng.uniform(1.2, 2.2);
            const double gap0 = rng.uniform(0.2, 0.5);
            cham.t0 = rng.uniform(0.0, 0.3);
            cham.t1 = cham.t0 + len0;
            fill.t0 = cham.t1 + gap0;
            fill.t1 = fill.t0 + len1;
            if (rng.below(2) == 1) {
                std::swap(cham.t0, fill.t0);
                std::swap(cham.t1, fill.t1);
            }
        }
        s.features = {hole, pocket, cham, fill};
        validate_spec(s);
        out.push_back(std::move(s));
    }
    return out;
}

inline std::vector<LabeledPointCloud> generate_corpus(const std::vector<WorkpieceSpec>& specs,
                                                      int clouds_per_spec, std::uint64_t rng_seed) {
    if (specs.empty()) throw ParameterError("specs list is empty");
    if (clouds_per_spec < 1) throw ParameterError("clouds_per_spec must be >= 1");
    std::vector<LabeledPointCloud> out;
    out.reserve(specs.size() * static_cast<std::size_t>(clouds_per_spec));
    std::uint64_t idx = 0;
    for (const auto& spec : specs)
        for (int c = 0; c < clouds_per_spec; ++c, ++idx)
            out.push_back(generate_workpiece(spec, sub_seed(rng_seed, "synth.cloud", idx)));
    return out;
}

inline std::string cloud_file_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "cloud_%05zu.ply", index);
    return buf;
}

/// Writes PLY files plus specs.json and manifest.json into `dir`.
inline void write_corpus(const std::filesystem::path& dir, const std::vector<WorkpieceSpec>& specs,
                         int clouds_per_spec, std::uint64_t rng_seed) {
    std::filesystem::create_directories(dir);
    write_specs(dir / "specs.json", specs);

    json manifest;
    manifest["seed"] = rng_seed;
    manifest["clouds"] = json::array();
    std::uint64_t idx = 0;
    for (std::size_t si = 0; si < specs.size(); ++si) {
        for (int c = 0; c < clouds_per_spec; ++c, ++idx) {
            const std::uint64_t cloud_seed = sub_seed(rng_seed, "synth.cloud", idx);
            const LabeledPointCloud cloud = generate_workpiece(specs[si], cloud_seed);
            const std::string name = cloud_file_name(static_cast<std::size_t>(idx));
            geom::write_ply(dir / name, cloud);

            std::vector<std::uint64_t> hist(geom::kNumClasses, 0);
            for (Label l : cloud.labels) ++hist[l];
            manifest["clouds"].push_back(
                {{"file", name}, {"spec", si}, {"seed", cloud_seed}, {"histogram", hist}});
        }
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write manifest.json in " + dir.string());
    out << manifest.dump(2) << "\n";
}

/// Reads every cloud listed in the directory's manifest, in manifest order.
inline std::vector<LabeledPointCloud> load_corpus(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("cannot open manifest.json in " + dir.string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw IoError("manifest.json is not valid JSON: " + std::string(e.what()));
    }
    std::vector<LabeledPointCloud> out;
    for (const auto& entry : manifest.at("clouds"))
        out.push_back(geom::read_ply(dir / entry.at("file").get<std::string>()));
    return out;
}

}  // namespace pseg::synth
