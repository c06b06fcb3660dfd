#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "pseg/geom/point_cloud.hpp"
#include "pseg/rng.hpp"

namespace pseg::synth {

using geom::Label;
using geom::LabeledPointCloud;
using geom::Point;
using geom::Vec3;

enum class BaseShape { square_block, round_disc };

enum class FeatureKind { hole, pocket, chamfer, fillet };

/// Edge carrying a chamfer or fillet band. Square blocks use the four top
/// edges; round discs use the top rim (span measured in radians).
enum class EdgeId { xmin, xmax, ymin, ymax, rim };

struct FeatureSpec {
    FeatureKind kind = FeatureKind::hole;
    // hole: through-bore at (cx, cy) with `radius`.
    // pocket: recess centered at (cx, cy), half extents (hx, hy), depth `depth`.
    // chamfer/fillet: band of width `size` on `edge`, covering [t0, t1] along it.
    double cx = 0.0, cy = 0.0;
    double radius = 0.0;
    double hx = 0.0, hy = 0.0;
    double depth = 0.0;
    EdgeId edge = EdgeId::xmax;
    double t0 = 0.0, t1 = 0.0;
    double size = 0.0;
};

struct WorkpieceSpec {
    BaseShape base_shape = BaseShape::square_block;
    double length = 2.0;      // square block x extent
    double width = 2.0;       // square block y extent
    double height = 1.0;      // z extent (both base shapes)
    double disc_radius = 1.0; // round disc radius
    std::vector<FeatureSpec> features;
    int points_per_cloud = 5000;
    double noise_sigma = 0.0;
};

namespace detail {

constexpr double kGap = 1e-6;  // minimum clearance between feature footprints

inline bool is_edge_feature(const FeatureSpec& f) {
    return f.kind == FeatureKind::chamfer || f.kind == FeatureKind::fillet;
}

inline double edge_length(const WorkpieceSpec& s, EdgeId e) {
    switch (e) {
        case EdgeId::xmin:
        case EdgeId::xmax: return s.width;
        case EdgeId::ymin:
        case EdgeId::ymax: return s.length;
        case EdgeId::rim: return 2.0 * std::numbers::pi;
    }
    return 0.0;
}

inline void require(bool ok, const std::string& what) {
    if (!ok) throw SpecError("invalid workpiece spec: " + what);
}

/// Largest band width cut into the given square-block edge, 0 if none.
inline double edge_inset(const WorkpieceSpec& s, EdgeId e) {
    double w = 0.0;
    for (const auto& f : s.features)
        if (is_edge_feature(f) && f.edge == e) w = std::max(w, f.size);
    return w;
}

inline void validate_interior_pair(const FeatureSpec& a, const FeatureSpec& b) {
    auto circum = [](const FeatureSpec& f) {
        return f.kind == FeatureKind::hole ? f.radius : std::hypot(f.hx, f.hy);
    };
    // Conservative: compare circumscribed circles.
    const double dx = a.cx - b.cx, dy = a.cy - b.cy;
    require(std::hypot(dx, dy) >= circum(a) + circum(b) + kGap, "interior features overlap");
}

inline void validate_spec(const WorkpieceSpec& s) {
    require(s.points_per_cloud >= 64, "points_per_cloud must be >= 64");
    require(std::isfinite(s.noise_sigma) && s.noise_sigma >= 0.0, "noise_sigma must be >= 0");
    require(s.height > 0.0, "height must be positive");
    if (s.base_shape == BaseShape::square_block)
        require(s.length > 0.0 && s.width > 0.0, "block extents must be positive");
    else
        require(s.disc_radius > 0.0, "disc radius must be positive");

    const bool square = s.base_shape == BaseShape::square_block;
    for (const auto& f : s.features) {
        switch (f.kind) {
            case FeatureKind::hole:
                require(f.radius > 0.0, "hole radius must be positive");
                break;
            case FeatureKind::pocket:
                require(f.hx > 0.0 && f.hy > 0.0, "pocket extents must be positive");
                require(f.depth > 0.0 && f.depth < s.height, "pocket depth must be in (0, height)");
                break;
            case FeatureKind::chamfer:
            case FeatureKind::fillet: {
                require(f.size > 0.0 && f.size < s.height, "band size must be in (0, height)");
                require(square ? f.edge != EdgeId::rim : f.edge == EdgeId::rim,
                        "edge does not belong to the base shape");
                const double len = edge_length(s, f.edge);
                require(f.t1 > f.t0, "band span must be non-empty");
                if (f.edge == EdgeId::rim) {
                    require(f.t0 >= 0.0 && f.t1 <= len, "rim span out of range");
                    require(f.size < s.disc_radius, "rim band wider than disc radius");
                } else {
                    // Keep bands clear of corners so adjacent-edge bands cannot meet.
                    const double clear = f.size + kGap;
                    require(f.t0 >= clear && f.t1 <= len - clear, "band span too close to a corner");
                }
                break;
            }
        }
    }

    // Interior features must stay inside the top face, clear of any edge bands.
    for (const auto& f : s.features) {
        if (is_edge_feature(f)) continue;
        const double r = f.kind == FeatureKind::hole ? f.radius : std::hypot(f.hx, f.hy);
        if (square) {
            require(f.cx - r >= edge_inset(s, EdgeId::xmin) + kGap &&
                        f.cx + r <= s.length - edge_inset(s, EdgeId::xmax) - kGap &&
                        f.cy - r >= edge_inset(s, EdgeId::ymin) + kGap &&
                        f.cy + r <= s.width - edge_inset(s, EdgeId::ymax) - kGap,
                    "interior feature leaves the top face");
        } else {
            double rim = 0.0;
            for (const auto& g : s.features)
                if (is_edge_feature(g)) rim = std::max(rim, g.size);
            require(std::hypot(f.cx, f.cy) + r <= s.disc_radius - rim - kGap,
                    "interior feature leaves the top face");
        }
    }

    for (std::size_t i = 0; i < s.features.size(); ++i) {
        for (std::size_t j = i + 1; j < s.features.size(); ++j) {
            const auto& a = s.features[i];
            const auto& b = s.features[j];
            if (!is_edge_feature(a) && !is_edge_feature(b)) {
                validate_interior_pair(a, b);
            } else if (is_edge_feature(a) && is_edge_feature(b)) {
                if (a.edge == b.edge)
                    require(a.t1 + kGap <= b.t0 || b.t1 + kGap <= a.t0,
                            "edge bands overlap on the same edge");
            }
            // Interior-vs-edge separation is already enforced by the inset check.
        }
    }
}

/// One analytic surface patch: draws an area-uniform point with its outward
/// unit normal. `sample` may reject (cutout hit) and is retried by the caller.
struct Surface {
    Label label = 0;
    double area = 0.0;
    std::function<bool(Rng&, Point&)> sample;
};

/// Point-in-footprint tests used to cut holes/pockets/bands out of faces.
struct Cutouts {
    const WorkpieceSpec* spec;

    bool on_top_face(double x, double y) const {
        for (const auto& f : spec->features) {
            switch (f.kind) {
                case FeatureKind::hole:
                    if (std::hypot(x - f.cx, y - f.cy) < f.radius) return false;
                    break;
                case FeatureKind::pocket:
                    if (std::abs(x - f.cx) < f.hx && std::abs(y - f.cy) < f.hy) return false;
                    break;
                case FeatureKind::chamfer:
                case FeatureKind::fillet: {
                    if (f.edge == EdgeId::rim) {
                        const double rho = std::hypot(x, y);
                        double th = std::atan2(y, x);
                        if (th < 0) th += 2.0 * std::numbers::pi;
                        if (rho > spec->disc_radius - f.size && th >= f.t0 && th <= f.t1)
                            return false;
                    } else {
                        double t, d;  // coordinate along the edge, depth into the face
                        switch (f.edge) {
                            case EdgeId::xmin: t = y; d = x; break;
                            case EdgeId::xmax: t = y; d = spec->length - x; break;
                            case EdgeId::ymin: t = x; d = y; break;
                            default: t = x; d = spec->width - y; break;
                        }
                        if (d < f.size && t >= f.t0 && t <= f.t1) return false;
                    }
                    break;
                }
            }
        }
        return true;
    }

    bool on_bottom_face(double x, double y) const {
        for (const auto& f : spec->features)
            if (f.kind == FeatureKind::hole && std::hypot(x - f.cx, y - f.cy) < f.radius)
                return false;
        return true;
    }

    // (t, z) on a square-block side wall, or (theta, z) on the disc wall.
    bool on_wall(EdgeId e, double t, double z) const {
        for (const auto& f : spec->features)
            if (is_edge_feature(f) && f.edge == e && z > spec->height - f.size && t >= f.t0 &&
                t <= f.t1)
                return false;
        return true;
    }
};

inline double top_face_area(const WorkpieceSpec& s) {
    double a = s.base_shape == BaseShape::square_block
                   ? s.length * s.width
                   : std::numbers::pi * s.disc_radius * s.disc_radius;
    for (const auto& f : s.features) {
        switch (f.kind) {
            case FeatureKind::hole: a -= std::numbers::pi * f.radius * f.radius; break;
            case FeatureKind::pocket: a -= 4.0 * f.hx * f.hy; break;
            case FeatureKind::chamfer:
            case FeatureKind::fillet:
                if (f.edge == EdgeId::rim) {
                    const double R = s.disc_radius;
                    a -= 0.5 * (f.t1 - f.t0) * (R * R - (R - f.size) * (R - f.size));
                } else {
                    a -= (f.t1 - f.t0) * f.size;
                }
                break;
        }
    }
    return a;
}

inline double bottom_face_area(const WorkpieceSpec& s) {
    double a = s.base_shape == BaseShape::square_block
                   ? s.length * s.width
                   : std::numbers::pi * s.disc_radius * s.disc_radius;
    for (const auto& f : s.features)
        if (f.kind == FeatureKind::hole) a -= std::numbers::pi * f.radius * f.radius;
    return a;
}

inline double wall_cut_area(const WorkpieceSpec& s, EdgeId e) {
    double a = 0.0;
    for (const auto& f : s.features)
        if (is_edge_feature(f) && f.edge == e) a += (f.t1 - f.t0) * f.size;
    return a;
}

inline std::vector<Surface> build_surfaces(const WorkpieceSpec& s, const Cutouts& cut) {
    std::vector<Surface> out;
    const double H = s.height;
    const bool square = s.base_shape == BaseShape::square_block;
    const double R = s.disc_radius;

    auto sample_base_xy = [square, R, &s](Rng& rng, double& x, double& y) {
        if (square) {
            x = rng.uniform(0.0, s.length);
            y = rng.uniform(0.0, s.width);
        } else {
            const double rho = R * std::sqrt(rng.uniform01());
            const double th = rng.uniform(0.0, 2.0 * std::numbers::pi);
            x = rho * std::cos(th);
            y = rho * std::sin(th);
        }
    };

    out.push_back({geom::kPlane, top_face_area(s), [&s, &cut, sample_base_xy, H](Rng& rng, Point& p) {
                       double x, y;
                       sample_base_xy(rng, x, y);
                       if (!cut.on_top_face(x, y)) return false;
                       p = {{x, y, H}, {0, 0, 1}};
                       return true;
                   }});
    out.push_back({geom::kPlane, bottom_face_area(s), [&cut, sample_base_xy](Rng& rng, Point& p) {
                       double x, y;
                       sample_base_xy(rng, x, y);
                       if (!cut.on_bottom_face(x, y)) return false;
                       p = {{x, y, 0}, {0, 0, -1}};
                       return true;
                   }});

    if (square) {
        struct Wall {
            EdgeId e;
            double len;
            Vec3 normal;
        };
        const Wall walls[] = {{EdgeId::xmin, s.width, {-1, 0, 0}},
                              {EdgeId::xmax, s.width, {1, 0, 0}},
                              {EdgeId::ymin, s.length, {0, -1, 0}},
                              {EdgeId::ymax, s.length, {0, 1, 0}}};
        for (const Wall& w : walls) {
            const double area = w.len * H - wall_cut_area(s, w.e);
            out.push_back({geom::kPlane, area, [&s, &cut, w, H](Rng& rng, Point& p) {
                               const double t = rng.uniform(0.0, w.len);
                               const double z = rng.uniform(0.0, H);
                               if (!cut.on_wall(w.e, t, z)) return false;
                               Vec3 pos;
                               switch (w.e) {
                                   case EdgeId::xmin: pos = {0, t, z}; break;
                                   case EdgeId::xmax: pos = {s.length, t, z}; break;
                                   case EdgeId::ymin: pos = {t, 0, z}; break;
                                   default: pos = {t, s.width, z}; break;
                               }
                               p = {pos, w.normal};
                               return true;
                           }});
        }
    } else {
        const double area = 2.0 * std::numbers::pi * R * H - wall_cut_area(s, EdgeId::rim);
        out.push_back({geom::kPlane, area, [&cut, R, H](Rng& rng, Point& p) {
                           const double th = rng.uniform(0.0, 2.0 * std::numbers::pi);
                           const double z = rng.uniform(0.0, H);
                           if (!cut.on_wall(EdgeId::rim, th, z)) return false;
                           const double c = std::cos(th), sn = std::sin(th);
                           p = {{R * c, R * sn, z}, {c, sn, 0}};
                           return true;
                       }});
    }

    for (const auto& f : s.features) {
        switch (f.kind) {
            case FeatureKind::hole: {
                out.push_back({geom::kHole, 2.0 * std::numbers::pi * f.radius * H,
                               [f, H](Rng& rng, Point& p) {
                                   const double th = rng.uniform(0.0, 2.0 * std::numbers::pi);
                                   const double z = rng.uniform(0.0, H);
                                   const double c = std::cos(th), sn = std::sin(th);
                                   p = {{f.cx + f.radius * c, f.cy + f.radius * sn, z},
                                        {-c, -sn, 0}};
                                   return true;
                               }});
                break;
            }
            case FeatureKind::pocket: {
                const double zf = H - f.depth;
                out.push_back({geom::kPocket, 4.0 * f.hx * f.hy, [f, zf](Rng& rng, Point& p) {
                                   const double x = rng.uniform(f.cx - f.hx, f.cx + f.hx);
                                   const double y = rng.uniform(f.cy - f.hy, f.cy + f.hy);
                                   p = {{x, y, zf}, {0, 0, 1}};
                                   return true;
                               }});
                struct PWall {
                    Vec3 a, dir, normal;  // origin, span direction (unit * len), outward normal
                    double len;
                };
                const PWall pw[] = {
                    {{f.cx - f.hx, f.cy - f.hy, 0}, {0, 1, 0}, {1, 0, 0}, 2.0 * f.hy},
                    {{f.cx + f.hx, f.cy - f.hy, 0}, {0, 1, 0}, {-1, 0, 0}, 2.0 * f.hy},
                    {{f.cx - f.hx, f.cy - f.hy, 0}, {1, 0, 0}, {0, 1, 0}, 2.0 * f.hx},
                    {{f.cx - f.hx, f.cy + f.hy, 0}, {1, 0, 0}, {0, -1, 0}, 2.0 * f.hx}};
                for (const PWall& w : pw) {
                    out.push_back({geom::kPocket, w.len * f.depth, [w, f, H, zf](Rng& rng, Point& p) {
                                       const double t = rng.uniform(0.0, w.len);
                                       const double z = rng.uniform(zf, H);
                                       p = {{w.a.x + w.dir.x * t, w.a.y + w.dir.y * t, z}, w.normal};
                                       return true;
                                   }});
                }
                break;
            }
            case FeatureKind::chamfer: {
                if (f.edge == EdgeId::rim) {
                    // 45-degree cone band on the disc rim; density along the
                    // slant is proportional to the local radius.
                    const double area =
                        (f.t1 - f.t0) * std::numbers::sqrt2 * f.size * (R - 0.5 * f.size);
                    out.push_back({geom::kChamfer, area, [f, R, H](Rng& rng, Point& p) {
                                       const double r0 = R - f.size;
                                       const double rho =
                                           std::sqrt(r0 * r0 + rng.uniform01() * (R * R - r0 * r0));
                                       const double th = rng.uniform(f.t0, f.t1);
                                       const double z = H - (rho - r0);
                                       const double c = std::cos(th), sn = std::sin(th);
                                       const double inv = 1.0 / std::numbers::sqrt2;
                                       p = {{rho * c, rho * sn, z}, {c * inv, sn * inv, inv}};
                                       return true;
                                   }});
                } else {
                    const double area = (f.t1 - f.t0) * f.size * std::numbers::sqrt2;
                    out.push_back({geom::kChamfer, area, [f, &s, H](Rng& rng, Point& p) {
                                       const double t = rng.uniform(f.t0, f.t1);
                                       const double u = rng.uniform(0.0, f.size);
                                       const double z = H - u;
                                       const double inv = 1.0 / std::numbers::sqrt2;
                                       switch (f.edge) {
                                           case EdgeId::xmin:
                                               p = {{f.size - u, t, z}, {-inv, 0, inv}};
                                               break;
                                           case EdgeId::xmax:
                                               p = {{s.length - f.size + u, t, z}, {inv, 0, inv}};
                                               break;
                                           case EdgeId::ymin:
                                               p = {{t, f.size - u, z}, {0, -inv, inv}};
                                               break;
                                           default:
                                               p = {{t, s.width - f.size + u, z}, {0, inv, inv}};
                                               break;
                                       }
                                       return true;
                                   }});
                }
                break;
            }
            case FeatureKind::fillet: {
                if (f.edge == EdgeId::rim) {
                    // Quarter torus: area element r dphi * rho(phi) dtheta.
                    const double r = f.size;
                    const double area = (f.t1 - f.t0) * r *
                                        ((R - r) * std::numbers::pi / 2.0 + r);
                    out.push_back({geom::kFillet, area, [f, R, H, r](Rng& rng, Point& p) {
                                       double phi;
                                       // Rejection against rho(phi)/R keeps the draw area-uniform.
                                       do {
                                           phi = rng.uniform(0.0, std::numbers::pi / 2.0);
                                       } while (rng.uniform01() * R > (R - r) + r * std::sin(phi));
                                       const double rho = (R - r) + r * std::sin(phi);
                                       const double z = (H - r) + r * std::cos(phi);
                                       const double th = rng.uniform(f.t0, f.t1);
                                       const double c = std::cos(th), sn = std::sin(th);
                                       p = {{rho * c, rho * sn, z},
                                            {std::sin(phi) * c, std::sin(phi) * sn, std::cos(phi)}};
                                       return true;
                                   }});
                } else {
                    const double r = f.size;
                    const double area = (f.t1 - f.t0) * r * std::numbers::pi / 2.0;
                    out.push_back({geom::kFillet, area, [f, &s, H, r](Rng& rng, Point& p) {
                                       const double t = rng.uniform(f.t0, f.t1);
                                       const double phi = rng.uniform(0.0, std::numbers::pi / 2.0);
                                       const double d = r - r * std::sin(phi);  // depth into face
                                       const double z = (H - r) + r * std::cos(phi);
                                       const double nd = std::sin(phi), nz = std::cos(phi);
                                       switch (f.edge) {
                                           case EdgeId::xmin:
                                               p = {{d, t, z}, {-nd, 0, nz}};
                                               break;
                                           case EdgeId::xmax:
                                               p = {{s.length - d, t, z}, {nd, 0, nz}};
                                               break;
                                           case EdgeId::ymin:
                                               p = {{t, d, z}, {0, -nd, nz}};
                                               break;
                                           default:
                                               p = {{t, s.width - d, z}, {0, nd, nz}};
                                               break;
                                       }
                                       return true;
                                   }});
                }
                break;
            }
        }
    }
    return out;
}

}  // namespace detail

inline void validate_spec(const WorkpieceSpec& spec) { detail::validate_spec(spec); }

inline LabeledPointCloud generate_workpiece(const WorkpieceSpec& spec, std::uint64_t rng_seed) {
    detail::validate_spec(spec);
    detail::Cutouts cut{&spec};
    const auto surfaces = detail::build_surfaces(spec, cut);

    std::vector<double> cum;
    cum.reserve(surfaces.size());
    double total = 0.0;
    for (const auto& s : surfaces) {
        total += s.area;
        cum.push_back(total);
    }
    if (total <= 0.0) throw SpecError("workpiece has no surface area");

    Rng rng(rng_seed);
    LabeledPointCloud out;
    out.cloud.points.reserve(static_cast<std::size_t>(spec.points_per_cloud));
    out.labels.reserve(static_cast<std::size_t>(spec.points_per_cloud));
    for (int i = 0; i < spec.points_per_cloud; ++i) {
        const double u = rng.uniform01() * total;
        const std::size_t si = static_cast<std::size_t>(
            std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
        const auto& surf = surfaces[std::min(si, surfaces.size() - 1)];
        Point p;
        while (!surf.sample(rng, p)) {
        }
        out.cloud.points.push_back(p);
        out.labels.push_back(surf.label);
    }
    if (spec.noise_sigma > 0.0) {
        for (auto& p : out.cloud.points) {
            p.pos.x += spec.noise_sigma * rng.normal();
            p.pos.y += spec.noise_sigma * rng.normal();
            p.pos.z += spec.noise_sigma * rng.normal();
        }
    }
    return out;
}

}  // namespace pseg::synth
