#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "pseg/geom/point_cloud.hpp"
#include "pseg/rng.hpp"
#include "pseg/tensor.hpp"

namespace pseg::geom {

/// Translate to zero centroid and scale so the farthest point sits on the
/// unit sphere. Scale is a no-op when all points coincide. Normals pass
/// through unchanged.
inline PointCloud normalize_cloud(const PointCloud& cloud) {
    if (cloud.empty()) throw ParameterError("normalize_cloud: empty cloud");
    Vec3 centroid{0.0, 0.0, 0.0};
    for (const Point& p : cloud.points) centroid = centroid + p.pos;
    const double inv_n = 1.0 / static_cast<double>(cloud.size());
    centroid = centroid * inv_n;

    double max_r2 = 0.0;
    for (const Point& p : cloud.points) max_r2 = std::max(max_r2, (p.pos - centroid).norm2());
    const double scale = max_r2 > 0.0 ? 1.0 / std::sqrt(max_r2) : 1.0;

    PointCloud out;
    out.points.reserve(cloud.size());
    for (const Point& p : cloud.points)
        out.points.push_back(Point{(p.pos - centroid) * scale, p.normal});
    return out;
}

/// Uniform subsample without replacement down to target_n; pads with
/// replacement when the cloud is smaller than the target. Labels travel with
/// their points. Deterministic per seed.
inline LabeledPointCloud random_subsample(const LabeledPointCloud& in, std::size_t target_n,
                                          std::uint64_t rng_seed) {
    if (target_n < 1) throw ParameterError("random_subsample: target must be positive");
    const std::size_t n = in.size();
    Rng rng(rng_seed);

    std::vector<std::size_t> picks;
    if (n >= target_n) {
        picks = rng.sample_without_replacement(n, target_n);
    } else {
        picks.reserve(target_n);
        for (std::size_t i = 0; i < n; ++i) picks.push_back(i);
        for (std::size_t i = n; i < target_n; ++i)
            picks.push_back(static_cast<std::size_t>(rng.below(n)));
    }

    LabeledPointCloud out;
    out.cloud.points.reserve(target_n);
    out.labels.reserve(target_n);
    for (std::size_t idx : picks) {
        out.cloud.points.push_back(in.cloud.points[idx]);
        out.labels.push_back(in.labels[idx]);
    }
    return out;
}

/// Row-major n x 6 matrix (x, y, z, nx, ny, nz) view of a cloud.
inline Tensor cloud_features(const PointCloud& cloud) {
    Tensor t({static_cast<Index>(cloud.size()), 6});
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Point& p = cloud.points[i];
        double* row = t.v.data() + 6 * i;
        row[0] = p.pos.x;
        row[1] = p.pos.y;
        row[2] = p.pos.z;
        row[3] = p.normal.x;
        row[4] = p.normal.y;
        row[5] = p.normal.z;
    }
    return t;
}

/// n x 3 coordinate matrix.
inline Tensor cloud_coords(const PointCloud& cloud) {
    Tensor t({static_cast<Index>(cloud.size()), 3});
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Point& p = cloud.points[i];
        double* row = t.v.data() + 3 * i;
        row[0] = p.pos.x;
        row[1] = p.pos.y;
        row[2] = p.pos.z;
    }
    return t;
}

/// n x 3 normal matrix.
inline Tensor cloud_normals(const PointCloud& cloud) {
    Tensor t({static_cast<Index>(cloud.size()), 3});
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Point& p = cloud.points[i];
        double* row = t.v.data() + 3 * i;
        row[0] = p.normal.x;
        row[1] = p.normal.y;
        row[2] = p.normal.z;
    }
    return t;
}

}  // namespace pseg::geom
