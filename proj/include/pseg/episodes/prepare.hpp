#pragma once

#include <cstdint>
#include <vector>

#include "pseg/geom/cloud_ops.hpp"
#include "pseg/geom/point_cloud.hpp"
#include "pseg/rng.hpp"

namespace pseg::episodes {

/// Subsamples each cloud to a fixed point count and normalizes it to zero
/// centroid and unit radius. The subsample seed depends only on the corpus
/// seed and the cloud's index, so every episode that touches a cloud sees
/// the same processed points.
inline std::vector<geom::LabeledPointCloud> prepare_corpus(
    const std::vector<geom::LabeledPointCloud>& raw, std::size_t target_points,
    std::uint64_t seed) {
    std::vector<geom::LabeledPointCloud> out;
    out.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        geom::LabeledPointCloud c =
            geom::random_subsample(raw[i], target_points, sub_seed(seed, "subsample", i));
        c.cloud = geom::normalize_cloud(c.cloud);
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace pseg::episodes
