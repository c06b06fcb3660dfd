#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pseg/common.hpp"

namespace pseg::geom {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm2() const { return dot(*this); }
    double norm() const { return std::sqrt(norm2()); }

    Vec3 normalized() const {
        const double n = norm();
        if (n == 0.0) return {0.0, 0.0, 0.0};
        return {x / n, y / n, z / n};
    }
};

/// A point sample: position plus unit surface normal. A zero normal marks
/// "missing normal" and is allowed.
struct Point {
    Vec3 pos;
    Vec3 normal;
};

struct PointCloud {
    std::vector<Point> points;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }

    /// n >= 1, finite components, normals unit-length or zero.
    void validate() const {
        if (points.empty()) throw ParameterError("point cloud must contain at least one point");
        for (const Point& p : points) {
            for (double c : {p.pos.x, p.pos.y, p.pos.z, p.normal.x, p.normal.y, p.normal.z})
                if (!std::isfinite(c)) throw ParameterError("non-finite point component");
            const double n = p.normal.norm();
            if (n != 0.0 && std::abs(n - 1.0) > 1e-6)
                throw ParameterError("normal is neither unit-length nor zero");
        }
    }
};

using Label = std::uint32_t;

struct LabeledPointCloud {
    PointCloud cloud;
    std::vector<Label> labels;

    std::size_t size() const { return cloud.size(); }

    void validate(std::size_t num_classes) const {
        cloud.validate();
        if (labels.size() != cloud.size())
            throw ParameterError("label count does not match point count");
        for (Label l : labels)
            if (l >= num_classes) throw ParameterError("label outside the class alphabet");
    }
};

/// Ordered class names plus which one is the background.
struct ClassAlphabet {
    std::vector<std::string> names;
    std::size_t background_index = 0;

    std::size_t size() const { return names.size(); }

    void validate() const {
        if (background_index >= names.size()) throw ParameterError("invalid background index");
        for (std::size_t i = 0; i < names.size(); ++i)
            for (std::size_t j = i + 1; j < names.size(); ++j)
                if (names[i] == names[j]) throw ParameterError("duplicate class name");
    }

    std::vector<std::size_t> foreground_ids() const {
        std::vector<std::size_t> ids;
        for (std::size_t i = 0; i < names.size(); ++i)
            if (i != background_index) ids.push_back(i);
        return ids;
    }
};

/// The corpus alphabet: Plane is the background, the four machining
/// features are foreground.
inline ClassAlphabet default_alphabet() {
    return ClassAlphabet{{"Plane", "Hole", "Pocket", "Chamfer", "Fillet"}, 0};
}

inline constexpr std::size_t kNumClasses = 5;
inline constexpr Label kPlane = 0;
inline constexpr Label kHole = 1;
inline constexpr Label kPocket = 2;
inline constexpr Label kChamfer = 3;
inline constexpr Label kFillet = 4;

}  // namespace pseg::geom
