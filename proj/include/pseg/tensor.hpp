#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "pseg/common.hpp"

namespace pseg {

using Index = std::int64_t;
using Shape = std::vector<Index>;

using EigenRowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatView = Eigen::Map<EigenRowMat>;
using ConstMatView = Eigen::Map<const EigenRowMat>;

/// Dense row-major tensor of 64-bit floats. Rank 0 (scalar), 1, or 2.
struct Tensor {
    Shape shape;
    std::vector<double> v;

    Tensor() = default;

    explicit Tensor(Shape s) : shape(std::move(s)), v(count(shape), 0.0) {}

    Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), v(std::move(values)) {
        if (static_cast<Index>(v.size()) != count(shape))
            throw ShapeError("tensor data length does not match shape");
    }

    static Index count(const Shape& s) {
        Index n = 1;
        for (Index d : s) {
            if (d < 0) throw ShapeError("negative dimension");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

    static Tensor full(Shape s, double value) {
        Tensor t(std::move(s));
        std::fill(t.v.begin(), t.v.end(), value);
        return t;
    }

    static Tensor scalar(double value) {
        Tensor t;
        t.shape = {};
        t.v = {value};
        return t;
    }

    static Tensor row(std::initializer_list<double> values) {
        Tensor t;
        t.shape = {1, static_cast<Index>(values.size())};
        t.v.assign(values);
        return t;
    }

    static Tensor matrix(Index r, Index c, std::initializer_list<double> values) {
        Tensor t({r, c});
        if (static_cast<Index>(values.size()) != r * c) throw ShapeError("matrix literal size");
        std::copy(values.begin(), values.end(), t.v.begin());
        return t;
    }

    static Tensor identity(Index n) {
        Tensor t({n, n});
        for (Index i = 0; i < n; ++i) t.v[static_cast<std::size_t>(i * n + i)] = 1.0;
        return t;
    }

    Index numel() const { return static_cast<Index>(v.size()); }
    Index rank() const { return static_cast<Index>(shape.size()); }
    bool is_scalar() const { return numel() == 1; }

    /// Row/column counts with rank-1 tensors treated as column vectors.
    Index rows() const {
        if (shape.empty()) return 1;
        return shape[0];
    }
    Index cols() const {
        if (shape.size() < 2) return shape.empty() ? 1 : 1;
        return shape[1];
    }

    double& at(Index i, Index j) { return v[static_cast<std::size_t>(i * cols() + j)]; }
    double at(Index i, Index j) const { return v[static_cast<std::size_t>(i * cols() + j)]; }

    double& operator[](Index i) { return v[static_cast<std::size_t>(i)]; }
    double operator[](Index i) const { return v[static_cast<std::size_t>(i)]; }

    double value() const {
        if (!is_scalar()) throw ShapeError("value() on non-scalar tensor");
        return v[0];
    }

    MatView mat() { return MatView(v.data(), rows(), cols()); }
    ConstMatView mat() const { return ConstMatView(v.data(), rows(), cols()); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    static std::string shape_str(const Shape& s) {
        std::string out = "[";
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) out += ",";
            out += std::to_string(s[i]);
        }
        return out + "]";
    }
};

}  // namespace pseg
