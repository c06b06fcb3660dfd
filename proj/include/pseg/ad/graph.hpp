#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "pseg/tensor.hpp"

namespace pseg::ad {

using NodeId = std::int32_t;

enum class Op {
    leaf,
    constant,
    matmul,
    transpose,
    add,
    subtract,
    add_rowvec,
    scale,
    mul_scalar_node,
    reciprocal,
    rsqrt,
    exponential,
    leaky_relu,
    concat_cols,
    concat_rows,
    gather_rows,
    scatter_matrix,
    reduce_max_groups,
    reduce_mean,
    rowwise_sum_sq,
    sum_squares,
    softmax_rows,
    nll_rows,
    reshape,
    solve_lu,
    mul_rows,
    mul_cols,
    normalize_rows,
};

/// Eager tape: every builder computes its value immediately; backward walks
/// the tape in reverse id order (construction order is topological).
class Graph {
  public:
    NodeId leaf(Tensor t) { return push(Op::leaf, {}, std::move(t), true); }

    NodeId constant(Tensor t) { return push(Op::constant, {}, std::move(t), false); }

    NodeId matmul(NodeId a, NodeId b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (ta.cols() != tb.rows())
            throw ShapeError("matmul: " + Tensor::shape_str(ta.shape) + " x " +
                             Tensor::shape_str(tb.shape));
        Tensor out({ta.rows(), tb.cols()});
        out.mat() = ta.mat() * tb.mat();
        return push(Op::matmul, {a, b}, std::move(out));
    }

    NodeId transpose(NodeId a) {
        const Tensor& ta = val(a);
        Tensor out({ta.cols(), ta.rows()});
        out.mat() = ta.mat().transpose();
        return push(Op::transpose, {a}, std::move(out));
    }

    NodeId add(NodeId a, NodeId b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        require_same(ta, tb, "add");
        Tensor out = ta;
        out.mat() += tb.mat();
        return push(Op::add, {a, b}, std::move(out));
    }

    NodeId subtract(NodeId a, NodeId b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        require_same(ta, tb, "subtract");
        Tensor out = ta;
        out.mat() -= tb.mat();
        return push(Op::subtract, {a, b}, std::move(out));
    }

    /// a: n x d, b: 1 x d, broadcast-added to every row.
    NodeId add_rowvec(NodeId a, NodeId b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (tb.rows() != 1 || tb.cols() != ta.cols())
            throw ShapeError("add_rowvec: vector shape " + Tensor::shape_str(tb.shape));
        Tensor out = ta;
        out.mat().rowwise() += tb.mat().row(0);
        return push(Op::add_rowvec, {a, b}, std::move(out));
    }

    NodeId scale(NodeId a, double c) {
        Tensor out = val(a);
        out.mat() *= c;
        NodeId id = push(Op::scale, {a}, std::move(out));
        nodes_[static_cast<std::size_t>(id)].scalar = c;
        return id;
    }

    /// Multiplies every element of a by the 1x1 node s.
    NodeId mul_scalar_node(NodeId a, NodeId s) {
        const Tensor& ts = val(s);
        if (ts.numel() != 1) throw ShapeError("mul_scalar_node: s must be 1x1");
        Tensor out = val(a);
        out.mat() *= ts.v[0];
        return push(Op::mul_scalar_node, {a, s}, std::move(out));
    }

    NodeId reciprocal(NodeId a) {
        Tensor out = val(a);
        for (double& x : out.v) x = 1.0 / x;
        return push(Op::reciprocal, {a}, std::move(out));
    }

    NodeId rsqrt(NodeId a) {
        Tensor out = val(a);
        for (double& x : out.v) x = 1.0 / std::sqrt(x);
        return push(Op::rsqrt, {a}, std::move(out));
    }

    NodeId exp(NodeId a) {
        Tensor out = val(a);
        for (double& x : out.v) x = std::exp(x);
        return push(Op::exponential, {a}, std::move(out));
    }

    NodeId leaky_relu(NodeId a, double negative_slope = 0.2) {
        Tensor out = val(a);
        for (double& x : out.v)
            if (x < 0.0) x *= negative_slope;
        NodeId id = push(Op::leaky_relu, {a}, std::move(out));
        nodes_[static_cast<std::size_t>(id)].scalar = negative_slope;
        return id;
    }

    NodeId concat_cols(NodeId a, NodeId b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (ta.rows() != tb.rows()) throw ShapeError("concat_cols: row mismatch");
        Tensor out({ta.rows(), ta.cols() + tb.cols()});
        out.mat().leftCols(ta.cols()) = ta.mat();
        out.mat().rightCols(tb.cols()) = tb.mat();
        return push(Op::concat_cols, {a, b}, std::move(out));
    }

    NodeId concat_rows(const std::vector<NodeId>& parts) {
        if (parts.empty()) throw ParameterError("concat_rows: empty list");
        const Index c = val(parts[0]).cols();
        Index r = 0;
        for (NodeId p : parts) {
            if (val(p).cols() != c) throw ShapeError("concat_rows: column mismatch");
            r += val(p).rows();
        }
        Tensor out({r, c});
        Index at = 0;
        for (NodeId p : parts) {
            out.mat().middleRows(at, val(p).rows()) = val(p).mat();
            at += val(p).rows();
        }
        return push(Op::concat_rows, parts, std::move(out));
    }

    NodeId gather_rows(NodeId a, std::vector<Index> rows) {
        const Tensor& ta = val(a);
        Tensor out({static_cast<Index>(rows.size()), ta.cols()});
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i] < 0 || rows[i] >= ta.rows()) throw ParameterError("gather_rows: index");
            out.mat().row(static_cast<Index>(i)) = ta.mat().row(rows[i]);
        }
        NodeId id = push(Op::gather_rows, {a}, std::move(out));
        nodes_[static_cast<std::size_t>(id)].indices = std::move(rows);
        return id;
    }

    /// Builds an r x c matrix with values[e] added at (rows[e], cols[e]).
    NodeId scatter_matrix(NodeId values, std::vector<Index> rows, std::vector<Index> cols, Index r,
                          Index c) {
        const Tensor& tv = val(values);
        if (tv.cols() != 1 || tv.rows() != static_cast<Index>(rows.size()) ||
            rows.size() != cols.size())
            throw ShapeError("scatter_matrix: values must be Ex1 matching index lists");
        Tensor out({r, c});
        for (std::size_t e = 0; e < rows.size(); ++e) {
            if (rows[e] < 0 || rows[e] >= r || cols[e] < 0 || cols[e] >= c)
                throw ParameterError("scatter_matrix: index out of range");
            out.at(rows[e], cols[e]) += tv.v[e];
        }
        NodeId id = push(Op::scatter_matrix, {values}, std::move(out));
        nodes_[static_cast<std::size_t>(id)].indices = std::move(rows);
        nodes_[static_cast<std::size_t>(id)].indices2 = std::move(cols);
        return id;
    }

    /// Column-wise max over each group of rows; ties go to the lowest index.
    NodeId reduce_max_groups(NodeId a, std::vector<std::vector<Index>> groups) {
        const Tensor& ta = val(a);
        const Index d = ta.cols();
        Tensor out({static_cast<Index>(groups.size()), d});
        std::vector<Index> argmax(static_cast<std::size_t>(out.rows() * d));
        for (std::size_t g = 0; g < groups.size(); ++g) {
            if (groups[g].empty()) throw ParameterError("reduce_max_groups: empty group");
            for (Index j = 0; j < d; ++j) {
                Index best = -1;
                double bv = 0.0;
                for (Index r : groups[g]) {
                    if (r < 0 || r >= ta.rows())
                        throw ParameterError("reduce_max_groups: row index");
                    const double x = ta.at(r, j);
                    if (best < 0 || x > bv) {
                        best = r;
                        bv = x;
                    }
                }
                out.at(static_cast<Index>(g), j) = bv;
                argmax[g * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)] = best;
            }
        }
        NodeId id = push(Op::reduce_max_groups, {a}, std::move(out));
        nodes_[static_cast<std::size_t>(id)].groups = std::move(groups);
        nodes_[static_cast<std::size_t>(id)].indices = std::move(argmax);
        return id;
    }

    NodeId reduce_mean(NodeId a) {
        const Tensor& ta = val(a);
        if (ta.numel() == 0) throw ParameterError("reduce_mean: empty tensor");
        Tensor out({1, 1});
        out.v[0] = ta.mat().mean();
        return push(Op::reduce_mean, {a}, std::move(out));
    }

    NodeId rowwise_sum_sq(NodeId a) {
        const Tensor& ta = val(a);
        Tensor out({ta.rows(), 1});
        out.mat().col(0) = ta.mat().rowwise().squaredNorm();
        return push(Op::rowwise_sum_sq, {a}, std::move(out));
    }

    NodeId sum_squares(NodeId a) {
        Tensor out({1, 1});
        out.v[0] = val(a).mat().squaredNorm();
        return push(Op::sum_squares, {a}, std::move(out));
    }

    NodeId softmax_rows(NodeId a) {
        Tensor out = val(a);
        auto m = out.mat();
        for (Index i = 0; i < m.rows(); ++i) {
            const double mx = m.row(i).maxCoeff();
            m.row(i) = (m.row(i).array() - mx).exp();
            m.row(i) /= m.row(i).sum();
        }
        return push(Op::softmax_rows, {a}, std::move(out));
    }

    /// Mean negative log of probs[i, labels[i]], clamped below at 1e-12.
    NodeId nll_rows(NodeId probs, std::vector<Index> labels) {
        const Tensor& tp = val(probs);
        if (static_cast<Index>(labels.size()) != tp.rows())
            throw ShapeError("nll_rows: labels length");
        double acc = 0.0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] < 0 || labels[i] >= tp.cols()) throw ParameterError("nll_rows: label");
            acc -= std::log(std::max(tp.at(static_cast<Index>(i), labels[i]), kProbClamp));
        }
        Tensor out({1, 1});
        out.v[0] = acc / static_cast<double>(labels.size());
        NodeId id = push(Op::nll_rows, {probs}, std::move(out));
        nodes_[static_cast<std::size_t>(id)].indices = std::move(labels);
        return id;
    }

    NodeId reshape(NodeId a, Shape target) {
        const Tensor& ta = val(a);
        Tensor out(target);
        if (out.numel() != ta.numel()) throw ShapeError("reshape: element count");
        out.v = ta.v;
        return push(Op::reshape, {a}, std::move(out));
    }

    /// Z = K^-1 Y by partial-pivot LU. K must be square and nonsingular.
    NodeId solve_lu(NodeId k, NodeId y) {
        const Tensor& tk = val(k);
        const Tensor& ty = val(y);
        if (tk.rows() != tk.cols() || tk.rows() != ty.rows())
            throw ShapeError("solve_lu: K must be square and match Y rows");
        Tensor out({ty.rows(), ty.cols()});
        Eigen::PartialPivLU<EigenRowMat> lu(tk.mat());
        out.mat() = lu.solve(ty.mat());
        if (!out.all_finite()) throw NumericError("solve_lu: singular system");
        return push(Op::solve_lu, {k, y}, std::move(out));
    }

    /// Scales row i of a by s[i]; s is n x 1.
    NodeId mul_rows(NodeId a, NodeId s) {
        const Tensor& ta = val(a);
        const Tensor& ts = val(s);
        if (ts.cols() != 1 || ts.rows() != ta.rows()) throw ShapeError("mul_rows: scale shape");
        Tensor out = ta;
        out.mat().array().colwise() *= ts.mat().col(0).array();
        return push(Op::mul_rows, {a, s}, std::move(out));
    }

    /// Scales column j of a by s[j]; s is m x 1 for a: n x m.
    NodeId mul_cols(NodeId a, NodeId s) {
        const Tensor& ta = val(a);
        const Tensor& ts = val(s);
        if (ts.cols() != 1 || ts.rows() != ta.cols()) throw ShapeError("mul_cols: scale shape");
        Tensor out = ta;
        out.mat().array().rowwise() *= ts.mat().col(0).transpose().array();
        return push(Op::mul_cols, {a, s}, std::move(out));
    }

    /// Rescales each row to unit length; all-zero rows stay zero.
    NodeId normalize_rows(NodeId a) {
        Tensor out = val(a);
        auto m = out.mat();
        for (Index i = 0; i < m.rows(); ++i) {
            const double n = m.row(i).norm();
            if (n > 0.0) m.row(i) /= n;
        }
        return push(Op::normalize_rows, {a}, std::move(out));
    }

    const Tensor& value(NodeId id) const { return val(id); }

    std::size_t size() const { return nodes_.size(); }

    /// Accumulates gradients of `root` (scalar) into every reachable leaf.
    void backward(NodeId root) {
        const Tensor& rv = val(root);
        if (rv.numel() != 1) throw ParameterError("backward: root must be scalar");
        grads_.assign(nodes_.size(), Tensor{});
        for (std::size_t i = 0; i < nodes_.size(); ++i) grads_[i] = Tensor(nodes_[i].value.shape);
        grads_[static_cast<std::size_t>(root)].v[0] = 1.0;

        for (NodeId id = root; id >= 0; --id) {
            const Node& n = nodes_[static_cast<std::size_t>(id)];
            if (!n.needs_grad || n.op == Op::leaf || n.op == Op::constant) continue;
            accumulate(n, grads_[static_cast<std::size_t>(id)]);
        }
    }

    /// Gradient of the last backward() w.r.t. node id (zeros if unreached).
    const Tensor& grad(NodeId id) const {
        if (grads_.size() != nodes_.size()) throw ParameterError("grad: run backward first");
        return grads_[static_cast<std::size_t>(id)];
    }

    static constexpr double kProbClamp = 1e-12;

  private:
    struct Node {
        Op op;
        std::vector<NodeId> inputs;
        Tensor value;
        bool needs_grad = false;
        double scalar = 0.0;
        std::vector<Index> indices;
        std::vector<Index> indices2;
        std::vector<std::vector<Index>> groups;
    };

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;

    const Tensor& val(NodeId id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
            throw ParameterError("bad node id");
        return nodes_[static_cast<std::size_t>(id)].value;
    }

    static void require_same(const Tensor& a, const Tensor& b, const char* op) {
        if (a.rows() != b.rows() || a.cols() != b.cols())
            throw ShapeError(std::string(op) + ": shape mismatch " + Tensor::shape_str(a.shape) +
                             " vs " + Tensor::shape_str(b.shape));
    }

    NodeId push(Op op, std::vector<NodeId> inputs, Tensor value, bool needs_grad = false) {
        Node n;
        n.op = op;
        n.inputs = std::move(inputs);
        n.value = std::move(value);
        n.needs_grad = needs_grad;
        for (NodeId in : n.inputs)
            if (nodes_[static_cast<std::size_t>(in)].needs_grad) n.needs_grad = true;
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    Tensor& g(NodeId id) { return grads_[static_cast<std::size_t>(id)]; }

    bool wants(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

    void accumulate(const Node& n, const Tensor& go) {
        switch (n.op) {
            case Op::matmul: {
                const Tensor& a = val(n.inputs[0]);
                const Tensor& b = val(n.inputs[1]);
                if (wants(n.inputs[0])) g(n.inputs[0]).mat() += go.mat() * b.mat().transpose();
                if (wants(n.inputs[1])) g(n.inputs[1]).mat() += a.mat().transpose() * go.mat();
                break;
            }
            case Op::transpose:
                if (wants(n.inputs[0])) g(n.inputs[0]).mat() += go.mat().transpose();
                break;
            case Op::add:
                if (wants(n.inputs[0])) g(n.inputs[0]).mat() += go.mat();
                if (wants(n.inputs[1])) g(n.inputs[1]).mat() += go.mat();
                break;
            case Op::subtract:
                if (wants(n.inputs[0])) g(n.inputs[0]).mat() += go.mat();
                if (wants(n.inputs[1])) g(n.inputs[1]).mat() -= go.mat();
                break;
            case Op::add_rowvec:
                if (wants(n.inputs[0])) g(n.inputs[0]).mat() += go.mat();
                if (wants(n.inputs[1])) g(n.inputs[1]).mat().row(0) += go.mat().colwise().sum();
                break;
            case Op::scale:
                if (wants(n.inputs[0])) g(n.inputs[0]).mat() += n.scalar * go.mat();
                break;
            case Op::mul_scalar_node: {
                const Tensor& a = val(n.inputs[0]);
                const double s = val(n.inputs[1]).v[0];
                if (wants(n.inputs[0])) g(n.inputs[0]).mat() += s * go.mat();
                if (wants(n.inputs[1]))
                    g(n.inputs[1]).v[0] += (go.mat().array() * a.mat().array()).sum();
                break;
            }
            case Op::reciprocal:
                if (wants(n.inputs[0]))
                    g(n.inputs[0]).mat().array() -=
                        go.mat().array() * n.value.mat().array().square();
                break;
            case Op::rsqrt:
                if (wants(n.inputs[0]))
                    g(n.inputs[0]).mat().array() -=
                        0.5 * go.mat().array() * n.value.mat().array().cube();
                break;
            case Op::exponential:
                if (wants(n.inputs[0]))
                    g(n.inputs[0]).mat().array() += go.mat().array() * n.value.mat().array();
                break;
            case Op::leaky_relu: {
                if (!wants(n.inputs[0])) break;
                const Tensor& a = val(n.inputs[0]);
                auto gm = g(n.inputs[0]).mat();
                for (Index i = 0; i < a.numel(); ++i)
                    gm.data()[i] += go.v[static_cast<std::size_t>(i)] *
                                    (a.v[static_cast<std::size_t>(i)] >= 0.0 ? 1.0 : n.scalar);
                break;
            }
            case Op::concat_cols: {
                const Index c0 = val(n.inputs[0]).cols();
                const Index c1 = val(n.inputs[1]).cols();
                if (wants(n.inputs[0])) g(n.inputs[0]).mat() += go.mat().leftCols(c0);
                if (wants(n.inputs[1])) g(n.inputs[1]).mat() += go.mat().rightCols(c1);
                break;
            }
            case Op::concat_rows: {
                Index at = 0;
                for (NodeId in : n.inputs) {
                    const Index r = val(in).rows();
                    if (wants(in)) g(in).mat() += go.mat().middleRows(at, r);
                    at += r;
                }
                break;
            }
            case Op::gather_rows: {
                if (!wants(n.inputs[0])) break;
                auto gm = g(n.inputs[0]).mat();
                for (std::size_t i = 0; i < n.indices.size(); ++i)
                    gm.row(n.indices[i]) += go.mat().row(static_cast<Index>(i));
                break;
            }
            case Op::scatter_matrix: {
                if (!wants(n.inputs[0])) break;
                Tensor& gv = g(n.inputs[0]);
                for (std::size_t e = 0; e < n.indices.size(); ++e)
                    gv.v[e] += go.at(n.indices[e], n.indices2[e]);
                break;
            }
            case Op::reduce_max_groups: {
                if (!wants(n.inputs[0])) break;
                auto gm = g(n.inputs[0]).mat();
                const Index d = n.value.cols();
                for (Index gi = 0; gi < n.value.rows(); ++gi)
                    for (Index j = 0; j < d; ++j)
                        gm(n.indices[static_cast<std::size_t>(gi * d + j)], j) += go.at(gi, j);
                break;
            }
            case Op::reduce_mean:
                if (wants(n.inputs[0])) {
                    const Tensor& a = val(n.inputs[0]);
                    g(n.inputs[0]).mat().array() += go.v[0] / static_cast<double>(a.numel());
                }
                break;
            case Op::rowwise_sum_sq: {
                if (!wants(n.inputs[0])) break;
                const Tensor& a = val(n.inputs[0]);
                g(n.inputs[0]).mat().array() +=
                    2.0 * (a.mat().array().colwise() * go.mat().col(0).array());
                break;
            }
            case Op::sum_squares:
                if (wants(n.inputs[0]))
                    g(n.inputs[0]).mat() += 2.0 * go.v[0] * val(n.inputs[0]).mat();
                break;
            case Op::softmax_rows: {
                if (!wants(n.inputs[0])) break;
                auto y = n.value.mat();
                auto gm = g(n.inputs[0]).mat();
                for (Index i = 0; i < y.rows(); ++i) {
                    const double dot = go.mat().row(i).dot(y.row(i));
                    gm.row(i).array() +=
                        (go.mat().row(i).array() - dot) * y.row(i).array();
                }
                break;
            }
            case Op::nll_rows: {
                if (!wants(n.inputs[0])) break;
                const Tensor& p = val(n.inputs[0]);
                auto gm = g(n.inputs[0]).mat();
                const double inv = go.v[0] / static_cast<double>(n.indices.size());
                for (std::size_t i = 0; i < n.indices.size(); ++i) {
                    const double pi = p.at(static_cast<Index>(i), n.indices[i]);
                    if (pi > kProbClamp) gm(static_cast<Index>(i), n.indices[i]) -= inv / pi;
                }
                break;
            }
            case Op::reshape:
                if (wants(n.inputs[0])) {
                    Tensor& gi = g(n.inputs[0]);
                    for (std::size_t i = 0; i < gi.v.size(); ++i) gi.v[i] += go.v[i];
                }
                break;
            case Op::solve_lu: {
                const Tensor& k = val(n.inputs[0]);
                Eigen::PartialPivLU<EigenRowMat> lu(k.mat().transpose().eval());
                EigenRowMat dy = lu.solve(go.mat());
                if (wants(n.inputs[1])) g(n.inputs[1]).mat() += dy;
                if (wants(n.inputs[0]))
                    g(n.inputs[0]).mat() -= dy * n.value.mat().transpose();
                break;
            }
            case Op::mul_rows: {
                const Tensor& a = val(n.inputs[0]);
                const Tensor& s = val(n.inputs[1]);
                if (wants(n.inputs[0]))
                    g(n.inputs[0]).mat().array() +=
                        go.mat().array().colwise() * s.mat().col(0).array();
                if (wants(n.inputs[1]))
                    g(n.inputs[1]).mat().col(0).array() +=
                        (go.mat().array() * a.mat().array()).rowwise().sum();
                break;
            }
            case Op::mul_cols: {
                const Tensor& a = val(n.inputs[0]);
                const Tensor& s = val(n.inputs[1]);
                if (wants(n.inputs[0]))
                    g(n.inputs[0]).mat().array() +=
                        go.mat().array().rowwise() * s.mat().col(0).transpose().array();
                if (wants(n.inputs[1]))
                    g(n.inputs[1]).mat().col(0).array() +=
                        (go.mat().array() * a.mat().array()).colwise().sum().transpose();
                break;
            }
            case Op::normalize_rows: {
                if (!wants(n.inputs[0])) break;
                const Tensor& a = val(n.inputs[0]);
                auto y = n.value.mat();
                auto gm = g(n.inputs[0]).mat();
                for (Index i = 0; i < a.rows(); ++i) {
                    const double nn = a.mat().row(i).norm();
                    if (nn == 0.0) continue;
                    const double dot = go.mat().row(i).dot(y.row(i));
                    gm.row(i) += (go.mat().row(i) - dot * y.row(i)) / nn;
                }
                break;
            }
            case Op::leaf:
            case Op::constant:
                break;
        }
    }
};

}  // namespace pseg::ad
