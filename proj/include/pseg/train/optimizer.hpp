#pragma once

#include <cmath>
#include <map>
#include <string>

#include "pseg/common.hpp"
#include "pseg/fen/config.hpp"
#include "pseg/tensor.hpp"

namespace pseg::train {

/// Classic SGD with momentum: v <- mu * v + g, p <- p - lr * v.
///
/// Velocity buffers are created lazily per parameter name so the optimizer
/// can be rebuilt from a checkpoint by assigning to velocity(). Parameters
/// that never receive a gradient are never touched, which keeps frozen
/// tensors bitwise intact.
class SgdMomentum {
  public:
    SgdMomentum(double lr, double mu) : lr_(lr), mu_(mu) {
        if (!(lr > 0.0)) throw ParameterError("learning rate must be positive");
        if (mu < 0.0 || mu >= 1.0) throw ParameterError("momentum must be in [0, 1)");
    }

    void step(fen::ParamMap& params, const std::map<std::string, Tensor>& grads) {
        for (const auto& [name, grad] : grads) {
            auto pit = params.find(name);
            if (pit == params.end())
                throw ParameterError("gradient for unknown parameter: " + name);
            Tensor& p = pit->second;
            if (!p.same_shape(grad))
                throw ShapeError("gradient shape mismatch for " + name);
            auto vit = velocity_.find(name);
            if (vit == velocity_.end())
                vit = velocity_.emplace(name, Tensor::zeros(p.shape)).first;
            Tensor& v = vit->second;
            for (Index i = 0; i < p.numel(); ++i) {
                v.v[static_cast<size_t>(i)] =
                    mu_ * v.v[static_cast<size_t>(i)] + grad.v[static_cast<size_t>(i)];
                p.v[static_cast<size_t>(i)] -= lr_ * v.v[static_cast<size_t>(i)];
            }
        }
    }

    const fen::ParamMap& velocity() const { return velocity_; }
    fen::ParamMap& velocity() { return velocity_; }

  private:
    double lr_;
    double mu_;
    fen::ParamMap velocity_;
};

/// Rescales the gradients so their joint Euclidean norm is at most max_norm.
/// The sum over query points in the center loss can make raw gradients grow
/// with cloud size, which destabilizes plain SGD; capping the step length
/// keeps training bounded without touching the loss itself. A max_norm of 0
/// disables the cap. Returns the factor applied (1 when untouched).
inline double clip_gradients(std::map<std::string, Tensor>& grads, double max_norm) {
    if (max_norm < 0.0) throw ParameterError("clip_gradients: max_norm must be >= 0");
    if (max_norm == 0.0) return 1.0;
    double sq = 0.0;
    for (const auto& [name, g] : grads) sq += g.mat().squaredNorm();
    const double norm = std::sqrt(sq);
    if (!(norm > max_norm)) return 1.0;
    const double factor = max_norm / norm;
    for (auto& [name, g] : grads) g.mat() *= factor;
    return factor;
}

}  // namespace pseg::train
