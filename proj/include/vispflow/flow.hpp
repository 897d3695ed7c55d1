#pragma once

#include <functional>

#include "vispflow/errors.hpp"
#include "vispflow/tensor.hpp"

namespace vispflow {

// Conditional path between a source latent z0 and a target latent z1:
//   z_t = t z1 + (1 - (1 - sigma_min) t) z0
// so z_0 = z0 and z_1 = z1 + sigma_min z0.
inline Tensor interpolate(const Tensor& z0, const Tensor& z1, double t, double sigma_min) {
    check_same_shape(z0, z1, "interpolate");
    if (t < 0.0 || t > 1.0) throw contract_error("interpolate: t must be in [0, 1]");
    Tensor out = z0;
    const double a = t;
    const double b = 1.0 - (1.0 - sigma_min) * t;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a * z1.data[i] + b * z0.data[i];
    return out;
}

// Time derivative of the path; constant along the trajectory:
//   v* = z1 - (1 - sigma_min) z0.
inline Tensor target_velocity(const Tensor& z0, const Tensor& z1, double sigma_min) {
    check_same_shape(z0, z1, "target_velocity");
    Tensor out = z0;
    const double b = 1.0 - sigma_min;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = z1.data[i] - b * z0.data[i];
    return out;
}

// Mean squared error between predicted and target velocity fields.
inline double fm_loss(const Tensor& v_pred, const Tensor& v_star) {
    check_same_shape(v_pred, v_star, "fm_loss");
    double s = 0.0;
    for (std::size_t i = 0; i < v_pred.numel(); ++i) {
        const double d = v_pred.data[i] - v_star.data[i];
        s += d * d;
    }
    return s / static_cast<double>(v_pred.numel());
}

// Classifier-free guidance combination v_u + s (v_c - v_u), evaluated as
// (1 - s) v_u + s v_c so both endpoints are exact.
inline Tensor guided_velocity(const Tensor& v_uncond, const Tensor& v_cond, double scale) {
    check_same_shape(v_uncond, v_cond, "guided_velocity");
    Tensor out = v_uncond;
    for (std::size_t i = 0; i < out.numel(); ++i)
        out.data[i] = (1.0 - scale) * v_uncond.data[i] + scale * v_cond.data[i];
    return out;
}

using VelocityFn = std::function<Tensor(const Tensor& z, double t)>;

// Forward Euler from t = 0 to t = 1 with a fixed step count.
inline Tensor euler_integrate(Tensor z, int steps, const VelocityFn& velocity) {
    if (steps < 1) throw contract_error("euler_integrate: steps must be >= 1");
    const double dt = 1.0 / static_cast<double>(steps);
    for (int k = 0; k < steps; ++k) {
        const double t = static_cast<double>(k) * dt;
        const Tensor v = velocity(z, t);
        check_same_shape(z, v, "euler_integrate");
        for (std::size_t i = 0; i < z.numel(); ++i) z.data[i] += dt * v.data[i];
    }
    return z;
}

}  // namespace vispflow
