#pragma once

// Shared scalar toy model: Theta(u) = u, B = [-1], J = 0, optional linear
// G(u, v) = g_v_coef * v. Feasibility means u = v.

#include "nappal/model.hpp"

namespace toy {

inline nappal::ProblemSpec scalar(double g_v_coef = 0.0) {
    using nappal::Matrix;
    using nappal::Vector;
    nappal::ProblemSpec spec;
    spec.n = 1;
    spec.d = 1;
    spec.m = 1;
    spec.block_sizes = {1};
    spec.regularizers = {nappal::Regularizer::zero()};
    spec.boxes = {nappal::BoxSet::all(1)};
    spec.B = Matrix::Constant(1, 1, -1.0);
    spec.omega = [](const Vector& u) -> Vector { return u; };
    spec.omega_jacobian = [](const Vector&) -> Matrix { return Matrix::Identity(1, 1); };
    spec.l_theta = 1.0;
    spec.l_omega = 0.0;
    spec.l_omega_components = Vector::Zero(1);
    if (g_v_coef != 0.0) {
        spec.g_value = [g_v_coef](const Vector&, const Vector& v) { return g_v_coef * v[0]; };
        spec.g_grad_v = [g_v_coef](const Vector&, const Vector&) -> Vector {
            return Vector::Constant(1, g_v_coef);
        };
        spec.g_grad_u = [](const Vector&, const Vector&) -> Vector { return Vector::Zero(1); };
        spec.l_g = 0.0;  // linear G has zero curvature
    }
    return spec;
}

inline nappal::Iterate point(double u, double v, double p) {
    nappal::Iterate w;
    w.u = nappal::Vector::Constant(1, u);
    w.v = nappal::Vector::Constant(1, v);
    w.p = nappal::Vector::Constant(1, p);
    w.q = nappal::Vector::Zero(1);
    return w;
}

}  // namespace toy
