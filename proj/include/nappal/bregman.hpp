#pragma once

#include "nappal/linalg.hpp"

#include <stdexcept>
#include <utility>

namespace nappal {

enum class KernelKind { euclidean, diagonal };

// Quadratic Bregman kernel K. Only the Euclidean kernel K(u) = ||u||^2/2 and
// diagonally weighted kernels K(u) = u^T diag(w) u / 2 are supported; both keep
// the u-subproblem separable per coordinate. beta() is the strong-convexity
// modulus (min weight), grad_modulus() the gradient Lipschitz modulus (max
// weight); both equal 1 for the Euclidean kind.
class BregmanKernel {
 public:
    static BregmanKernel euclidean() { return BregmanKernel(KernelKind::euclidean, Vector()); }

    static BregmanKernel diagonal(Vector weights) {
        if (weights.size() == 0) throw std::invalid_argument("diagonal kernel: empty weights");
        for (Index j = 0; j < weights.size(); ++j) {
            if (!(weights[j] > 0.0) || !std::isfinite(weights[j])) {
                throw std::invalid_argument("diagonal kernel: weights must be positive finite");
            }
        }
        return BregmanKernel(KernelKind::diagonal, std::move(weights));
    }

    KernelKind kind() const { return kind_; }
    double beta() const { return beta_; }
    double grad_modulus() const { return l_k_; }

    double weight(Index j) const {
        return kind_ == KernelKind::euclidean ? 1.0 : weights_[j];
    }

    double value(const Vector& u) const {
        check_dim(u);
        if (kind_ == KernelKind::euclidean) return 0.5 * u.squaredNorm();
        return 0.5 * u.dot(weights_.cwiseProduct(u));
    }

    Vector gradient(const Vector& u) const {
        check_dim(u);
        if (kind_ == KernelKind::euclidean) return u;
        return weights_.cwiseProduct(u);
    }

    // D(u, u') = K(u) - K(u') - <grad K(u'), u - u'>; for quadratic kernels
    // this is the weighted half squared distance.
    double distance(const Vector& u, const Vector& u_prev) const {
        check_dim(u);
        if (u.size() != u_prev.size()) {
            throw std::invalid_argument("Bregman distance: dimension mismatch");
        }
        const Vector diff = u - u_prev;
        if (kind_ == KernelKind::euclidean) return 0.5 * diff.squaredNorm();
        return 0.5 * diff.dot(weights_.cwiseProduct(diff));
    }

 private:
    BregmanKernel(KernelKind kind, Vector weights)
        : kind_(kind), weights_(std::move(weights)) {
        if (kind_ == KernelKind::diagonal) {
            beta_ = weights_.minCoeff();
            l_k_ = weights_.maxCoeff();
        }
    }

    void check_dim(const Vector& u) const {
        if (kind_ == KernelKind::diagonal && u.size() != weights_.size()) {
            throw std::invalid_argument("Bregman kernel: dimension mismatch");
        }
    }

    KernelKind kind_;
    Vector weights_;
    double beta_ = 1.0;
    double l_k_ = 1.0;
};

}  // namespace nappal
