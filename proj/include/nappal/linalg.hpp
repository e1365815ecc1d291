#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace nappal {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

// Result of an iterative spectral estimate. `converged == false` means the
// iteration budget ran out (the value is the last estimate) or, for the Gram
// variant, that the Gram matrix is numerically singular.
struct SpectralEstimate {
    double value = 0.0;
    bool converged = true;
};

namespace detail {

constexpr int kPowerIterBudget = 10000;
constexpr double kPowerIterRelTol = 1e-12;

// Power iteration on a symmetric PSD operator given as apply(x).
// Deterministic all-ones start; stops when successive Rayleigh quotients
// agree to kPowerIterRelTol relative.
template <typename Apply>
SpectralEstimate symmetric_power_iteration(Index dim, Apply&& apply) {
    Vector x = Vector::Ones(dim);
    x /= x.norm();
    double rayleigh = 0.0;
    for (int it = 0; it < kPowerIterBudget; ++it) {
        Vector y = apply(x);
        const double ynorm = y.norm();
        if (ynorm == 0.0) return {0.0, true};
        y /= ynorm;
        const double r = y.dot(apply(y));
        if (it > 0 && std::abs(r - rayleigh) <= kPowerIterRelTol * std::abs(r)) {
            return {r, true};
        }
        rayleigh = r;
        x = std::move(y);
    }
    return {rayleigh, false};
}

}  // namespace detail

// Largest singular value of B, via power iteration on B^T B.
inline SpectralEstimate spectral_norm(const Matrix& B) {
    if (B.size() == 0) throw std::invalid_argument("spectral_norm: empty matrix");
    auto est = detail::symmetric_power_iteration(
        B.cols(), [&B](const Vector& x) -> Vector { return B.transpose() * (B * x); });
    est.value = std::sqrt(std::max(0.0, est.value));
    return est;
}

// Cholesky factorization of B^T B with cached spectral quantities.
// Construction throws if B^T B is not numerically positive definite.
class GramFactorization {
 public:
    explicit GramFactorization(const Matrix& B) {
        if (B.rows() < B.cols()) {
            throw std::invalid_argument("GramFactorization: B must be tall (m >= d)");
        }
        gram_ = B.transpose() * B;
        llt_.compute(gram_);
        if (llt_.info() != Eigen::Success) {
            throw std::invalid_argument("GramFactorization: B^T B is singular");
        }
        b_norm_ = spectral_norm(B).value;
        auto mineig = detail::symmetric_power_iteration(
            B.cols(), [this](const Vector& x) -> Vector { return solve(x); });
        // inverse iteration estimates 1/lambda_min
        min_eigen_ = mineig.value > 0.0 ? 1.0 / mineig.value : 0.0;
        if (!(min_eigen_ > 0.0)) {
            throw std::invalid_argument("GramFactorization: lambda_min(B^T B) <= 0");
        }
    }

    // Solve (B^T B) x = rhs via the two triangular solves of the factor.
    Vector solve(const Vector& rhs) const {
        if (rhs.size() != gram_.rows()) {
            throw std::invalid_argument("GramFactorization::solve: dimension mismatch");
        }
        Vector y = llt_.matrixL().solve(rhs);
        return llt_.matrixU().solve(y);
    }

    const Matrix& gram() const { return gram_; }
    Matrix factor() const { return llt_.matrixL(); }
    double b_norm() const { return b_norm_; }
    double min_eigen() const { return min_eigen_; }
    Index dim() const { return gram_.rows(); }

 private:
    Matrix gram_;
    Eigen::LLT<Matrix> llt_;
    double b_norm_ = 0.0;
    double min_eigen_ = 0.0;
};

// Smallest eigenvalue of B^T B by inverse power iteration. A singular Gram
// matrix yields {0, false} rather than throwing.
inline SpectralEstimate min_eigen_gram(const Matrix& B) {
    if (B.rows() < B.cols()) throw std::invalid_argument("min_eigen_gram: B must be tall");
    Eigen::LLT<Matrix> llt(B.transpose() * B);
    if (llt.info() != Eigen::Success) return {0.0, false};
    auto est = detail::symmetric_power_iteration(B.cols(), [&llt](const Vector& x) -> Vector {
        Vector y = llt.matrixL().solve(x);
        return llt.matrixU().solve(y);
    });
    if (est.value <= 0.0) return {0.0, false};
    return {1.0 / est.value, est.converged};
}

struct LeastSquaresResult {
    Vector v;
    double residual = 0.0;
};

// argmin_v ||B v - target|| through the normal equations, plus the optimal
// residual norm. A large residual signals that `target` leaves Im(B).
inline LeastSquaresResult image_preimage(const GramFactorization& F, const Matrix& B,
                                         const Vector& target) {
    if (target.size() != B.rows()) {
        throw std::invalid_argument("image_preimage: dimension mismatch");
    }
    LeastSquaresResult out;
    out.v = F.solve(B.transpose() * target);
    out.residual = (B * out.v - target).norm();
    return out;
}

constexpr double kImageInclusionTol = 1e-8;

inline bool image_inclusion_breach(const LeastSquaresResult& r, const Vector& target,
                                   double tol = kImageInclusionTol) {
    return r.residual > tol * (1.0 + target.norm());
}

}  // namespace nappal
