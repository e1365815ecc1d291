#pragma once

#include "nappal/linalg.hpp"
#include "nappal/regularizer.hpp"

#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nappal {

// Raised for invalid solver/problem configuration (as opposed to bad numeric
// arguments, which use std::invalid_argument).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Full description of the constrained composite model
//
//     min  G(u, v) + J(u) + H(v)
//     s.t. Theta(u) + B v = 0,  u in U,  v in R^d
//
// with Theta = Omega + Phi. Evaluators must be pure and safe for concurrent
// read-only calls; all Lipschitz moduli are user-supplied (the library never
// estimates them inside the solve loop, see diagnostics for offline
// falsification). Null std::function members denote identically-zero terms.
struct ProblemSpec {
    Index n = 0;  // u dimension
    Index d = 0;  // v dimension
    Index m = 0;  // constraint dimension
    std::vector<Index> block_sizes;  // partition of n

    // smooth coupled term G(u, v)
    std::function<double(const Vector&, const Vector&)> g_value;
    std::function<Vector(const Vector&, const Vector&)> g_grad_u;
    std::function<Vector(const Vector&, const Vector&)> g_grad_v;
    double l_g = 0.0;

    // smooth v-only term H(v)
    std::function<double(const Vector&)> h_value;
    std::function<Vector(const Vector&)> h_grad;
    double l_h = 0.0;

    // nonsmooth separable J, one descriptor per block
    std::vector<Regularizer> regularizers;

    // smooth constraint part Omega : R^n -> R^m with Jacobian
    std::function<Vector(const Vector&)> omega;
    std::function<Matrix(const Vector&)> omega_jacobian;
    Vector l_omega_components;  // per-component gradient moduli (size m)
    double l_omega = 0.0;       // sum of the components

    // optional nonsmooth-free extra constraint part Phi (default zero);
    // a nonzero Phi requires user block solvers, see prox.hpp
    std::function<Vector(const Vector&)> phi;

    double l_theta = 0.0;  // global Lipschitz modulus of Theta = Omega + Phi

    Matrix B;  // m x d, tall

    std::vector<BoxSet> boxes;  // feasible set, one box per block

    // ---- evaluation helpers ----

    double g(const Vector& u, const Vector& v) const { return g_value ? g_value(u, v) : 0.0; }
    double h(const Vector& v) const { return h_value ? h_value(v) : 0.0; }

    Vector grad_u_g(const Vector& u, const Vector& v) const {
        return g_grad_u ? g_grad_u(u, v) : Vector(Vector::Zero(n));
    }
    Vector grad_v_g(const Vector& u, const Vector& v) const {
        return g_grad_v ? g_grad_v(u, v) : Vector(Vector::Zero(d));
    }
    Vector grad_h(const Vector& v) const {
        return h_grad ? h_grad(v) : Vector(Vector::Zero(d));
    }

    Vector theta(const Vector& u) const {
        Vector t = omega ? omega(u) : Vector(Vector::Zero(m));
        if (phi) t += phi(u);
        return t;
    }

    Matrix jacobian_omega(const Vector& u) const {
        return omega_jacobian ? omega_jacobian(u) : Matrix(Matrix::Zero(m, n));
    }

    bool has_phi() const { return static_cast<bool>(phi); }

    double j_value(const Vector& u) const {
        double total = 0.0;
        Index off = 0;
        for (std::size_t i = 0; i < regularizers.size(); ++i) {
            const Index sz = block_sizes[i];
            total += regularizers[i].value_sum(u.segment(off, sz));
            off += sz;
        }
        return total;
    }

    // F(u, v) = G + J + H
    double objective(const Vector& u, const Vector& v) const {
        return g(u, v) + j_value(u) + h(v);
    }

    Index num_blocks() const { return static_cast<Index>(block_sizes.size()); }

    Index block_offset(Index i) const {
        Index off = 0;
        for (Index b = 0; b < i; ++b) off += block_sizes[b];
        return off;
    }
};

// Primal-dual point w = (u, v, p) with the shifted multiplier
// q = p + gamma (Theta(u) + B v) cached alongside.
struct Iterate {
    Vector u, v, p;
    Vector q;
    bool q_fresh = false;

    static Iterate zero(const ProblemSpec& spec) {
        Iterate w;
        w.u = Vector::Zero(spec.n);
        w.v = Vector::Zero(spec.d);
        w.p = Vector::Zero(spec.m);
        w.q = Vector::Zero(spec.m);
        return w;
    }
};

enum class CheckStatus { pass, fail, asserted };

struct CheckResult {
    std::string name;
    CheckStatus status = CheckStatus::pass;
    std::string detail;
};

struct ValidationReport {
    std::vector<CheckResult> checks;

    void add(std::string name, bool ok, std::string detail = "") {
        checks.push_back({std::move(name), ok ? CheckStatus::pass : CheckStatus::fail,
                          std::move(detail)});
    }

    void add_asserted(std::string name, std::string detail) {
        checks.push_back({std::move(name), CheckStatus::asserted, std::move(detail)});
    }

    bool hard_ok() const {
        for (const auto& c : checks) {
            if (c.status == CheckStatus::fail) return false;
        }
        return true;
    }

    std::string to_string() const {
        std::ostringstream os;
        for (const auto& c : checks) {
            const char* tag = c.status == CheckStatus::pass ? "PASS"
                            : c.status == CheckStatus::fail ? "FAIL"
                                                            : "USER-ASSERTED";
            os << tag << "  " << c.name;
            if (!c.detail.empty()) os << "  (" << c.detail << ")";
            os << "\n";
        }
        return os.str();
    }
};

// Structural validation of a ProblemSpec. Report-style: nothing throws here;
// callers decide whether a failed hard check rejects the instance. Image
// inclusion Im(Theta) <= Im(B) and lower boundedness / coercivity of F cannot
// be decided from black-box evaluators and are surfaced as user-asserted.
inline ValidationReport validate_problem(const ProblemSpec& spec) {
    ValidationReport rep;

    Index block_total = 0;
    for (Index sz : spec.block_sizes) block_total += sz;
    rep.add("dimensional consistency",
            spec.n > 0 && spec.d > 0 && spec.m > 0 && block_total == spec.n &&
                spec.B.rows() == spec.m && spec.B.cols() == spec.d,
            "block sizes sum to n; B is m x d");

    rep.add("tall coupling matrix", spec.m >= spec.d, "m >= d");

    const bool blocks_described =
        spec.regularizers.size() == spec.block_sizes.size() &&
        spec.boxes.size() == spec.block_sizes.size();
    bool box_dims_ok = blocks_described;
    if (blocks_described) {
        for (std::size_t i = 0; i < spec.boxes.size(); ++i) {
            if (spec.boxes[i].dim() != spec.block_sizes[i]) box_dims_ok = false;
        }
    }
    rep.add("block coverage", blocks_described && box_dims_ok,
            "one regularizer and one box per block");

    const bool constants_ok =
        spec.l_g >= 0.0 && std::isfinite(spec.l_g) && spec.l_h >= 0.0 &&
        std::isfinite(spec.l_h) && spec.l_omega >= 0.0 && std::isfinite(spec.l_omega) &&
        spec.l_theta >= 0.0 && std::isfinite(spec.l_theta);
    rep.add("nonnegative finite Lipschitz constants", constants_ok);

    if (spec.B.size() > 0 && spec.m >= spec.d) {
        const double bnorm = spectral_norm(spec.B).value;
        const double lmin = min_eigen_gram(spec.B).value;
        std::ostringstream os;
        os << "lambda_min(B^T B) = " << lmin << ", ||B||^2 = " << bnorm * bnorm;
        rep.add("B full column rank", lmin > 1e-12 * bnorm * bnorm, os.str());
    } else {
        rep.add("B full column rank", false, "B missing or not tall");
    }

    rep.add_asserted("image inclusion Im(Theta) <= Im(B)",
                     "not machine-checkable -- user asserted");
    rep.add_asserted("objective lower bounded and coercive on the feasible set",
                     "not machine-checkable -- user asserted");
    return rep;
}

namespace detail {
inline void check_iterate_dims(const ProblemSpec& spec, const Iterate& w, const char* who) {
    if (w.u.size() != spec.n || w.v.size() != spec.d || w.p.size() != spec.m) {
        throw std::invalid_argument(std::string(who) + ": iterate dimension mismatch");
    }
}
}  // namespace detail

// L(w) = F(u, v) + <p, Theta(u) + B v>
inline double lagrangian(const ProblemSpec& spec, const Iterate& w) {
    detail::check_iterate_dims(spec, w, "lagrangian");
    const Vector residual = spec.theta(w.u) + spec.B * w.v;
    return spec.objective(w.u, w.v) + w.p.dot(residual);
}

// L_gamma(w) = L(w) + (gamma/2) ||Theta(u) + B v||^2
inline double augmented_lagrangian(const ProblemSpec& spec, const Iterate& w, double gamma) {
    if (!(gamma > 0.0)) throw std::invalid_argument("augmented_lagrangian: gamma must be > 0");
    detail::check_iterate_dims(spec, w, "augmented_lagrangian");
    const Vector residual = spec.theta(w.u) + spec.B * w.v;
    return spec.objective(w.u, w.v) + w.p.dot(residual) + 0.5 * gamma * residual.squaredNorm();
}

// ||Theta(u) + B v||
inline double feasibility_residual(const ProblemSpec& spec, const Vector& u, const Vector& v) {
    if (u.size() != spec.n || v.size() != spec.d) {
        throw std::invalid_argument("feasibility_residual: dimension mismatch");
    }
    return (spec.theta(u) + spec.B * v).norm();
}

}  // namespace nappal
