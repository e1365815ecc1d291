#pragma once

#include "nappal/bregman.hpp"
#include "nappal/linalg.hpp"
#include "nappal/model.hpp"
#include "nappal/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace nappal {

// Spectral quantities of the coupling matrix used throughout the step-size
// and potential formulas. Computed once per solve.
struct SpectralInfo {
    double b_norm = 0.0;      // ||B||
    double lambda_min = 0.0;  // lambda_min(B^T B)
};

inline SpectralInfo spectral_info(const Matrix& B) {
    return {spectral_norm(B).value, min_eigen_gram(B).value};
}

// Weights of the potential sequence
//   Lambda^k = L_gamma(w^k) + c1 ||u^{k-1} - u^k||^2 + c2 ||v^{k-1} - v^k||^2
//              + ||p^{k-1} - p^k||^2 / (2 gamma)
// and the per-step descent margin c3 = min{1/2, c4, 1/(3 gamma)}.
struct PotentialConstants {
    double c1 = 0.0, c2 = 0.0, c3 = 0.0, c4 = 0.0;
};

// Lower bound on gamma required for a positive descent margin.
inline double gamma_lower_bound(const ProblemSpec& spec, double lambda_min) {
    if (!(lambda_min > 0.0)) throw ConfigError("gamma bound: singular coupling matrix");
    return (std::sqrt(57.0) + 1.0) / (2.0 * lambda_min) * (spec.l_g + spec.l_h);
}

inline PotentialConstants potential_constants(const ProblemSpec& spec, double gamma,
                                              const SpectralInfo& si) {
    PotentialConstants c;
    const double gl = gamma * si.lambda_min;
    const double sum_gh = spec.l_g + spec.l_h;
    const double c1_num = spec.l_g + gamma * si.b_norm * spec.l_theta;
    c.c1 = 7.0 * c1_num * c1_num / gl;
    c.c2 = 7.0 * sum_gh * sum_gh / gl;
    c.c4 = 0.5 * (gl - sum_gh) - c.c2;
    if (!(c.c4 > 0.0)) {
        throw ConfigError("potential constants: c4 <= 0; gamma must exceed " +
                          std::to_string(gamma_lower_bound(spec, si.lambda_min)));
    }
    c.c3 = std::min({0.5, c.c4, 1.0 / (3.0 * gamma)});
    return c;
}

inline PotentialConstants potential_constants(const ProblemSpec& spec, double gamma) {
    return potential_constants(spec, gamma, spectral_info(spec.B));
}

// Lambda^k from the augmented Lagrangian value and consecutive-iterate
// difference norms (zero for k = 0).
inline double potential(double l_gamma_val, double du_norm, double dv_norm, double dp_norm,
                        const PotentialConstants& c, double gamma) {
    return l_gamma_val + c.c1 * du_norm * du_norm + c.c2 * dv_norm * dv_norm +
           dp_norm * dp_norm / (2.0 * gamma);
}

// The explicit certificate constant h(u^k, p^k): the computed subgradient
// at w^{k+1} satisfies ||xi|| <= h ||w^k - w^{k+1}||.
inline double certificate_h(const ProblemSpec& spec, double gamma, double sigma, double q_norm,
                            double delta_k, double l_kernel, const SpectralInfo& si) {
    if (!(delta_k > 0.0)) throw std::invalid_argument("certificate_h: delta_k must be > 0");
    if (!(sigma > 0.0 && sigma < 1.0)) {
        throw std::invalid_argument("certificate_h: sigma must be in (0,1)");
    }
    const double lt = spec.l_theta;
    const double branch1 = 2.0 * spec.l_g + q_norm * spec.l_omega + gamma * si.b_norm * lt +
                           gamma * lt * lt + l_kernel / (sigma * delta_k);
    const double branch2 = 2.0 * spec.l_g + spec.l_h + gamma * si.b_norm * lt;
    const double branch3 = lt + si.b_norm + 1.0 / gamma;
    return std::max({branch1, branch2, branch3});
}

inline double certificate_h(const ProblemSpec& spec, double gamma, double sigma, double q_norm,
                            double delta_k, double l_kernel) {
    return certificate_h(spec, gamma, sigma, q_norm, delta_k, l_kernel, spectral_info(spec.B));
}

// Explicit element xi = (xi_u, xi_v, xi_p) of the augmented-Lagrangian
// subdifferential at w^{k+1}, valid when w_next came out of one iteration from
// w_k with step eps_k.
struct XiResidual {
    Vector xi_u, xi_v, xi_p;

    double norm() const {
        return std::sqrt(xi_u.squaredNorm() + xi_v.squaredNorm() + xi_p.squaredNorm());
    }
};

inline XiResidual residual_xi(const ProblemSpec& spec, const BregmanKernel& kernel, double gamma,
                              const Iterate& w_k, const Iterate& w_next, double eps_k) {
    detail::check_iterate_dims(spec, w_k, "residual_xi");
    detail::check_iterate_dims(spec, w_next, "residual_xi");
    if (spec.has_phi()) {
        throw ConfigError("residual_xi: only the default mode Phi == 0 is supported");
    }
    const Vector theta_k = spec.theta(w_k.u);
    const Vector theta_1 = spec.theta(w_next.u);
    const Vector r_k = theta_k + spec.B * w_k.v;
    const Vector r_1 = theta_1 + spec.B * w_next.v;
    const Vector q_k = w_k.p + gamma * r_k;
    const Vector dp = w_next.p - w_k.p;
    const Matrix jac_k = spec.jacobian_omega(w_k.u);
    const Matrix jac_1 = spec.jacobian_omega(w_next.u);

    XiResidual xi;
    xi.xi_u = spec.grad_u_g(w_next.u, w_next.v) - spec.grad_u_g(w_k.u, w_k.v) +
              (jac_1 - jac_k).transpose() * q_k + jac_1.transpose() * dp +
              gamma * (jac_1.transpose() * (r_1 - r_k)) -
              (kernel.gradient(w_next.u) - kernel.gradient(w_k.u)) / eps_k;
    xi.xi_v = spec.grad_v_g(w_next.u, w_next.v) - spec.grad_v_g(w_k.u, w_k.v) +
              spec.grad_h(w_next.v) - spec.grad_h(w_k.v) + spec.B.transpose() * dp +
              gamma * (spec.B.transpose() * (r_1 - r_k)) -
              gamma * (spec.B.transpose() * (spec.B * (w_next.v - w_k.v)));
    xi.xi_p = dp / gamma;
    return xi;
}

// h, its certified bound h ||dw||, and the directly computed xi norms for one
// iteration.
struct CertificateRecord {
    double h = 0.0;
    double bound = 0.0;
    double xi_norm = 0.0;
    double xi_u_norm = 0.0, xi_v_norm = 0.0, xi_p_norm = 0.0;
};

inline CertificateRecord make_certificate(const ProblemSpec& spec, const BregmanKernel& kernel,
                                          double gamma, double sigma, const Iterate& w_k,
                                          const Iterate& w_next, double eps_k, double delta_k,
                                          const SpectralInfo& si) {
    CertificateRecord cert;
    const Vector q_k = w_k.p + gamma * (spec.theta(w_k.u) + spec.B * w_k.v);
    cert.h = certificate_h(spec, gamma, sigma, q_k.norm(), delta_k, kernel.grad_modulus(), si);
    const double dw = std::sqrt((w_k.u - w_next.u).squaredNorm() +
                                (w_k.v - w_next.v).squaredNorm() +
                                (w_k.p - w_next.p).squaredNorm());
    cert.bound = cert.h * dw;
    const XiResidual xi = residual_xi(spec, kernel, gamma, w_k, w_next, eps_k);
    cert.xi_norm = xi.norm();
    cert.xi_u_norm = xi.xi_u.norm();
    cert.xi_v_norm = xi.xi_v.norm();
    cert.xi_p_norm = xi.xi_p.norm();
    return cert;
}

// The direct xi norm is a valid stationarity witness: xi is an element of the
// augmented-Lagrangian subdifferential at w^{k+1}.
inline bool is_epsilon_stationary(const CertificateRecord& cert, double epsilon) {
    return cert.xi_norm <= epsilon;
}

// Post-hoc rate analysis of a run. The limit value is unknown, so the fit uses
// the final recorded Lambda minus a few-ulp guard as surrogate and reports fit
// quality instead of asserting linearity.
struct RateEstimate {
    double alpha = std::numeric_limits<double>::quiet_NaN();  // exp(slope)
    double slope = 0.0;
    double r_squared = 0.0;
    bool geometric = false;       // r^2 >= 0.999 and negative slope
    bool below_floor = false;     // gaps vanished; nothing to fit
    bool sqrtk_tail_nonincreasing = false;
    double sqrtk_band = 0.0;      // s at window end over s at window start
    double sqrtk_envelope_band = 0.0;  // worst pointwise creep over the running min
    std::size_t fit_begin = 0, fit_end = 0;
};

namespace detail {

// s_k = sqrt(k) * min_{1<=j<=k} dw_j over recorded rows (row j holds
// ||w^j - w^{j+1}||; row 0 is skipped as Lambda^0 has no history).
inline std::vector<double> sqrtk_min_sequence(const std::vector<double>& dw) {
    std::vector<double> s(dw.size(), 0.0);
    double running = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k < dw.size(); ++k) {
        running = std::min(running, dw[k]);
        s[k] = std::sqrt(static_cast<double>(k)) * running;
    }
    return s;
}

}  // namespace detail

inline RateEstimate estimate_rate(const std::vector<double>& lambda,
                                  const std::vector<double>& dw, double tail_fraction,
                                  double band_tol = 0.05) {
    if (lambda.size() < 50) {
        throw std::invalid_argument("estimate_rate: need at least 50 recorded iterations");
    }
    if (!(tail_fraction > 0.0 && tail_fraction < 1.0)) {
        throw std::invalid_argument("estimate_rate: tail_fraction must be in (0,1)");
    }
    RateEstimate est;
    const std::size_t K = lambda.size();
    est.fit_begin = static_cast<std::size_t>((1.0 - tail_fraction) * static_cast<double>(K));
    est.fit_end = static_cast<std::size_t>(0.9 * static_cast<double>(K));
    if (est.fit_end <= est.fit_begin + 4) {
        est.fit_begin = K / 2;
        est.fit_end = std::max(est.fit_begin + 5, 9 * K / 10);
        est.fit_end = std::min(est.fit_end, K);
    }

    const double lam_final = lambda.back();
    const double guard =
        std::max(std::numeric_limits<double>::epsilon() * std::abs(lam_final), 1e-300);
    const double lam_star = lam_final - guard;

    double gap_min = std::numeric_limits<double>::infinity();
    double gap_max = -std::numeric_limits<double>::infinity();
    bool nonpositive = false;
    for (std::size_t k = est.fit_begin; k < est.fit_end; ++k) {
        const double gap = lambda[k] - lam_star;
        if (gap <= 0.0) nonpositive = true;
        gap_min = std::min(gap_min, gap);
        gap_max = std::max(gap_max, gap);
    }
    // flat relative to its own magnitude: nothing left to fit
    if (nonpositive || gap_max - gap_min <= 1e-10 * gap_max) {
        est.below_floor = true;
    } else {
        // least-squares line through (k, log gap)
        double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
        for (std::size_t k = est.fit_begin; k < est.fit_end; ++k) {
            const double x = static_cast<double>(k);
            const double y = std::log(lambda[k] - lam_star);
            sx += x; sy += y; sxx += x * x; sxy += x * y; n += 1;
        }
        const double denom = n * sxx - sx * sx;
        est.slope = (n * sxy - sx * sy) / denom;
        const double intercept = (sy - est.slope * sx) / n;
        double ss_res = 0, ss_tot = 0;
        const double mean_y = sy / n;
        for (std::size_t k = est.fit_begin; k < est.fit_end; ++k) {
            const double y = std::log(lambda[k] - lam_star);
            const double fit = intercept + est.slope * static_cast<double>(k);
            ss_res += (y - fit) * (y - fit);
            ss_tot += (y - mean_y) * (y - mean_y);
        }
        est.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
        est.alpha = std::exp(est.slope);
        est.geometric = est.r_squared >= 0.999 && est.slope < 0.0;
    }

    // o(1/sqrt(k)) signature over the final half: the net trend of
    // s_k = sqrt(k) min_j dw_j must be non-increasing within the band. A tail
    // whose best step has stopped shrinking makes s grow like sqrt(k) and
    // fails; plateaus in the middle of the window are tolerated (the theory
    // bounds the tail only in the o(1/sqrt(k)) sense). The worst pointwise
    // creep over the running minimum is reported alongside.
    const std::vector<double> s = detail::sqrtk_min_sequence(dw);
    const std::size_t half = std::max<std::size_t>(dw.size() / 2, 1);
    double env = std::numeric_limits<double>::infinity();
    double creep = 1.0;
    for (std::size_t k = half; k < s.size(); ++k) {
        if (std::isfinite(env) && env > 0.0) creep = std::max(creep, s[k] / env);
        env = std::min(env, s[k]);
    }
    est.sqrtk_envelope_band = creep;
    const double s_start = s[half];
    const double s_end = s.back();
    est.sqrtk_band = s_start > 0.0 ? s_end / s_start : (s_end > 0.0 ? creep : 1.0);
    est.sqrtk_tail_nonincreasing = est.sqrtk_band <= 1.0 + band_tol;
    return est;
}

// Slack of the telescoping budget
//   sum_k c3 (min_{1<=j<=k} dw_j)^2 <= Lambda^1 - min_k Lambda^k,
// returned as RHS - LHS (nonnegative up to round-off when the descent lemma
// holds along the run).
inline double telescoping_slack(const std::vector<double>& lambda, const std::vector<double>& dw,
                                double c3) {
    if (lambda.empty()) return 0.0;
    double lhs = 0.0;
    double running = std::numeric_limits<double>::infinity();
    double lam_min = lambda[0];
    for (std::size_t k = 1; k < dw.size(); ++k) {
        running = std::min(running, dw[k]);
        lhs += c3 * running * running;
        lam_min = std::min(lam_min, lambda[k]);
    }
    return (lambda[0] - lam_min) - lhs;
}

// Lower-bound witness for Lambda^k: with v~ the least-squares preimage of
// -Theta(u), Lambda^k must dominate
//   F(u, v~) + (5 gamma lambda_min - 7 (L_G + L_H)) / (14 ||B||^2) * ||r||^2.
inline double potential_lower_bound(const ProblemSpec& spec, const GramFactorization& gram,
                                    const Iterate& w, double gamma, const SpectralInfo& si) {
    const Vector theta_u = spec.theta(w.u);
    const auto pre = image_preimage(gram, spec.B, -theta_u);
    const double r2 = (theta_u + spec.B * w.v).squaredNorm();
    const double coeff = (5.0 * gamma * si.lambda_min - 7.0 * (spec.l_g + spec.l_h)) /
                         (14.0 * si.b_norm * si.b_norm);
    return spec.objective(w.u, pre.v) + coeff * r2;
}

// ---- offline validation of user-supplied data ----

namespace detail {

inline Vector random_point(Rng& rng, Index dim, double halfwidth) {
    Vector x(dim);
    for (Index j = 0; j < dim; ++j) x[j] = rng.uniform(-halfwidth, halfwidth);
    return x;
}

}  // namespace detail

// Central finite differences against the analytic gradients at random points.
// Step 1e-6 (1 + ||x||), agreement to `tol` relative in vector norm.
inline ValidationReport check_gradients(const ProblemSpec& spec, int points, std::uint64_t seed,
                                        double tol = 1e-5, double halfwidth = 5.0) {
    Rng rng(seed);
    double worst_gu = 0, worst_gv = 0, worst_h = 0, worst_omega = 0;
    for (int s = 0; s < points; ++s) {
        Vector u = detail::random_point(rng, spec.n, halfwidth);
        Vector v = detail::random_point(rng, spec.d, halfwidth);
        const double hu = 1e-6 * (1.0 + u.norm());
        const double hv = 1e-6 * (1.0 + v.norm());

        if (spec.g_value) {
            Vector fd_u(spec.n), fd_v(spec.d);
            for (Index j = 0; j < spec.n; ++j) {
                Vector up = u, um = u;
                up[j] += hu; um[j] -= hu;
                fd_u[j] = (spec.g(up, v) - spec.g(um, v)) / (2.0 * hu);
            }
            for (Index j = 0; j < spec.d; ++j) {
                Vector vp = v, vm = v;
                vp[j] += hv; vm[j] -= hv;
                fd_v[j] = (spec.g(u, vp) - spec.g(u, vm)) / (2.0 * hv);
            }
            const Vector au = spec.grad_u_g(u, v);
            const Vector av = spec.grad_v_g(u, v);
            worst_gu = std::max(worst_gu, (fd_u - au).norm() / (1.0 + au.norm()));
            worst_gv = std::max(worst_gv, (fd_v - av).norm() / (1.0 + av.norm()));
        }
        if (spec.h_value) {
            Vector fd(spec.d);
            for (Index j = 0; j < spec.d; ++j) {
                Vector vp = v, vm = v;
                vp[j] += hv; vm[j] -= hv;
                fd[j] = (spec.h(vp) - spec.h(vm)) / (2.0 * hv);
            }
            const Vector ah = spec.grad_h(v);
            worst_h = std::max(worst_h, (fd - ah).norm() / (1.0 + ah.norm()));
        }
        if (spec.omega) {
            Matrix fd(spec.m, spec.n);
            for (Index j = 0; j < spec.n; ++j) {
                Vector up = u, um = u;
                up[j] += hu; um[j] -= hu;
                fd.col(j) = (spec.omega(up) - spec.omega(um)) / (2.0 * hu);
            }
            const Matrix aj = spec.jacobian_omega(u);
            worst_omega = std::max(worst_omega, (fd - aj).norm() / (1.0 + aj.norm()));
        }
    }
    ValidationReport rep;
    rep.add("grad_u G finite differences", worst_gu <= tol, "max rel " + std::to_string(worst_gu));
    rep.add("grad_v G finite differences", worst_gv <= tol, "max rel " + std::to_string(worst_gv));
    rep.add("grad H finite differences", worst_h <= tol, "max rel " + std::to_string(worst_h));
    rep.add("Jacobian Omega finite differences", worst_omega <= tol,
            "max rel " + std::to_string(worst_omega));
    return rep;
}

// Sampling-based falsification of the user's Lipschitz moduli through the
// four descent inequalities (upper bounds on curvature along random pairs).
// Sampling cannot certify a constant; a reported violation disproves one.
inline ValidationReport check_descent_inequalities(const ProblemSpec& spec, int sample_count,
                                                   std::uint64_t seed, double halfwidth = 5.0) {
    Rng rng(seed);
    struct Worst {
        double violation = 0.0;  // max over samples of lhs - rhs
        double scale = 1.0;      // 1 + |lhs| + |rhs| at the worst pair
        void update(double lhs, double rhs) {
            if (lhs - rhs > violation) {
                violation = lhs - rhs;
                scale = 1.0 + std::abs(lhs) + std::abs(rhs);
            }
        }
        bool ok() const { return violation <= 1e-8 * scale; }
    };
    Worst w_g, w_gv, w_h, w_omega;
    for (int s = 0; s < sample_count; ++s) {
        const Vector u = detail::random_point(rng, spec.n, halfwidth);
        const Vector u2 = detail::random_point(rng, spec.n, halfwidth);
        const Vector v = detail::random_point(rng, spec.d, halfwidth);
        const Vector v2 = detail::random_point(rng, spec.d, halfwidth);

        if (spec.g_value) {
            const double lhs = spec.g(u, v) - spec.g(u2, v2) -
                               spec.grad_u_g(u2, v2).dot(u - u2) -
                               spec.grad_v_g(u2, v2).dot(v - v2);
            w_g.update(lhs, 0.5 * spec.l_g * ((u - u2).squaredNorm() + (v - v2).squaredNorm()));

            const double lhs_v = spec.g(u, v) - spec.g(u, v2) -
                                 spec.grad_v_g(u, v2).dot(v - v2);
            w_gv.update(lhs_v, 0.5 * spec.l_g * (v - v2).squaredNorm());
        }
        if (spec.h_value) {
            const double lhs = spec.h(v) - spec.h(v2) - spec.grad_h(v2).dot(v - v2);
            w_h.update(lhs, 0.5 * spec.l_h * (v - v2).squaredNorm());
        }
        if (spec.omega) {
            Vector p(spec.m);
            for (Index j = 0; j < spec.m; ++j) p[j] = rng.normal();
            const double pn = p.norm();
            if (pn > 0) p /= pn;
            const double lhs =
                p.dot(spec.omega(u) - spec.omega(u2) - spec.jacobian_omega(u2) * (u - u2));
            w_omega.update(lhs, 0.5 * spec.l_omega * (u - u2).squaredNorm());
        }
    }
    ValidationReport rep;
    rep.add("descent inequality for G (joint)", w_g.ok(),
            "max violation " + std::to_string(w_g.violation));
    rep.add("descent inequality for G in v", w_gv.ok(),
            "max violation " + std::to_string(w_gv.violation));
    rep.add("descent inequality for H", w_h.ok(),
            "max violation " + std::to_string(w_h.violation));
    rep.add("curvature inequality for Omega", w_omega.ok(),
            "max violation " + std::to_string(w_omega.violation));
    return rep;
}

}  // namespace nappal
