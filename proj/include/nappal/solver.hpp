#pragma once

#include "nappal/bregman.hpp"
#include "nappal/diagnostics.hpp"
#include "nappal/linalg.hpp"
#include "nappal/model.hpp"
#include "nappal/prox.hpp"
#include "nappal/trace.hpp"

#include <chrono>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace nappal {

enum class EpsRule { upper, lower, fixed_fraction };

struct SolverConfig {
    double gamma = 0.0;           // must satisfy the gamma_lower_bound strictly
    double sigma = 0.5;           // in (0,1)
    EpsRule eps_rule = EpsRule::upper;
    double eps_fraction = 1.0;    // for fixed_fraction, in [sigma, 1]
    long max_iters = 10000;
    double feas_tol = 1e-8;
    double cert_tol = 1e-6;
    BregmanKernel kernel = BregmanKernel::euclidean();
    int workers = 1;
    std::uint64_t seed = 0;       // informational; instance randomness lives in builders
    long trace_stride = 1;        // record every stride-th iteration
    bool keep_iterates = false;   // snapshot w^{k+1} for every recorded row
    bool record_timings = false;  // off by default: keeps trace files byte-reproducible
};

enum class Termination { converged, max_iters, breakdown };

inline const char* termination_name(Termination t) {
    switch (t) {
        case Termination::converged: return "feasibility+certificate met";
        case Termination::max_iters: return "max_iters";
        case Termination::breakdown: return "numerical breakdown";
    }
    return "?";
}

// Counters for the per-iteration inequality checks the solver evaluates as it
// runs. All of them are consequences of the update wiring, so nonzero counts
// point at an implementation or constant error, not at the instance.
struct InvariantCounters {
    long descent = 0;      // Lambda descent margin misses
    long certificate = 0;  // ||xi|| > h ||dw|| + slack
    long dual = 0;         // dual update identity residual
    long tau = 0;          // tau_k < 1/2
    long total() const { return descent + certificate + dual + tau; }
};

struct SolveResult {
    Iterate final;
    Iterate best;          // w^{k_hat}, the pre-transition point of the smallest step
    long best_index = 0;
    double best_dw = std::numeric_limits<double>::infinity();
    Termination reason = Termination::max_iters;
    long iterations = 0;
    std::vector<TraceRecord> trace;
    std::vector<Iterate> snapshots;  // w^{k+1} per recorded row (keep_iterates)
    Iterate initial;
    double sup_h = 0.0;    // measured stand-in for the existential certificate constant
    InvariantCounters violations;
    bool rate_available = false;
    RateEstimate rate;
    double wall_ms_total = 0.0;
};

// gamma = safety * (sqrt(57) + 1) / (2 lambda_min(B^T B)) * (L_G + L_H),
// with a positive fallback when the smooth moduli vanish.
inline double default_gamma(const ProblemSpec& spec, double safety = 1.05) {
    if (!(safety >= 1.0)) throw std::invalid_argument("default_gamma: safety must be >= 1");
    const double lmin = min_eigen_gram(spec.B).value;
    if (!(lmin > 0.0)) throw ConfigError("default_gamma: B^T B is singular");
    const double sum = spec.l_g + spec.l_h;
    if (sum == 0.0) return safety * 1.0;
    return safety * (std::sqrt(57.0) + 1.0) / (2.0 * lmin) * sum;
}

// Step-size ceiling delta_k; recomputed every iteration since ||q^k|| moves.
inline double step_size_delta(const ProblemSpec& spec, double gamma, double q_norm, double beta,
                              const SpectralInfo& si) {
    if (!(si.lambda_min > 0.0)) throw std::invalid_argument("step_size_delta: lambda_min <= 0");
    const double lt = spec.l_theta;
    const double denom = spec.l_g + q_norm * spec.l_omega + gamma * lt * lt +
                         14.0 * gamma * si.b_norm * si.b_norm * lt * lt / si.lambda_min +
                         14.0 * std::pow(spec.l_g + gamma * si.b_norm * lt, 2) /
                             (gamma * si.lambda_min) +
                         1.0;
    return beta / denom;
}

inline double step_size_delta(const ProblemSpec& spec, double gamma, double q_norm, double beta) {
    return step_size_delta(spec, gamma, q_norm, beta, spectral_info(spec.B));
}

// q^k = p^k + gamma (Theta(u^k) + B v^k); cached on the iterate.
inline Vector compute_q(const ProblemSpec& spec, Iterate& w, double gamma) {
    detail::check_iterate_dims(spec, w, "compute_q");
    w.q = w.p + gamma * (spec.theta(w.u) + spec.B * w.v);
    w.q_fresh = true;
    return w.q;
}

// Closed-form v-update: the unique minimizer of the linearized quadratic
// subproblem, v_k - (B^T B)^{-1} (grad_v_sum + B^T q) / gamma.
inline Vector update_v(const ProblemSpec& spec, const GramFactorization& F, const Vector& v_k,
                       const Vector& grad_v_sum, const Vector& q_k, double gamma) {
    return v_k - F.solve(grad_v_sum + spec.B.transpose() * q_k) / gamma;
}

// Dual ascent step p_k + gamma (Theta(u_next) + B v_next).
inline Vector update_p(const ProblemSpec& spec, const Vector& p_k, const Vector& u_next,
                       const Vector& v_next, double gamma) {
    return p_k + gamma * (spec.theta(u_next) + spec.B * v_next);
}

// Immutable per-run data: factorization, spectral constants, potential
// weights. Built once by prepare_run.
struct RunContext {
    double gamma = 0.0;
    double sigma = 0.5;
    GramFactorization gram;
    SpectralInfo spectral;
    PotentialConstants consts;

    RunContext(const ProblemSpec& spec, const SolverConfig& cfg)
        : gamma(cfg.gamma), sigma(cfg.sigma), gram(spec.B) {
        spectral = {gram.b_norm(), gram.min_eigen()};
        if (!(cfg.sigma > 0.0 && cfg.sigma < 1.0)) {
            throw ConfigError("solver: sigma must be in (0,1)");
        }
        if (cfg.eps_rule == EpsRule::fixed_fraction &&
            !(cfg.eps_fraction >= cfg.sigma && cfg.eps_fraction <= 1.0)) {
            throw ConfigError("solver: eps_fraction must lie in [sigma, 1]");
        }
        if (!(cfg.feas_tol > 0.0) || !(cfg.cert_tol > 0.0)) {
            throw ConfigError("solver: tolerances must be > 0");
        }
        if (cfg.max_iters < 0) throw ConfigError("solver: max_iters must be >= 0");
        const double bound = gamma_lower_bound(spec, spectral.lambda_min);
        if (!(cfg.gamma > bound)) {
            throw ConfigError("solver: gamma = " + std::to_string(cfg.gamma) +
                              " must strictly exceed the descent bound " + std::to_string(bound));
        }
        consts = potential_constants(spec, cfg.gamma, spectral);
    }
};

struct SolverState {
    Iterate w;          // w^k with w.q = q^k once compute_q ran
    Vector theta_k;     // Theta(u^k)
    Matrix jac_k;       // Jacobian of Omega at u^k
    double du_prev = 0.0, dv_prev = 0.0, dp_prev = 0.0;
    long k = 0;
};

// Default initialization: p^0 = 0 keeps the dual increments inside Im(B),
// v^0 solves the least-squares feasibility problem for the given u^0 so the
// run starts feasible in v.
inline SolverState init_state(const ProblemSpec& spec, const RunContext& run, const Vector& u0) {
    if (u0.size() != spec.n) throw std::invalid_argument("init_state: u0 dimension mismatch");
    SolverState st;
    st.w.u = u0;
    st.theta_k = spec.theta(u0);
    st.w.v = image_preimage(run.gram, spec.B, -st.theta_k).v;
    st.w.p = Vector::Zero(spec.m);
    st.w.q = Vector::Zero(spec.m);
    st.jac_k = spec.jacobian_omega(u0);
    return st;
}

inline SolverState init_state(const ProblemSpec& spec, const RunContext&, Iterate w0) {
    detail::check_iterate_dims(spec, w0, "init_state");
    SolverState st;
    st.w = std::move(w0);
    st.theta_k = spec.theta(st.w.u);
    st.jac_k = spec.jacobian_omega(st.w.u);
    return st;
}

// One full NAPP-AL iteration: q^k, step sizes, the Jacobi-style u and v
// updates (both against the iterate-k gradients), the dual ascent step, and a
// fully populated trace record. Returns nullopt on numerical breakdown.
inline std::optional<TraceRecord> iterate(const ProblemSpec& spec, const SolverConfig& cfg,
                                          const RunContext& run, SolverState& state,
                                          const SubproblemSolver& usub) {
    const double gamma = run.gamma;
    const BregmanKernel& kernel = cfg.kernel;

    Iterate& w = state.w;
    const Vector r_k = state.theta_k + spec.B * w.v;
    w.q = w.p + gamma * r_k;
    w.q_fresh = true;
    const double q_norm = w.q.norm();

    const double delta_k = step_size_delta(spec, gamma, q_norm, kernel.beta(), run.spectral);
    double eps_k = delta_k;
    switch (cfg.eps_rule) {
        case EpsRule::upper: eps_k = delta_k; break;
        case EpsRule::lower: eps_k = run.sigma * delta_k; break;
        case EpsRule::fixed_fraction: eps_k = cfg.eps_fraction * delta_k; break;
    }

    const Vector grad_u = spec.grad_u_g(w.u, w.v);
    const Vector grad_lin = grad_u + state.jac_k.transpose() * w.q;
    const Vector u_next = usub.solve(spec, kernel, w.u, grad_lin, w.q, eps_k, cfg.workers);

    const Vector grad_v_sum = spec.grad_v_g(w.u, w.v) + spec.grad_h(w.v);
    const Vector v_next = update_v(spec, run.gram, w.v, grad_v_sum, w.q, gamma);

    const Vector theta_next = spec.theta(u_next);
    const Vector r_next = theta_next + spec.B * v_next;
    const Vector p_next = w.p + gamma * r_next;

    if (!u_next.allFinite() || !v_next.allFinite() || !p_next.allFinite()) {
        return std::nullopt;
    }

    TraceRecord rec;
    rec.k = state.k;
    rec.delta_k = delta_k;
    rec.eps_k = eps_k;
    rec.q_norm = q_norm;
    rec.du = (w.u - u_next).norm();
    rec.dv = (w.v - v_next).norm();
    rec.dp = (w.p - p_next).norm();
    rec.feas = r_next.norm();
    rec.h = certificate_h(spec, gamma, run.sigma, q_norm, delta_k, kernel.grad_modulus(),
                          run.spectral);
    rec.cert_bound = rec.h * rec.dw();

    Iterate w_next;
    w_next.u = u_next;
    w_next.v = v_next;
    w_next.p = p_next;
    w_next.q = p_next + gamma * r_next;
    w_next.q_fresh = true;

    rec.xi_norm = residual_xi(spec, kernel, gamma, w, w_next, eps_k).norm();
    rec.l_gamma = spec.objective(u_next, v_next) + p_next.dot(r_next) +
                  0.5 * gamma * r_next.squaredNorm();
    rec.lambda = potential(rec.l_gamma, rec.du, rec.dv, rec.dp, run.consts, gamma);
    rec.dual_res = (spec.B.transpose() * p_next + grad_v_sum -
                    gamma * (spec.B.transpose() * (theta_next - state.theta_k)))
                       .norm() /
                   (1.0 + p_next.norm());

    state.w = std::move(w_next);
    state.theta_k = theta_next;
    state.jac_k = spec.jacobian_omega(u_next);
    state.du_prev = rec.du;
    state.dv_prev = rec.dv;
    state.dp_prev = rec.dp;
    ++state.k;
    return rec;
}

// tau_k as in the descent lemma; evaluated in extended precision since the
// upper eps rule makes the leading terms cancel exactly to 1/2.
inline double descent_margin_tau(const ProblemSpec& spec, const RunContext& run, double beta,
                                 double eps_k, double q_norm) {
    const long double lt = spec.l_theta;
    const long double bn = run.spectral.b_norm;
    const long double lmin = run.spectral.lambda_min;
    const long double g = run.gamma;
    const long double tau =
        static_cast<long double>(beta) / (2.0L * eps_k) -
        (static_cast<long double>(spec.l_g) + static_cast<long double>(q_norm) * spec.l_omega +
         g * lt * lt) /
            2.0L -
        7.0L * g * bn * bn * lt * lt / lmin - static_cast<long double>(run.consts.c1);
    return static_cast<double>(tau);
}

inline SolveResult solve(const ProblemSpec& spec, const SolverConfig& cfg, const Vector& u0,
                         const SubproblemSolver& usub = SubproblemSolver()) {
    RunContext run(spec, cfg);
    SolverState state = init_state(spec, run, u0);

    SolveResult res;
    res.initial = state.w;
    res.final = state.w;
    res.best = state.w;
    res.best_index = 0;
    res.reason = Termination::max_iters;

    bool have_prev_lambda = false;
    double prev_lambda = 0.0;

    const auto t_start = std::chrono::steady_clock::now();
    auto t_last = t_start;

    for (long k = 0; k < cfg.max_iters; ++k) {
        const Iterate w_before = state.w;
        auto rec_opt = iterate(spec, cfg, run, state, usub);
        if (!rec_opt) {
            res.reason = Termination::breakdown;
            break;
        }
        TraceRecord rec = *rec_opt;
        res.iterations = k + 1;

        if (cfg.record_timings) {
            const auto now = std::chrono::steady_clock::now();
            rec.wall_ms = std::chrono::duration<double, std::milli>(now - t_last).count();
            t_last = now;
        }

        // running invariant checks
        const double dw = rec.dw();
        if (have_prev_lambda &&
            rec.lambda - prev_lambda > -run.consts.c3 * dw * dw +
                                           1e-8 * (1.0 + std::abs(prev_lambda))) {
            ++res.violations.descent;
        }
        have_prev_lambda = true;
        prev_lambda = rec.lambda;
        if (rec.xi_norm > rec.cert_bound + 1e-8 * (1.0 + rec.cert_bound)) {
            ++res.violations.certificate;
        }
        if (rec.dual_res > 1e-8) ++res.violations.dual;
        const double tau =
            descent_margin_tau(spec, run, cfg.kernel.beta(), rec.eps_k, rec.q_norm);
        if (tau < 0.5 - 1e-8 * (1.0 + cfg.kernel.beta() / (2.0 * rec.eps_k))) {
            ++res.violations.tau;
        }

        res.sup_h = std::max(res.sup_h, rec.h);
        if (dw < res.best_dw) {
            res.best_dw = dw;
            res.best_index = k;
            res.best = w_before;
        }

        if (k % cfg.trace_stride == 0) {
            res.trace.push_back(rec);
            if (cfg.keep_iterates) res.snapshots.push_back(state.w);
        }

        if (rec.feas <= cfg.feas_tol && rec.cert_bound <= cfg.cert_tol) {
            res.reason = Termination::converged;
            break;
        }
    }

    res.final = state.w;
    res.wall_ms_total =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start)
            .count();

    if (res.trace.size() >= 50) {
        std::vector<double> lams, dws;
        lams.reserve(res.trace.size());
        dws.reserve(res.trace.size());
        for (const auto& r : res.trace) {
            lams.push_back(r.lambda);
            dws.push_back(r.dw());
        }
        res.rate = estimate_rate(lams, dws, 0.5);
        res.rate_available = true;
    }
    return res;
}

inline TraceMeta make_trace_meta(const ProblemSpec& spec, const SolverConfig& cfg,
                                 const RunContext& run) {
    TraceMeta m;
    m.gamma = run.gamma;
    m.sigma = run.sigma;
    m.beta = cfg.kernel.beta();
    m.l_kernel = cfg.kernel.grad_modulus();
    m.l_g = spec.l_g;
    m.l_h = spec.l_h;
    m.l_omega = spec.l_omega;
    m.l_theta = spec.l_theta;
    m.b_norm = run.spectral.b_norm;
    m.lambda_min = run.spectral.lambda_min;
    m.c1 = run.consts.c1;
    m.c2 = run.consts.c2;
    m.c3 = run.consts.c3;
    m.c4 = run.consts.c4;
    return m;
}

}  // namespace nappal
