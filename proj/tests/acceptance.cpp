// Acceptance suite: end-to-end verification of the solver's guarantees at
// desk scale. Each criterion prints one PASS/FAIL line; the exit code is the
// number of failures.

#include "nappal/nappal.hpp"

#include "oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

using namespace nappal;

namespace {

struct CriterionResult {
    int id;
    std::string label;
    bool pass = true;
    std::string detail;
};

std::vector<CriterionResult> g_results;

void record(int id, const std::string& label, bool pass, const std::string& detail) {
    g_results.push_back({id, label, pass, detail});
}

struct Run {
    std::string name;
    InstanceData data;
    ProblemSpec spec;
    SolverConfig cfg;
    SolveResult res;
    PotentialConstants consts;
    SpectralInfo spectral;
    double beta = 1.0;
};

SolverConfig standard_config(const ProblemSpec& spec) {
    SolverConfig cfg;
    cfg.gamma = default_gamma(spec);  // 1.05 safety over the descent bound
    cfg.sigma = 0.5;
    cfg.eps_rule = EpsRule::upper;
    cfg.max_iters = 20000;
    cfg.feas_tol = 1e-9;
    cfg.cert_tol = 1e-7;
    cfg.workers = 1;
    return cfg;
}

Run make_run(const std::string& name, InstanceData data) {
    Run r;
    r.name = name;
    r.data = std::move(data);
    r.spec = make_problem(r.data);
    r.cfg = standard_config(r.spec);
    RunContext ctx(r.spec, r.cfg);
    r.consts = ctx.consts;
    r.spectral = ctx.spectral;
    r.beta = r.cfg.kernel.beta();
    r.res = solve(r.spec, r.cfg, r.data.u0);
    return r;
}

InstanceData sharing_instance(std::uint64_t seed) {
    SharingParams p;
    p.agents = 4;
    p.block_dims = {3, 3, 3, 3};
    p.shared_dim = 5;
    p.nonlinearity = 0.5;
    p.reg = Regularizer::mcp(0.3, 4.0);
    p.box_lo = -2.0;
    p.box_hi = 2.0;
    p.seed = seed;
    return build_sharing(p);
}

InstanceData erm_instance(std::uint64_t seed) {
    ErmParams p;
    p.predictors = 10;
    p.samples = 20;
    p.reg = Regularizer::mcp(0.1, 4.0);
    p.feature_scale = 1.0;
    p.seed = seed;
    return build_erm(p);
}

InstanceData qp_instance() {
    SharingParams p;
    p.agents = 2;
    p.block_dims = {2, 2};
    p.shared_dim = 6;
    p.nonlinearity = 0.0;
    p.reg = Regularizer::zero();
    p.seed = 3;
    return build_sharing(p);
}

InstanceData tiny_instance() {
    SharingParams p;
    p.agents = 1;
    p.block_dims = {1};
    p.shared_dim = 1;
    p.nonlinearity = 0.5;
    p.reg = Regularizer::mcp(0.3, 4.0);
    p.box_lo = -2.0;
    p.box_hi = 2.0;
    p.seed = 1;
    return build_sharing(p);
}

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.3g", x);
    return buf;
}

}  // namespace

int main() {
    std::vector<Run> runs;  // the ten shared nonconvex runs
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        runs.push_back(make_run("sharing seed " + std::to_string(seed), sharing_instance(seed)));
    }
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        runs.push_back(make_run("erm seed " + std::to_string(seed), erm_instance(seed)));
    }

    // ---- criterion 1: per-iteration potential descent ----
    {
        long violations = 0;
        double max_wall = 0.0;
        std::string worst;
        for (const auto& r : runs) {
            long v = 0;
            for (std::size_t i = 1; i < r.res.trace.size(); ++i) {
                const double dw = r.res.trace[i].dw();
                const double lhs = r.res.trace[i].lambda - r.res.trace[i - 1].lambda;
                const double rhs = -r.consts.c3 * dw * dw +
                                   1e-8 * (1.0 + std::abs(r.res.trace[i - 1].lambda));
                if (lhs > rhs) ++v;
            }
            if (v > 0 && worst.empty()) worst = r.name;
            violations += v;
            max_wall = std::max(max_wall, r.res.wall_ms_total);
        }
        record(1, "potential descent margin on 10 nonconvex runs",
               violations == 0 && max_wall <= 60000.0,
               "violations=" + std::to_string(violations) + " max_wall_ms=" + fmt(max_wall) +
                   (worst.empty() ? "" : " first_bad=" + worst));
    }

    // ---- criterion 2: dual update identity ----
    {
        long violations = 0;
        for (const auto& r : runs) {
            for (const auto& rec : r.res.trace) {
                if (rec.dual_res > 1e-8) ++violations;
            }
        }
        record(2, "dual update identity on every iteration", violations == 0,
               "violations=" + std::to_string(violations));
    }

    // ---- criterion 3: certificate soundness and step margin ----
    {
        long cert_viol = 0, tau_viol = 0;
        for (const auto& r : runs) {
            RunContext ctx(r.spec, r.cfg);
            for (const auto& rec : r.res.trace) {
                const double bound = rec.h * rec.dw();
                if (rec.xi_norm > bound + 1e-8 * (1.0 + bound)) ++cert_viol;
                const double tau =
                    descent_margin_tau(r.spec, ctx, r.beta, rec.eps_k, rec.q_norm);
                if (tau < 0.5 - 1e-8 * (1.0 + r.beta / (2.0 * rec.eps_k))) ++tau_viol;
            }
        }
        record(3, "subgradient certificate ||xi|| <= h ||dw|| and tau_k >= 1/2",
               cert_viol == 0 && tau_viol == 0,
               "cert_violations=" + std::to_string(cert_viol) +
                   " tau_violations=" + std::to_string(tau_viol));
    }

    // ---- criterion 4: convex QP feasibility and KKT agreement ----
    InstanceData qp_data = qp_instance();
    ProblemSpec qp_spec = make_problem(qp_data);
    SolverConfig qp_cfg = standard_config(qp_spec);
    qp_cfg.max_iters = 100000;
    qp_cfg.feas_tol = 1e-7;
    qp_cfg.cert_tol = 1e-6;
    SolveResult qp_res = solve(qp_spec, qp_cfg, qp_data.u0);
    {
        const bool converged = qp_res.reason == Termination::converged;
        const double feas = qp_res.trace.empty() ? 1.0 : qp_res.trace.back().feas;
        const double xi = qp_res.trace.empty() ? 1.0 : qp_res.trace.back().xi_norm;
        const auto kkt = oracles::sharing_qp_kkt(qp_data);
        const double du = (qp_res.final.u - kkt.u).lpNorm<Eigen::Infinity>();
        const double dv = (qp_res.final.v - kkt.v).lpNorm<Eigen::Infinity>();
        record(4, "convex QP reaches feasibility and the KKT solution",
               converged && qp_res.iterations <= 100000 && feas <= 1e-6 && xi <= 1e-5 &&
                   du <= 1e-4 && dv <= 1e-4,
               "iters=" + std::to_string(qp_res.iterations) + " feas=" + fmt(feas) +
                   " xi=" + fmt(xi) + " du_inf=" + fmt(du) + " dv_inf=" + fmt(dv));
    }

    // ---- criterion 5: o(1/sqrt(k)) signature and telescoping budget ----
    {
        bool ok = true;
        std::string detail;
        for (const auto& r : runs) {
            std::vector<double> lam, dw;
            for (const auto& rec : r.res.trace) {
                lam.push_back(rec.lambda);
                dw.push_back(rec.dw());
            }
            const auto est = estimate_rate(lam, dw, 0.5, 0.05);
            const double slack = telescoping_slack(lam, dw, r.consts.c3);
            if (!est.sqrtk_tail_nonincreasing || slack < -1e-6) {
                ok = false;
                detail += r.name + "(band=" + fmt(est.sqrtk_band) + ",slack=" + fmt(slack) + ") ";
            }
        }
        record(5, "sqrt(k)-scaled best step is tail-decreasing with bounded budget", ok,
               ok ? "all 10 runs inside the 5% band" : detail);
    }

    // ---- criterion 6: empirical linear rate on the QP ----
    {
        std::vector<double> lam, dw;
        for (const auto& rec : qp_res.trace) {
            lam.push_back(rec.lambda);
            dw.push_back(rec.dw());
        }
        bool ok = lam.size() >= 50;
        RateEstimate est;
        if (ok) {
            est = estimate_rate(lam, dw, 0.5);
            ok = !est.below_floor && est.r_squared > 0.99 && est.slope < 0.0;
        }
        record(6, "log potential gap fits a geometric decay on the QP", ok,
               "r2=" + fmt(est.r_squared) + " slope=" + fmt(est.slope) +
                   (est.below_floor ? " (below floor)" : ""));
    }

    // ---- criterion 7: prox closed forms against the grid oracle ----
    {
        const auto t0 = std::chrono::steady_clock::now();
        Rng rng(2024);
        long mismatches = 0;
        const PenaltyKind kinds[] = {PenaltyKind::zero, PenaltyKind::l1, PenaltyKind::scad,
                                     PenaltyKind::mcp, PenaltyKind::capped_l1};
        for (PenaltyKind kind : kinds) {
            for (int trial = 0; trial < 1000; ++trial) {
                Regularizer reg;
                reg.kind = kind;
                reg.lambda = rng.uniform(0.0, 2.0);
                reg.a = rng.uniform(2.1, 5.0);
                reg.theta = rng.uniform(0.5, 5.0);
                reg.alpha = rng.uniform(0.1, 3.0);
                double t = rng.uniform(0.01, 1.5);
                if (kind == PenaltyKind::mcp) t = rng.uniform(0.01, 0.95) * reg.theta;
                if (kind == PenaltyKind::scad) t = rng.uniform(0.01, 0.95) * (reg.a - 1.0);
                const double x = rng.uniform(-6.0, 6.0);
                double lo = -std::numeric_limits<double>::infinity();
                double hi = std::numeric_limits<double>::infinity();
                const auto boxed = rng.next_u64() % 3;
                if (boxed == 1) {
                    lo = rng.uniform(-6.0, 5.0);
                    hi = lo + rng.uniform(0.0, 6.0);
                } else if (boxed == 2) {
                    lo = rng.uniform(-6.0, 3.0);
                }
                const double z = prox_separable(reg, t, x, lo, hi);
                const double z_ref = oracles::prox_grid_oracle(reg, t, x, lo, hi);
                auto obj = [&](double w) {
                    return (w - x) * (w - x) / (2.0 * t) + reg.value(w);
                };
                if (std::abs(z - z_ref) > 1e-6 && std::abs(obj(z) - obj(z_ref)) > 1e-10) {
                    ++mismatches;
                }
            }
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        record(7, "5000 random prox draws match the grid+golden-section oracle",
               mismatches == 0 && secs <= 30.0,
               "mismatches=" + std::to_string(mismatches) + " wall_s=" + fmt(secs));
    }

    // ---- criterion 8: analytic gradients and moduli on all shipped instances ----
    {
        bool ok = true;
        std::string detail;
        std::vector<std::pair<std::string, ProblemSpec>> shipped;
        for (const auto& r : runs) shipped.emplace_back(r.name, r.spec);
        shipped.emplace_back("qp", qp_spec);
        shipped.emplace_back("tiny", make_problem(tiny_instance()));
        std::uint64_t check_seed = 101;
        for (const auto& [name, spec] : shipped) {
            const auto grads = check_gradients(spec, 100, check_seed);
            const auto descents = check_descent_inequalities(spec, 300, check_seed + 1);
            check_seed += 2;
            if (!grads.hard_ok() || !descents.hard_ok()) {
                ok = false;
                detail += name + " ";
            }
        }
        record(8, "finite-difference gradients and descent inequalities", ok,
               ok ? "12 instances clean" : "failing: " + detail);
    }

    // ---- criterion 9: traces are byte-identical across worker counts ----
    {
        bool ok = true;
        std::string detail;
        for (auto& r : runs) {
            SolverConfig cfg8 = r.cfg;
            cfg8.workers = 8;
            SolveResult res8 = solve(r.spec, cfg8, r.data.u0);
            RunContext ctx(r.spec, r.cfg);
            std::ostringstream a, b;
            write_trace(a, make_trace_meta(r.spec, r.cfg, ctx), r.res.trace);
            write_trace(b, make_trace_meta(r.spec, cfg8, ctx), res8.trace);
            if (a.str() != b.str()) {
                ok = false;
                detail += r.name + " ";
            }
        }
        record(9, "worker counts 1 and 8 give byte-identical traces", ok,
               ok ? "all 10 runs identical" : "diverged: " + detail);
    }

    // ---- criterion 10: tiny-instance limit point is brute-force stationary ----
    {
        InstanceData data = tiny_instance();
        ProblemSpec spec = make_problem(data);
        SolverConfig cfg = standard_config(spec);
        cfg.max_iters = 100000;
        SolveResult res = solve(spec, cfg, data.u0);

        GridSpec grid;
        grid.u_lo = Vector::Constant(1, -2.0);
        grid.u_hi = Vector::Constant(1, 2.0);
        grid.u_points = 401;  // resolution 1e-2
        grid.v_lo = Vector::Constant(1, -3.0);
        grid.v_hi = Vector::Constant(1, 3.0);
        grid.v_points = 601;
        grid.threshold = 0.05;
        const auto candidates = brute_force_stationary(spec, grid);
        double best = std::numeric_limits<double>::infinity();
        for (const auto& c : candidates) {
            best = std::min(best, std::max(std::abs(c.u[0] - res.final.u[0]),
                                           std::abs(c.v[0] - res.final.v[0])));
        }
        record(10, "tiny-instance limit sits on a brute-force stationary candidate",
               !candidates.empty() && best <= 1e-2 + 1e-9,
               "candidates=" + std::to_string(candidates.size()) + " dist=" + fmt(best));
    }

    int failures = 0;
    for (const auto& r : g_results) {
        if (!r.pass) ++failures;
        std::printf("%s  criterion %2d: %s  [%s]\n", r.pass ? "PASS" : "FAIL", r.id,
                    r.label.c_str(), r.detail.c_str());
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(g_results.size()) - failures,
                g_results.size());
    return failures;
}
