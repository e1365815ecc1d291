#include "nappal/solver.hpp"
#include "nappal/problems.hpp"

#include "oracles.hpp"
#include "toy.hpp"

#include <catch2/catch.hpp>

#include <cmath>
#include <sstream>

using namespace nappal;

namespace {

// Fixture with a genuinely non-square coupling matrix so that transpose and
// Gram-solve wiring cannot hide behind B = -I.
ProblemSpec tall_b_spec() {
    ProblemSpec spec;
    spec.n = 2;
    spec.d = 2;
    spec.m = 3;
    spec.block_sizes = {2};
    spec.regularizers = {Regularizer::l1(0.2)};
    spec.boxes = {BoxSet::all(2)};
    spec.B = Matrix(3, 2);
    spec.B << 1.0, 0.2, 0.0, 1.5, 0.5, 0.3;
    Matrix M(2, 2);
    M << 0.8, -0.3, 0.4, 0.7;
    const Matrix BM = spec.B * M;
    spec.omega = [BM](const Vector& u) -> Vector { return BM * u; };
    spec.omega_jacobian = [BM](const Vector&) -> Matrix { return BM; };
    spec.l_theta = spectral_norm(BM).value;
    spec.l_omega = 0.0;
    spec.l_omega_components = Vector::Zero(3);
    Vector y(2);
    y << 0.7, -0.4;
    spec.g_value = [y](const Vector& u, const Vector& v) {
        return 0.5 * (v - y).squaredNorm() + 0.15 * u.squaredNorm();
    };
    spec.g_grad_u = [](const Vector& u, const Vector&) -> Vector { return 0.3 * u; };
    spec.g_grad_v = [y](const Vector&, const Vector& v) -> Vector { return v - y; };
    spec.l_g = 1.0;
    spec.h_value = [](const Vector& v) { return 0.05 * v.squaredNorm(); };
    spec.h_grad = [](const Vector& v) -> Vector { return 0.1 * v; };
    spec.l_h = 0.1;
    return spec;
}

SolverConfig base_config(const ProblemSpec& spec, long iters) {
    SolverConfig cfg;
    cfg.gamma = default_gamma(spec);
    cfg.max_iters = iters;
    cfg.feas_tol = 1e-12;
    cfg.cert_tol = 1e-12;  // effectively run to the budget
    return cfg;
}

}  // namespace

TEST_CASE("default gamma evaluates the descent bound") {
    auto spec = toy::scalar();
    spec.l_g = 1.0;
    spec.l_h = 1.0;
    // lambda_min(B^T B) = 1 for the toy
    REQUIRE(default_gamma(spec, 1.0) == Approx(std::sqrt(57.0) + 1.0).epsilon(1e-12));
    REQUIRE(default_gamma(spec, 1.0) == Approx(8.54983443527075).epsilon(1e-10));
    REQUIRE(default_gamma(spec, 1.05) == Approx(1.05 * (std::sqrt(57.0) + 1.0)));

    auto flat = toy::scalar();  // L_G + L_H = 0
    REQUIRE(default_gamma(flat, 1.3) == Approx(1.3));
}

TEST_CASE("step size delta against an independent evaluation") {
    ProblemSpec c1;
    c1.l_g = 1.0;
    c1.l_h = 1.0;
    c1.l_omega = 0.0;
    c1.l_theta = 1.0;
    const SpectralInfo si{1.0, 1.0};

    // denominator written out term by term
    const double denom = 1.0 + 5.0 * 0.0 + 10.0 * 1.0 + 14.0 * 10.0 * 1.0 * 1.0 / 1.0 +
                         14.0 * (1.0 + 10.0 * 1.0 * 1.0) * (1.0 + 10.0) / (10.0 * 1.0) + 1.0;
    REQUIRE(denom == Approx(321.4));
    REQUIRE(step_size_delta(c1, 10.0, 5.0, 1.0, si) == Approx(1.0 / denom));
    REQUIRE(step_size_delta(c1, 10.0, 5.0, 1.0, si) == Approx(3.1114e-3).epsilon(1e-4));

    // only the trailing +1 survives when all moduli vanish
    ProblemSpec flat;
    REQUIRE(step_size_delta(flat, 7.0, 123.0, 0.8, si) == Approx(0.8));

    // q enters through ||q|| L_Omega alone
    REQUIRE(step_size_delta(c1, 10.0, 10.0, 1.0, si) ==
            step_size_delta(c1, 10.0, 5.0, 1.0, si));
}

TEST_CASE("q update on the scalar toy") {
    auto spec = toy::scalar();
    auto w = toy::point(2, 1, 3);
    REQUIRE(compute_q(spec, w, 2.0)[0] == Approx(5.0));
    REQUIRE(w.q_fresh);

    auto feas = toy::point(1.4, 1.4, 2.2);
    REQUIRE(compute_q(spec, feas, 3.0)[0] == Approx(2.2));

    auto neg = toy::point(0, 1, 0);
    REQUIRE(compute_q(spec, neg, 2.0)[0] == Approx(-2.0));
}

TEST_CASE("v update matches the quadratic subproblem") {
    auto spec = toy::scalar();
    GramFactorization F(spec.B);
    const Vector v_k = Vector::Constant(1, 1.0);
    const Vector grad = Vector::Constant(1, 0.5);
    const Vector q = Vector::Constant(1, 5.0);

    const Vector v1 = update_v(spec, F, v_k, grad, q, 2.0);
    REQUIRE(v1[0] == Approx(3.25));

    // direct minimization of the linearized quadratic objective
    auto objective = [&](double v) {
        return 0.5 * v + 5.0 * (-v) + 1.0 * (v - 1.0) * (v - 1.0);
    };
    REQUIRE(v1[0] == Approx(oracles::grid_minimize_1d(objective, -10, 10)).epsilon(1e-6));

    // stationary input stays put
    const Vector v_same = update_v(spec, F, v_k, Vector::Constant(1, 5.0), q, 2.0);
    REQUIRE(v_same[0] == Approx(1.0));

    // doubling gamma halves the step
    const Vector v_half = update_v(spec, F, v_k, grad, q, 4.0);
    REQUIRE(v_half[0] == Approx(2.125));
}

TEST_CASE("p update") {
    auto spec = toy::scalar();
    const Vector p = Vector::Constant(1, 3.0);
    // residual u + Bv = -1.25
    const Vector p1 = update_p(spec, p, Vector::Constant(1, 1.0), Vector::Constant(1, 2.25), 2.0);
    REQUIRE(p1[0] == Approx(0.5));

    const Vector p_same =
        update_p(spec, p, Vector::Constant(1, 0.4), Vector::Constant(1, 0.4), 2.0);
    REQUIRE(p_same[0] == Approx(3.0));

    const Vector unit =
        update_p(spec, Vector::Zero(1), Vector::Constant(1, 1.7), Vector::Zero(1), 1.0);
    REQUIRE(unit[0] == Approx(1.7));
}

TEST_CASE("one iteration composed from the single-update oracles") {
    auto spec = toy::scalar(0.5);  // G = 0.5 v
    SolverConfig cfg;
    cfg.gamma = 2.0;
    RunContext run(spec, cfg);
    SolverState st = init_state(spec, run, toy::point(2, 1, 3));
    SubproblemSolver usub;

    auto rec = iterate(spec, cfg, run, st, usub);
    REQUIRE(rec.has_value());

    // oracle: q = 3 + 2 (2 - 1) = 5
    REQUIRE(rec->q_norm == Approx(5.0));
    // oracle: delta = 1 / (2 + 28 + 28 + 1) = 1/59, eps = delta under the upper rule
    const double delta = 1.0 / 59.0;
    REQUIRE(rec->delta_k == Approx(delta).epsilon(1e-12));
    REQUIRE(rec->eps_k == Approx(delta).epsilon(1e-12));
    // oracle: u1 = 2 - eps * (0 + 1 * 5)
    const double u1 = 2.0 - delta * 5.0;
    REQUIRE(st.w.u[0] == Approx(u1).epsilon(1e-12));
    // oracle: v1 = 1 - (1/gamma) (0.5 - 5) = 3.25
    REQUIRE(st.w.v[0] == Approx(3.25).epsilon(1e-12));
    // oracle: p1 = 3 + 2 (u1 - 3.25)
    REQUIRE(st.w.p[0] == Approx(3.0 + 2.0 * (u1 - 3.25)).epsilon(1e-12));
    REQUIRE(rec->du == Approx(std::abs(2.0 - u1)));
    REQUIRE(rec->dv == Approx(2.25));
}

TEST_CASE("the engine composes the published update operations") {
    SharingParams p;
    p.agents = 2;
    p.block_dims = {2, 2};
    p.shared_dim = 3;
    p.nonlinearity = 0.7;
    p.reg = Regularizer::scad(0.25, 3.7);
    p.box_lo = -2.0;
    p.box_hi = 2.0;
    p.seed = 9;
    const InstanceData data = build_sharing(p);
    auto spec = make_problem(data);

    SolverConfig cfg;
    cfg.gamma = default_gamma(spec);
    RunContext run(spec, cfg);
    SolverState st = init_state(spec, run, data.u0);
    SubproblemSolver usub;

    for (int k = 0; k < 5; ++k) {
        Iterate w = st.w;  // pre-state copy
        auto rec = iterate(spec, cfg, run, st, usub);
        REQUIRE(rec.has_value());

        const Vector q = compute_q(spec, w, run.gamma);
        REQUIRE(q.norm() == rec->q_norm);
        const double delta = step_size_delta(spec, run.gamma, q.norm(), cfg.kernel.beta(),
                                             run.spectral);
        REQUIRE(delta == rec->delta_k);
        const double eps = delta;  // upper rule
        const Vector grad_lin =
            spec.grad_u_g(w.u, w.v) + spec.jacobian_omega(w.u).transpose() * q;
        const Vector u1 = solve_u_subproblem(spec, cfg.kernel, w.u, grad_lin, eps);
        const Vector v1 = update_v(spec, run.gram, w.v,
                                   spec.grad_v_g(w.u, w.v) + spec.grad_h(w.v), q, run.gamma);
        const Vector p1 = update_p(spec, w.p, u1, v1, run.gamma);
        REQUIRE((st.w.u - u1).norm() == 0.0);
        REQUIRE((st.w.v - v1).norm() == 0.0);
        REQUIRE((st.w.p - p1).norm() == 0.0);
    }
}

TEST_CASE("fixed points are preserved exactly") {
    auto spec = toy::scalar();
    SolverConfig cfg;
    cfg.gamma = 1.5;
    RunContext run(spec, cfg);
    SolverState st = init_state(spec, run, toy::point(0.8, 0.8, 0.0));
    SubproblemSolver usub;

    for (int k = 0; k < 5; ++k) {
        auto rec = iterate(spec, cfg, run, st, usub);
        REQUIRE(rec.has_value());
        REQUIRE(rec->dw() == 0.0);
        REQUIRE(st.w.u[0] == 0.8);
        REQUIRE(st.w.v[0] == 0.8);
        REQUIRE(st.w.p[0] == 0.0);
    }
}

TEST_CASE("worker count does not change the iterates") {
    SharingParams p;
    p.agents = 4;
    p.block_dims = {3, 3, 3, 3};
    p.shared_dim = 5;
    p.nonlinearity = 0.5;
    p.reg = Regularizer::mcp(0.3, 4.0);
    p.box_lo = -2.0;
    p.box_hi = 2.0;
    p.seed = 7;
    const InstanceData data = build_sharing(p);
    auto spec = make_problem(data);

    auto cfg = base_config(spec, 200);
    SolveResult r1 = solve(spec, cfg, data.u0);
    cfg.workers = 8;
    SolveResult r8 = solve(spec, cfg, data.u0);

    REQUIRE(r1.trace.size() == r8.trace.size());
    REQUIRE((r1.final.u - r8.final.u).norm() == 0.0);
    REQUIRE((r1.final.v - r8.final.v).norm() == 0.0);
    REQUIRE((r1.final.p - r8.final.p).norm() == 0.0);

    std::ostringstream s1, s8;
    RunContext run(spec, cfg);
    write_trace(s1, make_trace_meta(spec, cfg, run), r1.trace);
    write_trace(s8, make_trace_meta(spec, cfg, run), r8.trace);
    REQUIRE(s1.str() == s8.str());
}

TEST_CASE("a registered solver replicating the closed form leaves runs bit-identical") {
    SharingParams p;
    p.agents = 3;
    p.block_dims = {2, 2, 2};
    p.shared_dim = 4;
    p.nonlinearity = 0.5;
    p.reg = Regularizer::mcp(0.3, 4.0);
    p.box_lo = -2.0;
    p.box_hi = 2.0;
    p.seed = 4;
    const InstanceData data = build_sharing(p);
    auto spec = make_problem(data);
    auto cfg = base_config(spec, 300);

    SubproblemSolver usub;
    usub.register_block_solver(1, [](const BlockContext& ctx) -> Vector {
        Vector z(ctx.u_block.size());
        for (Index j = 0; j < z.size(); ++j) {
            const double t = ctx.eps / ctx.kernel.weight(ctx.offset + j);
            z[j] = prox_separable(ctx.reg, t, ctx.u_block[j] - t * ctx.grad_block[j],
                                  ctx.box.lo[j], ctx.box.hi[j]);
        }
        return z;
    });

    SolveResult with_cb = solve(spec, cfg, data.u0, usub);
    SolveResult without = solve(spec, cfg, data.u0);
    RunContext run(spec, cfg);
    std::ostringstream a, b;
    write_trace(a, make_trace_meta(spec, cfg, run), with_cb.trace);
    write_trace(b, make_trace_meta(spec, cfg, run), without.trace);
    REQUIRE(a.str() == b.str());
    REQUIRE((with_cb.final.u - without.final.u).norm() == 0.0);
}

TEST_CASE("empty budget returns the initial point") {
    auto spec = toy::scalar();
    SolverConfig cfg;
    cfg.gamma = 2.0;
    cfg.max_iters = 0;
    SolveResult res = solve(spec, cfg, Vector::Constant(1, 1.7));
    REQUIRE(res.reason == Termination::max_iters);
    REQUIRE(res.iterations == 0);
    REQUIRE(res.final.u[0] == Approx(1.7));
    // default initialization makes v feasible for the given u
    REQUIRE(res.final.v[0] == Approx(1.7));
    REQUIRE(res.final.p.norm() == 0.0);
    REQUIRE(res.trace.empty());
}

TEST_CASE("same seed twice gives identical traces") {
    SharingParams p;
    p.agents = 2;
    p.block_dims = {2, 2};
    p.shared_dim = 3;
    p.nonlinearity = 0.4;
    p.reg = Regularizer::l1(0.2);
    p.seed = 7;
    const InstanceData d1 = build_sharing(p);
    const InstanceData d2 = build_sharing(p);
    auto s1 = make_problem(d1);
    auto s2 = make_problem(d2);
    auto cfg = base_config(s1, 300);

    SolveResult r1 = solve(s1, cfg, d1.u0);
    SolveResult r2 = solve(s2, cfg, d2.u0);
    std::ostringstream o1, o2;
    RunContext run(s1, cfg);
    write_trace(o1, make_trace_meta(s1, cfg, run), r1.trace);
    write_trace(o2, make_trace_meta(s2, cfg, run), r2.trace);
    REQUIRE(o1.str() == o2.str());
}

TEST_CASE("eps stays inside [sigma delta, delta] for every rule") {
    SharingParams p;
    p.agents = 2;
    p.block_dims = {2, 2};
    p.shared_dim = 3;
    p.nonlinearity = 0.6;
    p.reg = Regularizer::scad(0.3, 3.7);
    p.box_lo = -2.0;
    p.box_hi = 2.0;
    const InstanceData data = build_sharing(p);
    auto spec = make_problem(data);

    for (EpsRule rule : {EpsRule::upper, EpsRule::lower, EpsRule::fixed_fraction}) {
        auto cfg = base_config(spec, 400);
        cfg.eps_rule = rule;
        cfg.eps_fraction = 0.75;
        SolveResult res = solve(spec, cfg, data.u0);
        for (const auto& rec : res.trace) {
            REQUIRE(rec.eps_k >= cfg.sigma * rec.delta_k - 1e-15);
            REQUIRE(rec.eps_k <= rec.delta_k + 1e-15);
        }
        // the guarantees hold for every admissible step choice
        REQUIRE(res.violations.total() == 0);
    }
}

TEST_CASE("diagonal kernels keep every running invariant") {
    SharingParams p;
    p.agents = 3;
    p.block_dims = {2, 3, 2};
    p.shared_dim = 4;
    p.nonlinearity = 0.5;
    p.reg = Regularizer::mcp(0.3, 4.0);
    p.box_lo = -2.0;
    p.box_hi = 2.0;
    p.seed = 5;
    const InstanceData data = build_sharing(p);
    auto spec = make_problem(data);

    Vector w(spec.n);
    Rng rng(71);
    for (Index j = 0; j < spec.n; ++j) w[j] = rng.uniform(0.5, 2.5);
    auto cfg = base_config(spec, 1500);
    cfg.kernel = BregmanKernel::diagonal(w);
    SolveResult res = solve(spec, cfg, data.u0);
    REQUIRE(res.iterations == 1500);
    REQUIRE(res.violations.descent == 0);
    REQUIRE(res.violations.certificate == 0);
    REQUIRE(res.violations.dual == 0);
    REQUIRE(res.violations.tau == 0);
}

TEST_CASE("nonlinear constraints through a tall coupling matrix") {
    // Theta(u) = B tanh(M u) keeps Im(Theta) inside Im(B) while exercising
    // nonzero curvature moduli against a non-identity Gram matrix.
    ProblemSpec spec;
    spec.n = 2;
    spec.d = 2;
    spec.m = 3;
    spec.block_sizes = {2};
    spec.regularizers = {Regularizer::l1(0.1)};
    spec.boxes = {BoxSet::all(2)};
    spec.B = Matrix(3, 2);
    spec.B << 1.0, 0.2, 0.0, 1.5, 0.5, 0.3;
    Matrix M(2, 2);
    M << 0.9, -0.2, 0.3, 0.8;
    const Matrix B = spec.B;
    spec.omega = [B, M](const Vector& u) -> Vector {
        return B * (M * u).array().tanh().matrix();
    };
    spec.omega_jacobian = [B, M](const Vector& u) -> Matrix {
        const Vector s = 1.0 - (M * u).array().tanh().square();
        return B * (s.asDiagonal() * M);
    };
    spec.l_theta = spectral_norm(spec.B).value * spectral_norm(M).value;
    spec.l_omega_components = Vector(3);
    for (Index j = 0; j < 3; ++j) {
        double sum = 0.0;
        for (Index c = 0; c < 2; ++c) {
            sum += std::abs(spec.B(j, c)) * kTanhCurvatureBound * M.row(c).squaredNorm();
        }
        spec.l_omega_components[j] = sum;
    }
    spec.l_omega = spec.l_omega_components.sum();
    Vector y(2);
    y << 0.4, -0.6;
    spec.g_value = [y](const Vector&, const Vector& v) { return 0.5 * (v - y).squaredNorm(); };
    spec.g_grad_v = [y](const Vector&, const Vector& v) -> Vector { return v - y; };
    spec.g_grad_u = [](const Vector&, const Vector&) -> Vector { return Vector::Zero(2); };
    spec.l_g = 1.0;

    REQUIRE(check_gradients(spec, 100, 81).hard_ok());
    REQUIRE(check_descent_inequalities(spec, 400, 81).hard_ok());

    SolverConfig cfg;
    cfg.gamma = default_gamma(spec);
    cfg.max_iters = 1200;
    cfg.feas_tol = 1e-12;
    cfg.cert_tol = 1e-12;
    Vector u0(2);
    u0 << 0.9, -1.1;
    SolveResult res = solve(spec, cfg, u0);
    REQUIRE(res.violations.descent == 0);
    REQUIRE(res.violations.certificate == 0);
    REQUIRE(res.violations.dual == 0);
    REQUIRE(res.violations.tau == 0);
}

TEST_CASE("running invariants hold on a tall-B instance") {
    auto spec = tall_b_spec();
    auto cfg = base_config(spec, 800);
    cfg.keep_iterates = true;
    Vector u0(2);
    u0 << 1.3, -0.9;
    SolveResult res = solve(spec, cfg, u0);

    REQUIRE(res.iterations > 0);
    REQUIRE(res.violations.descent == 0);
    REQUIRE(res.violations.certificate == 0);
    REQUIRE(res.violations.dual == 0);
    REQUIRE(res.violations.tau == 0);

    // dual increments stay inside Im(B): ||B^T dp||^2 >= lambda_min ||dp||^2
    RunContext run(spec, cfg);
    const Vector* prev_p = &res.initial.p;
    for (const auto& snap : res.snapshots) {
        const Vector dp = snap.p - *prev_p;
        const double lhs = (spec.B.transpose() * dp).squaredNorm();
        REQUIRE(lhs >= run.spectral.lambda_min * dp.squaredNorm() - 1e-8);
        prev_p = &snap.p;
    }

    // Lambda decreases monotonically along the run
    for (std::size_t i = 1; i < res.trace.size(); ++i) {
        REQUIRE(res.trace[i].lambda <=
                res.trace[i - 1].lambda + 1e-8 * (1.0 + std::abs(res.trace[i - 1].lambda)));
    }
}

TEST_CASE("convex QP specialization matches the direct KKT solve") {
    SharingParams p;
    p.agents = 2;
    p.block_dims = {2, 2};
    p.shared_dim = 6;
    p.nonlinearity = 0.0;
    p.reg = Regularizer::zero();
    p.seed = 3;
    const InstanceData data = build_sharing(p);
    auto spec = make_problem(data);

    SolverConfig cfg;
    cfg.gamma = default_gamma(spec);
    cfg.max_iters = 100000;
    cfg.feas_tol = 1e-7;
    cfg.cert_tol = 1e-6;
    SolveResult res = solve(spec, cfg, data.u0);
    REQUIRE(res.reason == Termination::converged);

    const auto kkt = oracles::sharing_qp_kkt(data);
    REQUIRE((res.final.u - kkt.u).lpNorm<Eigen::Infinity>() <= 1e-4);
    REQUIRE((res.final.v - kkt.v).lpNorm<Eigen::Infinity>() <= 1e-4);

    // Lambda is monotone on the convex instance
    REQUIRE(res.violations.descent == 0);
}

TEST_CASE("non-finite evaluations end in breakdown") {
    auto spec = toy::scalar();
    spec.g_value = [](const Vector&, const Vector&) { return 0.0; };
    spec.g_grad_u = [](const Vector&, const Vector&) -> Vector { return Vector::Zero(1); };
    spec.g_grad_v = [](const Vector&, const Vector&) -> Vector {
        return Vector::Constant(1, std::numeric_limits<double>::quiet_NaN());
    };
    SolverConfig cfg;
    cfg.gamma = 2.0;
    cfg.max_iters = 10;
    SolveResult res = solve(spec, cfg, Vector::Constant(1, 1.0));
    REQUIRE(res.reason == Termination::breakdown);
}

TEST_CASE("gamma below the descent bound is rejected") {
    auto spec = toy::scalar();
    spec.l_g = 1.0;
    spec.l_h = 1.0;
    SolverConfig cfg;
    cfg.gamma = 0.9 * (std::sqrt(57.0) + 1.0);
    REQUIRE_THROWS_AS(RunContext(spec, cfg), ConfigError);
    cfg.gamma = 1.1 * (std::sqrt(57.0) + 1.0);
    REQUIRE_NOTHROW(RunContext(spec, cfg));
}
