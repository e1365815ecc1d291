// Experiment front end: build an instance from a config file, run the solver,
// and emit trace/summary files, plus offline validation and trace reports.

#include "nappal/nappal.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace nappal;

namespace {

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

void write_vector_line(std::ostream& os, const char* key, const Vector& v) {
    os << "  " << key << " =";
    for (Index j = 0; j < v.size(); ++j) os << " " << fmt(v[j]);
    os << "\n";
}

void write_summary(std::ostream& os, const Experiment& exp, const RunContext& run,
                   const SolveResult& res) {
    const double bound = gamma_lower_bound(exp.spec, run.spectral.lambda_min);
    os << "summary {\n";
    os << "  termination = " << termination_name(res.reason) << "\n";
    os << "  iterations = " << res.iterations << "\n";
    os << "  recorded_rows = " << res.trace.size() << "\n";
    if (!res.trace.empty()) {
        os << "  final_l_gamma = " << fmt(res.trace.back().l_gamma) << "\n";
        os << "  final_lambda = " << fmt(res.trace.back().lambda) << "\n";
        os << "  final_feas_residual = " << fmt(res.trace.back().feas) << "\n";
        os << "  final_xi_norm = " << fmt(res.trace.back().xi_norm) << "\n";
    }
    os << "  best_index = " << res.best_index << "\n";
    os << "  best_dw = " << fmt(res.best_dw) << "\n";
    os << "  sup_h = " << fmt(res.sup_h) << "\n";
    os << "  wall_ms_total = " << fmt(res.wall_ms_total) << "\n";
    os << "  descent_violations = " << res.violations.descent << "\n";
    os << "  certificate_violations = " << res.violations.certificate << "\n";
    os << "  dual_identity_violations = " << res.violations.dual << "\n";
    os << "  tau_violations = " << res.violations.tau << "\n";
    os << "}\n";
    os << "constants {\n";
    os << "  gamma = " << fmt(run.gamma) << "\n";
    os << "  gamma_bound = " << fmt(bound) << "\n";
    os << "  sigma = " << fmt(run.sigma) << "\n";
    os << "  c1 = " << fmt(run.consts.c1) << "\n";
    os << "  c2 = " << fmt(run.consts.c2) << "\n";
    os << "  c3 = " << fmt(run.consts.c3) << "\n";
    os << "  c4 = " << fmt(run.consts.c4) << "\n";
    os << "  b_norm = " << fmt(run.spectral.b_norm) << "\n";
    os << "  lambda_min = " << fmt(run.spectral.lambda_min) << "\n";
    os << "  l_g = " << fmt(exp.spec.l_g) << "\n";
    os << "  l_h = " << fmt(exp.spec.l_h) << "\n";
    os << "  l_omega = " << fmt(exp.spec.l_omega) << "\n";
    os << "  l_theta = " << fmt(exp.spec.l_theta) << "\n";
    os << "}\n";
    if (res.rate_available) {
        os << "rate {\n";
        os << "  alpha = " << fmt(res.rate.alpha) << "\n";
        os << "  slope = " << fmt(res.rate.slope) << "\n";
        os << "  r_squared = " << fmt(res.rate.r_squared) << "\n";
        os << "  geometric = " << (res.rate.geometric ? "true" : "false") << "\n";
        os << "  below_floor = " << (res.rate.below_floor ? "true" : "false") << "\n";
        os << "  sqrtk_tail_nonincreasing = "
           << (res.rate.sqrtk_tail_nonincreasing ? "true" : "false") << "\n";
        os << "  sqrtk_band = " << fmt(res.rate.sqrtk_band) << "\n";
        os << "}\n";
    }
    os << "iterates {\n";
    write_vector_line(os, "final_u", res.final.u);
    write_vector_line(os, "final_v", res.final.v);
    write_vector_line(os, "final_p", res.final.p);
    write_vector_line(os, "best_u", res.best.u);
    write_vector_line(os, "best_v", res.best.v);
    write_vector_line(os, "best_p", res.best.p);
    os << "}\n";
}

std::string resolve(const std::string& out_dir, const std::string& path) {
    if (out_dir.empty() || fs::path(path).is_absolute()) return path;
    return (fs::path(out_dir) / path).string();
}

ExperimentOverrides make_overrides(const std::optional<long>& seed,
                                   const std::optional<int>& workers,
                                   const std::optional<long>& stride) {
    ExperimentOverrides over;
    if (seed) over.seed = static_cast<std::uint64_t>(*seed);
    if (workers) over.workers = *workers;
    if (stride) over.trace_stride = *stride;
    return over;
}

int cmd_solve(const std::string& config_path, const std::string& out_dir,
              const ExperimentOverrides& over) {
    Experiment exp;
    try {
        exp = load_experiment(parse_config_file(config_path), over);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }

    try {
        const ValidationReport rep = validate_problem(exp.spec);
        if (!rep.hard_ok()) {
            std::cerr << "instance rejected by structural validation:\n" << rep.to_string();
            return 1;
        }
        RunContext run(exp.spec, exp.solver);  // throws when gamma misses the bound

        if (!out_dir.empty()) fs::create_directories(out_dir);
        SolveResult res = solve(exp.spec, exp.solver, exp.data.u0);

        const std::string trace_path = resolve(out_dir, exp.trace_path);
        write_trace_file(trace_path, make_trace_meta(exp.spec, exp.solver, run), res.trace);
        if (!exp.instance_path.empty()) {
            save_instance_file(resolve(out_dir, exp.instance_path), exp.data);
        }

        const std::string summary_path = resolve(out_dir, exp.summary_path);
        std::ofstream sum(summary_path, std::ios::binary);
        if (!sum) {
            std::cerr << "cannot write summary file: " << summary_path << "\n";
            return 1;
        }
        write_summary(sum, exp, run, res);

        std::cout << "termination: " << termination_name(res.reason) << " after "
                  << res.iterations << " iterations\n";
        std::cout << "trace: " << trace_path << "\nsummary: " << summary_path << "\n";

        switch (res.reason) {
            case Termination::converged: return 0;
            case Termination::max_iters: return 2;
            case Termination::breakdown: return 3;
        }
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

int cmd_validate(const std::string& config_path, const ExperimentOverrides& over) {
    try {
        Experiment exp = load_experiment(parse_config_file(config_path), over);
        ValidationReport structural = validate_problem(exp.spec);
        ValidationReport descent = check_descent_inequalities(exp.spec, 500, exp.data.seed);
        std::cout << structural.to_string() << descent.to_string();
        return structural.hard_ok() && descent.hard_ok() ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }
}

int cmd_report(const std::string& trace_path) {
    TraceFile tf;
    try {
        tf = read_trace_file(trace_path);
    } catch (const std::exception& e) {
        std::cerr << "trace error: " << e.what() << "\n";
        return 1;
    }
    if (tf.records.empty()) {
        std::cerr << "trace error: no recorded iterations in " << trace_path << "\n";
        return 1;
    }
    const auto& rows = tf.records;
    const TraceMeta& m = tf.meta;

    double min_feas = rows.front().feas;
    std::size_t best = 0;
    long descent_viol = 0, cert_viol = 0, dual_viol = 0, tau_viol = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        min_feas = std::min(min_feas, rows[i].feas);
        if (rows[i].dw() < rows[best].dw()) best = i;
        const double bound = rows[i].h * rows[i].dw();
        if (rows[i].xi_norm > bound + 1e-8 * (1.0 + bound)) ++cert_viol;
        if (rows[i].dual_res > 1e-8) ++dual_viol;
        const long double tau =
            static_cast<long double>(m.beta) / (2.0L * rows[i].eps_k) -
            (static_cast<long double>(m.l_g) +
             static_cast<long double>(rows[i].q_norm) * m.l_omega +
             static_cast<long double>(m.gamma) * m.l_theta * m.l_theta) /
                2.0L -
            7.0L * m.gamma * m.b_norm * m.b_norm * m.l_theta * m.l_theta / m.lambda_min -
            static_cast<long double>(m.c1);
        if (static_cast<double>(tau) < 0.5 - 1e-8 * (1.0 + m.beta / (2.0 * rows[i].eps_k))) {
            ++tau_viol;
        }
        if (i > 0 && rows[i].k == rows[i - 1].k + 1) {
            const double dw = rows[i].dw();
            if (rows[i].lambda - rows[i - 1].lambda >
                -m.c3 * dw * dw + 1e-8 * (1.0 + std::abs(rows[i - 1].lambda))) {
                ++descent_viol;
            }
        }
    }

    std::cout << "rows: " << rows.size() << "\n";
    std::cout << "final_feas_residual: " << fmt(rows.back().feas) << "\n";
    std::cout << "min_feas_residual: " << fmt(min_feas) << "\n";
    std::cout << "final_lambda: " << fmt(rows.back().lambda) << "\n";
    std::cout << "best_index: " << rows[best].k << "\n";
    std::cout << "best_dw: " << fmt(rows[best].dw()) << "\n";
    std::cout << "descent_violations: " << descent_viol << "\n";
    std::cout << "certificate_violations: " << cert_viol << "\n";
    std::cout << "dual_identity_violations: " << dual_viol << "\n";
    std::cout << "tau_violations: " << tau_viol << "\n";

    if (rows.size() >= 50) {
        std::vector<double> lams, dws;
        for (const auto& r : rows) {
            lams.push_back(r.lambda);
            dws.push_back(r.dw());
        }
        const RateEstimate rate = estimate_rate(lams, dws, 0.5);
        std::cout << "rate_alpha: " << fmt(rate.alpha) << "\n";
        std::cout << "rate_slope: " << fmt(rate.slope) << "\n";
        std::cout << "rate_r_squared: " << fmt(rate.r_squared) << "\n";
        std::cout << "rate_geometric: " << (rate.geometric ? "true" : "false") << "\n";
        std::cout << "rate_below_floor: " << (rate.below_floor ? "true" : "false") << "\n";
        std::cout << "sqrtk_tail_nonincreasing: "
                  << (rate.sqrtk_tail_nonincreasing ? "true" : "false") << "\n";
    } else {
        std::cout << "rate: insufficient rows (need 50)\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"NAPP-AL experiment runner"};
    app.require_subcommand(1);

    std::string config_path, out_dir, trace_path;
    std::optional<long> seed_override, stride_override;
    std::optional<int> workers_override;

    CLI::App* solve_cmd = app.add_subcommand("solve", "build an instance and run the solver");
    solve_cmd->add_option("--config", config_path, "experiment config file")->required();
    solve_cmd->add_option("--out", out_dir, "output directory for trace/summary");
    solve_cmd->add_option("--trace-stride", stride_override, "record every k-th iteration");
    solve_cmd->add_option("--workers", workers_override, "u-update worker threads");
    solve_cmd->add_option("--seed-override", seed_override, "replace the problem seed");

    CLI::App* validate_cmd =
        app.add_subcommand("validate", "structural checks and Lipschitz falsification");
    validate_cmd->add_option("--config", config_path, "experiment config file")->required();
    validate_cmd->add_option("--seed-override", seed_override, "replace the problem seed");

    CLI::App* report_cmd = app.add_subcommand("report", "post-hoc analysis of a trace file");
    report_cmd->add_option("trace", trace_path, "trace file from solve")->required();

    CLI11_PARSE(app, argc, argv);

    if (solve_cmd->parsed()) {
        return cmd_solve(config_path, out_dir,
                         make_overrides(seed_override, workers_override, stride_override));
    }
    if (validate_cmd->parsed()) {
        return cmd_validate(config_path, make_overrides(seed_override, std::nullopt, std::nullopt));
    }
    return cmd_report(trace_path);
}
