#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nappal {

// One recorded iteration. Row k describes the transition w^k -> w^{k+1}:
// l_gamma and lambda are evaluated at w^{k+1}, the difference norms cover the
// transition, h and q_norm belong to (u^k, p^k). dual_res is the relative
// residual of the dual update identity (a wiring regression check), wall_ms
// is zero unless timing capture was requested so that trace files stay
// byte-reproducible.
struct TraceRecord {
    long k = 0;
    double l_gamma = 0.0;
    double lambda = 0.0;
    double feas = 0.0;
    double delta_k = 0.0;
    double eps_k = 0.0;
    double q_norm = 0.0;
    double du = 0.0;
    double dv = 0.0;
    double dp = 0.0;
    double h = 0.0;
    double cert_bound = 0.0;
    double xi_norm = 0.0;
    double wall_ms = 0.0;
    double dual_res = 0.0;

    double dw() const { return std::sqrt(du * du + dv * dv + dp * dp); }
};

// Run constants emitted as '#'-prefixed metadata so that every recorded
// invariant (descent margin, certificate soundness, dual identity, tau_k) can
// be recomputed from the trace file alone.
struct TraceMeta {
    double gamma = 0.0, sigma = 0.0, beta = 1.0, l_kernel = 1.0;
    double l_g = 0.0, l_h = 0.0, l_omega = 0.0, l_theta = 0.0;
    double b_norm = 0.0, lambda_min = 0.0;
    double c1 = 0.0, c2 = 0.0, c3 = 0.0, c4 = 0.0;
};

namespace trace_io {

inline const char* header() {
    return "k,L_gamma,Lambda,feas_residual,delta_k,eps_k,q_norm,du_norm,dv_norm,dp_norm,"
           "h,cert_bound,xi_norm,wall_ms,dual_res";
}

inline std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline std::vector<std::pair<std::string, double>> meta_fields(const TraceMeta& m) {
    return {{"gamma", m.gamma},   {"sigma", m.sigma},       {"beta", m.beta},
            {"l_kernel", m.l_kernel}, {"l_g", m.l_g},       {"l_h", m.l_h},
            {"l_omega", m.l_omega},   {"l_theta", m.l_theta}, {"b_norm", m.b_norm},
            {"lambda_min", m.lambda_min}, {"c1", m.c1},     {"c2", m.c2},
            {"c3", m.c3},             {"c4", m.c4}};
}

}  // namespace trace_io

inline void write_trace(std::ostream& os, const TraceMeta& meta,
                        const std::vector<TraceRecord>& records) {
    for (const auto& [key, value] : trace_io::meta_fields(meta)) {
        os << "# " << key << " " << trace_io::fmt(value) << "\n";
    }
    os << trace_io::header() << "\n";
    for (const auto& r : records) {
        os << r.k << ',' << trace_io::fmt(r.l_gamma) << ',' << trace_io::fmt(r.lambda) << ','
           << trace_io::fmt(r.feas) << ',' << trace_io::fmt(r.delta_k) << ','
           << trace_io::fmt(r.eps_k) << ',' << trace_io::fmt(r.q_norm) << ','
           << trace_io::fmt(r.du) << ',' << trace_io::fmt(r.dv) << ',' << trace_io::fmt(r.dp)
           << ',' << trace_io::fmt(r.h) << ',' << trace_io::fmt(r.cert_bound) << ','
           << trace_io::fmt(r.xi_norm) << ',' << trace_io::fmt(r.wall_ms) << ','
           << trace_io::fmt(r.dual_res) << "\n";
    }
}

inline void write_trace_file(const std::string& path, const TraceMeta& meta,
                             const std::vector<TraceRecord>& records) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open trace file for writing: " + path);
    write_trace(os, meta, records);
}

struct TraceFile {
    TraceMeta meta;
    std::vector<TraceRecord> records;
};

inline TraceFile read_trace(std::istream& is) {
    TraceFile out;
    std::map<std::string, double> meta;
    std::string line;
    bool saw_header = false;
    long lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream ls(line.substr(1));
            std::string key;
            double value;
            if (ls >> key >> value) meta[key] = value;
            continue;
        }
        if (!saw_header) {
            if (line != trace_io::header()) {
                throw std::runtime_error("trace: unrecognized header at line " +
                                         std::to_string(lineno));
            }
            saw_header = true;
            continue;
        }
        TraceRecord r;
        double* fields[] = {&r.l_gamma, &r.lambda, &r.feas,   &r.delta_k,  &r.eps_k,
                            &r.q_norm,  &r.du,     &r.dv,     &r.dp,       &r.h,
                            &r.cert_bound, &r.xi_norm, &r.wall_ms, &r.dual_res};
        std::istringstream ls(line);
        std::string cell;
        if (!std::getline(ls, cell, ',')) {
            throw std::runtime_error("trace: bad row at line " + std::to_string(lineno));
        }
        r.k = std::stol(cell);
        for (double* f : fields) {
            if (!std::getline(ls, cell, ',')) {
                throw std::runtime_error("trace: short row at line " + std::to_string(lineno));
            }
            *f = std::stod(cell);
        }
        out.records.push_back(r);
    }
    if (!saw_header) throw std::runtime_error("trace: missing header row");
    auto grab = [&meta](const char* key, double& dst) {
        auto it = meta.find(key);
        if (it == meta.end()) throw std::runtime_error(std::string("trace: missing metadata ") + key);
        dst = it->second;
    };
    grab("gamma", out.meta.gamma);
    grab("sigma", out.meta.sigma);
    grab("beta", out.meta.beta);
    grab("l_kernel", out.meta.l_kernel);
    grab("l_g", out.meta.l_g);
    grab("l_h", out.meta.l_h);
    grab("l_omega", out.meta.l_omega);
    grab("l_theta", out.meta.l_theta);
    grab("b_norm", out.meta.b_norm);
    grab("lambda_min", out.meta.lambda_min);
    grab("c1", out.meta.c1);
    grab("c2", out.meta.c2);
    grab("c3", out.meta.c3);
    grab("c4", out.meta.c4);
    return out;
}

inline TraceFile read_trace_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open trace file: " + path);
    return read_trace(is);
}

}  // namespace nappal
