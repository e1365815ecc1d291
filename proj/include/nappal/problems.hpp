#pragma once

#include "nappal/linalg.hpp"
#include "nappal/model.hpp"
#include "nappal/prox.hpp"
#include "nappal/rng.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace nappal {

// sup |d/dz sech^2(z)| = sup |2 tanh(z) sech^2(z)| = 4 / (3 sqrt(3)); the
// curvature bound behind every tanh-based constraint modulus below.
inline constexpr double kTanhCurvatureBound = 0.76980035891950105;

// Seeded generator data for one concrete instance. This is the serializable
// form; make_problem compiles it into a ProblemSpec whose closures share one
// immutable copy. All Lipschitz constants are derived analytically from the
// generated data, never sampled.
struct InstanceData {
    std::string family;  // "sharing" or "erm"
    std::uint64_t seed = 0;
    std::vector<Index> block_sizes;
    Index m = 0;
    double nonlinearity = 0.0;   // sharing: scale of the tanh constraint part and cos ripple
    double feature_scale = 1.0;  // erm: feature magnitude
    Regularizer reg;             // applied to every block
    double box_lo = -std::numeric_limits<double>::infinity();
    double box_hi = std::numeric_limits<double>::infinity();

    Matrix A;   // sharing: linear constraint part; erm: feature rows
    Matrix A2;  // sharing: tanh lift (empty for erm)
    Matrix W;   // sharing: quadratic data term (empty for erm)
    Vector y;   // data targets
    Vector u0;  // seeded start point

    double l_g = 0.0, l_h = 0.0, l_theta = 0.0, l_omega = 0.0;
    Vector l_omega_components;

    Index n() const {
        Index total = 0;
        for (Index b : block_sizes) total += b;
        return total;
    }
};

struct SharingParams {
    Index agents = 2;
    std::vector<Index> block_dims;  // one entry per agent
    Index shared_dim = 4;
    double nonlinearity = 0.0;  // c >= 0
    Regularizer reg = Regularizer::zero();
    double box_lo = -std::numeric_limits<double>::infinity();
    double box_hi = std::numeric_limits<double>::infinity();
    std::uint64_t seed = 1;
};

struct ErmParams {
    Index predictors = 10;
    Index samples = 20;
    Regularizer reg = Regularizer::mcp(0.1, 4.0);
    double feature_scale = 1.0;
    std::uint64_t seed = 1;
};

namespace detail {

inline Matrix random_matrix(Rng& rng, Index rows, Index cols, double scale) {
    Matrix M(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) M(i, j) = scale * rng.uniform(-1.0, 1.0);
    }
    return M;
}

}  // namespace detail

// Sharing instance: N agents contribute Theta_i(u_i) = A_i u_i + c A2_i tanh(u_i)
// to a shared resource v, coupled through B = -I. The objective is a convex
// quadratic in v plus a cosine ripple scaled by the same nonlinearity knob, so
// c = 0 with a zero regularizer yields a linearly constrained convex QP.
inline InstanceData build_sharing(const SharingParams& p) {
    if (p.agents < 1 || p.shared_dim < 1) {
        throw std::invalid_argument("build_sharing: dims must be >= 1");
    }
    if (static_cast<Index>(p.block_dims.size()) != p.agents) {
        throw std::invalid_argument("build_sharing: one block dim per agent required");
    }
    for (Index b : p.block_dims) {
        if (b < 1) throw std::invalid_argument("build_sharing: block dims must be >= 1");
    }
    if (!(p.nonlinearity >= 0.0) || !std::isfinite(p.nonlinearity)) {
        throw std::invalid_argument("build_sharing: nonlinearity must be finite and >= 0");
    }
    p.reg.validate();

    InstanceData d;
    d.family = "sharing";
    d.seed = p.seed;
    d.block_sizes = p.block_dims;
    d.m = p.shared_dim;
    d.nonlinearity = p.nonlinearity;
    d.reg = p.reg;
    d.box_lo = p.box_lo;
    d.box_hi = p.box_hi;

    Rng rng(p.seed);
    const Index n = d.n();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d.m));
    d.A = detail::random_matrix(rng, d.m, n, scale);
    d.A2 = detail::random_matrix(rng, d.m, n, scale);
    d.W = Matrix::Identity(d.m, d.m) + detail::random_matrix(rng, d.m, d.m, 0.3 * scale);
    d.y = Vector(d.m);
    for (Index j = 0; j < d.m; ++j) d.y[j] = rng.uniform(-2.0, 2.0);
    d.u0 = Vector(n);
    const double lo0 = std::max(p.box_lo, -1.0);
    const double hi0 = std::min(p.box_hi, 1.0);
    for (Index j = 0; j < n; ++j) d.u0[j] = rng.uniform(lo0, hi0);

    // constants from the generated data
    const double mm = static_cast<double>(d.m);
    const double w_norm = spectral_norm(d.W).value;
    d.l_g = (w_norm * w_norm + p.nonlinearity) / mm;
    d.l_h = 0.0;
    double sq = 0.0;
    Index off = 0;
    for (Index b : d.block_sizes) {
        const double li = spectral_norm(d.A.middleCols(off, b)).value +
                          p.nonlinearity * spectral_norm(d.A2.middleCols(off, b)).value;
        sq += li * li;
        off += b;
    }
    d.l_theta = std::sqrt(sq);
    d.l_omega_components = Vector(d.m);
    for (Index j = 0; j < d.m; ++j) {
        d.l_omega_components[j] =
            p.nonlinearity * kTanhCurvatureBound * d.A2.row(j).cwiseAbs().maxCoeff();
    }
    d.l_omega = d.l_omega_components.sum();
    return d;
}

// ERM instance: predictions g_j(u) = tanh(a_j^T u) lifted through auxiliary
// v, smooth bounded Geman-McClure losses, MCP (by default) on the predictor.
inline InstanceData build_erm(const ErmParams& p) {
    if (p.predictors < 1 || p.samples < 1) {
        throw std::invalid_argument("build_erm: dims must be >= 1");
    }
    if (!(p.feature_scale >= 0.0) || !std::isfinite(p.feature_scale)) {
        throw std::invalid_argument("build_erm: feature_scale must be finite and >= 0");
    }
    p.reg.validate();

    InstanceData d;
    d.family = "erm";
    d.seed = p.seed;
    d.block_sizes = {p.predictors};
    d.m = p.samples;
    d.feature_scale = p.feature_scale;
    d.reg = p.reg;

    Rng rng(p.seed);
    d.A = detail::random_matrix(rng, d.m, p.predictors,
                                p.feature_scale / std::sqrt(static_cast<double>(p.predictors)));
    d.y = Vector(d.m);
    for (Index j = 0; j < d.m; ++j) d.y[j] = rng.uniform(-0.9, 0.9);
    d.u0 = Vector(p.predictors);
    for (Index j = 0; j < p.predictors; ++j) d.u0[j] = rng.uniform(-1.0, 1.0);

    const double mm = static_cast<double>(d.m);
    d.l_g = 0.0;
    d.l_h = 2.0 / mm;  // sup |phi''| = 2 for the Geman-McClure loss
    d.l_theta = spectral_norm(d.A).value;
    d.l_omega_components = Vector(d.m);
    for (Index j = 0; j < d.m; ++j) {
        d.l_omega_components[j] = kTanhCurvatureBound * d.A.row(j).squaredNorm();
    }
    d.l_omega = d.l_omega_components.sum();
    return d;
}

// Compile generator data into evaluator closures over one shared copy.
inline ProblemSpec make_problem(InstanceData data) {
    auto d = std::make_shared<const InstanceData>(std::move(data));
    ProblemSpec spec;
    spec.n = d->n();
    spec.d = d->m;
    spec.m = d->m;
    spec.block_sizes = d->block_sizes;
    spec.B = -Matrix::Identity(d->m, d->m);
    spec.l_g = d->l_g;
    spec.l_h = d->l_h;
    spec.l_theta = d->l_theta;
    spec.l_omega = d->l_omega;
    spec.l_omega_components = d->l_omega_components;
    spec.regularizers.assign(d->block_sizes.size(), d->reg);
    for (Index b : d->block_sizes) {
        if (std::isfinite(d->box_lo) || std::isfinite(d->box_hi)) {
            spec.boxes.push_back(BoxSet::uniform(b, d->box_lo, d->box_hi));
        } else {
            spec.boxes.push_back(BoxSet::all(b));
        }
    }

    if (d->family == "sharing") {
        const double mm = static_cast<double>(d->m);
        const double c = d->nonlinearity;
        spec.g_value = [d, mm, c](const Vector&, const Vector& v) {
            const Vector r = d->W * v - d->y;
            return 0.5 / mm * r.squaredNorm() + c / mm * v.array().cos().sum();
        };
        spec.g_grad_v = [d, mm, c](const Vector&, const Vector& v) -> Vector {
            return d->W.transpose() * (d->W * v - d->y) / mm -
                   c / mm * v.array().sin().matrix();
        };
        spec.g_grad_u = nullptr;  // G has no u dependence
        spec.omega = [d, c](const Vector& u) -> Vector {
            return d->A * u + c * (d->A2 * u.array().tanh().matrix());
        };
        spec.omega_jacobian = [d, c](const Vector& u) -> Matrix {
            const Vector s = 1.0 - u.array().tanh().square();
            return d->A + c * (d->A2 * s.asDiagonal());
        };
    } else if (d->family == "erm") {
        const double mm = static_cast<double>(d->m);
        spec.h_value = [d, mm](const Vector& v) {
            double total = 0.0;
            for (Index j = 0; j < v.size(); ++j) {
                const double s = v[j] - d->y[j];
                total += s * s / (1.0 + s * s);
            }
            return total / mm;
        };
        spec.h_grad = [d, mm](const Vector& v) -> Vector {
            Vector g(v.size());
            for (Index j = 0; j < v.size(); ++j) {
                const double s = v[j] - d->y[j];
                const double den = 1.0 + s * s;
                g[j] = 2.0 * s / (den * den) / mm;
            }
            return g;
        };
        spec.omega = [d](const Vector& u) -> Vector {
            return (d->A * u).array().tanh().matrix();
        };
        spec.omega_jacobian = [d](const Vector& u) -> Matrix {
            const Vector s = 1.0 - (d->A * u).array().tanh().square();
            return s.asDiagonal() * d->A;
        };
    } else {
        throw std::invalid_argument("make_problem: unknown family " + d->family);
    }
    return spec;
}

// ---- serialization ----

namespace detail {

inline std::string fmt17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

// istream's num_get rejects "inf"; route scalar reads through strtod
inline double read_double(std::istream& is, const char* what) {
    std::string tok;
    if (!(is >> tok)) throw std::runtime_error(std::string("instance: missing ") + what);
    try {
        std::size_t pos = 0;
        const double v = std::stod(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error(std::string("instance: bad number for ") + what);
    }
}

inline void write_matrix(std::ostream& os, const char* name, const Matrix& M) {
    os << "matrix " << name << " " << M.rows() << " " << M.cols() << "\n";
    for (Index i = 0; i < M.rows(); ++i) {
        for (Index j = 0; j < M.cols(); ++j) {
            if (j) os << " ";
            os << fmt17(M(i, j));
        }
        os << "\n";
    }
}

inline void write_vector(std::ostream& os, const char* name, const Vector& v) {
    os << "vector " << name << " " << v.size() << "\n";
    for (Index j = 0; j < v.size(); ++j) {
        if (j) os << " ";
        os << fmt17(v[j]);
    }
    os << "\n";
}

inline Matrix read_matrix(std::istream& is, const std::string& expect) {
    std::string kw, name;
    Index rows, cols;
    if (!(is >> kw >> name >> rows >> cols) || kw != "matrix" || name != expect) {
        throw std::runtime_error("instance: expected matrix " + expect);
    }
    Matrix M(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) {
            if (!(is >> M(i, j))) throw std::runtime_error("instance: short matrix " + expect);
        }
    }
    return M;
}

inline Vector read_vector(std::istream& is, const std::string& expect) {
    std::string kw, name;
    Index size;
    if (!(is >> kw >> name >> size) || kw != "vector" || name != expect) {
        throw std::runtime_error("instance: expected vector " + expect);
    }
    Vector v(size);
    for (Index j = 0; j < size; ++j) {
        if (!(is >> v[j])) throw std::runtime_error("instance: short vector " + expect);
    }
    return v;
}

}  // namespace detail

inline void save_instance(std::ostream& os, const InstanceData& d) {
    os << "nappal-instance v1\n";
    os << "family " << d.family << "\n";
    os << "seed " << d.seed << "\n";
    os << "m " << d.m << "\n";
    os << "blocks " << d.block_sizes.size() << "\n";
    for (std::size_t i = 0; i < d.block_sizes.size(); ++i) {
        if (i) os << " ";
        os << d.block_sizes[i];
    }
    os << "\n";
    os << "nonlinearity " << detail::fmt17(d.nonlinearity) << "\n";
    os << "feature_scale " << detail::fmt17(d.feature_scale) << "\n";
    os << "regularizer " << d.reg.name() << " " << detail::fmt17(d.reg.lambda) << " "
       << detail::fmt17(d.reg.a) << " " << detail::fmt17(d.reg.theta) << " "
       << detail::fmt17(d.reg.alpha) << "\n";
    os << "box " << detail::fmt17(d.box_lo) << " " << detail::fmt17(d.box_hi) << "\n";
    os << "constants " << detail::fmt17(d.l_g) << " " << detail::fmt17(d.l_h) << " "
       << detail::fmt17(d.l_theta) << " " << detail::fmt17(d.l_omega) << "\n";
    detail::write_vector(os, "l_omega_components", d.l_omega_components);
    detail::write_matrix(os, "A", d.A);
    detail::write_matrix(os, "A2", d.A2);
    detail::write_matrix(os, "W", d.W);
    detail::write_vector(os, "y", d.y);
    detail::write_vector(os, "u0", d.u0);
    os << "end\n";
}

inline InstanceData load_instance(std::istream& is) {
    std::string magic, version;
    if (!(is >> magic >> version) || magic != "nappal-instance" || version != "v1") {
        throw std::runtime_error("instance: bad magic line");
    }
    InstanceData d;
    std::string kw;
    auto expect_kw = [&](const char* want) {
        if (!(is >> kw) || kw != want) {
            throw std::runtime_error(std::string("instance: expected ") + want);
        }
    };
    expect_kw("family");
    is >> d.family;
    expect_kw("seed");
    is >> d.seed;
    expect_kw("m");
    is >> d.m;
    expect_kw("blocks");
    std::size_t nblocks;
    is >> nblocks;
    d.block_sizes.resize(nblocks);
    for (auto& b : d.block_sizes) is >> b;
    expect_kw("nonlinearity");
    is >> d.nonlinearity;
    expect_kw("feature_scale");
    is >> d.feature_scale;
    expect_kw("regularizer");
    std::string reg_name;
    is >> reg_name;
    d.reg.lambda = detail::read_double(is, "regularizer lambda");
    d.reg.a = detail::read_double(is, "regularizer a");
    d.reg.theta = detail::read_double(is, "regularizer theta");
    d.reg.alpha = detail::read_double(is, "regularizer alpha");
    if (reg_name == "zero") d.reg.kind = PenaltyKind::zero;
    else if (reg_name == "l1") d.reg.kind = PenaltyKind::l1;
    else if (reg_name == "scad") d.reg.kind = PenaltyKind::scad;
    else if (reg_name == "mcp") d.reg.kind = PenaltyKind::mcp;
    else if (reg_name == "capped_l1") d.reg.kind = PenaltyKind::capped_l1;
    else throw std::runtime_error("instance: unknown regularizer " + reg_name);
    d.reg.validate();
    expect_kw("box");
    d.box_lo = detail::read_double(is, "box lower bound");
    d.box_hi = detail::read_double(is, "box upper bound");
    expect_kw("constants");
    d.l_g = detail::read_double(is, "l_g");
    d.l_h = detail::read_double(is, "l_h");
    d.l_theta = detail::read_double(is, "l_theta");
    d.l_omega = detail::read_double(is, "l_omega");
    if (!is) throw std::runtime_error("instance: truncated scalar section");
    d.l_omega_components = detail::read_vector(is, "l_omega_components");
    d.A = detail::read_matrix(is, "A");
    d.A2 = detail::read_matrix(is, "A2");
    d.W = detail::read_matrix(is, "W");
    d.y = detail::read_vector(is, "y");
    d.u0 = detail::read_vector(is, "u0");
    expect_kw("end");
    return d;
}

inline void save_instance_file(const std::string& path, const InstanceData& d) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write instance file: " + path);
    save_instance(os, d);
}

inline InstanceData load_instance_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read instance file: " + path);
    return load_instance(is);
}

// ---- brute-force stationarity oracle ----

struct GridSpec {
    Vector u_lo, u_hi;
    Index u_points = 0;  // per u coordinate
    Vector v_lo, v_hi;
    Index v_points = 0;  // per v coordinate
    double threshold = 1e-1;
    double prox_step = 1e-3;
};

struct StationaryCandidate {
    Vector u, v;
    double residual = 0.0;
};

// Enumerates a joint (u, v) grid, scores each point by a KKT-residual
// surrogate (feasibility plus the prox-projected gradient norm with the
// least-squares multiplier plugged in), and returns grid-local minima below
// the threshold.
inline std::vector<StationaryCandidate> brute_force_stationary(const ProblemSpec& spec,
                                                               const GridSpec& grid) {
    if (grid.u_points < 2 || grid.v_points < 2 || grid.u_lo.size() != spec.n ||
        grid.v_lo.size() != spec.d || grid.u_hi.size() != spec.n ||
        grid.v_hi.size() != spec.d) {
        throw std::invalid_argument("brute_force_stationary: empty or mismatched grid");
    }
    double total_d = 1.0;
    for (Index j = 0; j < spec.n; ++j) total_d *= static_cast<double>(grid.u_points);
    for (Index j = 0; j < spec.d; ++j) total_d *= static_cast<double>(grid.v_points);
    if (total_d > 1e7) throw std::invalid_argument("brute_force_stationary: grid too large");
    const long total = static_cast<long>(total_d);

    const Index dims = spec.n + spec.d;
    std::vector<Index> radix(dims);
    for (Index j = 0; j < spec.n; ++j) radix[j] = grid.u_points;
    for (Index j = 0; j < spec.d; ++j) radix[spec.n + j] = grid.v_points;

    GramFactorization gram(spec.B);

    auto point_at = [&](long code, Vector& u, Vector& v) {
        for (Index j = 0; j < dims; ++j) {
            const Index idx = static_cast<Index>(code % radix[j]);
            code /= radix[j];
            const double frac =
                static_cast<double>(idx) / static_cast<double>(radix[j] - 1);
            if (j < spec.n) {
                u[j] = grid.u_lo[j] + frac * (grid.u_hi[j] - grid.u_lo[j]);
            } else {
                v[j - spec.n] = grid.v_lo[j - spec.n] +
                                frac * (grid.v_hi[j - spec.n] - grid.v_lo[j - spec.n]);
            }
        }
    };

    std::vector<double> score(total);
    Vector u(spec.n), v(spec.d);
    for (long code = 0; code < total; ++code) {
        point_at(code, u, v);
        const Vector gv = spec.grad_v_g(u, v) + spec.grad_h(v);
        const Vector p_hat = -(spec.B * gram.solve(gv));
        const double feas = (spec.theta(u) + spec.B * v).norm();
        const Vector gu = spec.grad_u_g(u, v) + spec.jacobian_omega(u).transpose() * p_hat;
        // prox-projected gradient residual in u
        const double t = grid.prox_step;
        double pg2 = 0.0;
        Index off = 0;
        for (std::size_t b = 0; b < spec.regularizers.size(); ++b) {
            const Index sz = spec.block_sizes[b];
            for (Index j = 0; j < sz; ++j) {
                const double z = prox_separable(spec.regularizers[b], t, u[off + j] - t * gu[off + j],
                                                spec.boxes[b].lo[j], spec.boxes[b].hi[j]);
                pg2 += (u[off + j] - z) * (u[off + j] - z);
            }
            off += sz;
        }
        const double pg = std::sqrt(pg2) / t;
        score[code] = std::max(feas, pg);
    }

    std::vector<long> strides(dims);
    long acc = 1;
    for (Index j = 0; j < dims; ++j) {
        strides[j] = acc;
        acc *= radix[j];
    }
    struct Raw {
        long code;
        double residual;
    };
    std::vector<Raw> raw;
    for (long code = 0; code < total; ++code) {
        if (score[code] >= grid.threshold) continue;
        bool local_min = true;
        long rest = code;
        for (Index j = 0; j < dims && local_min; ++j) {
            const Index idx = static_cast<Index>(rest % radix[j]);
            rest /= radix[j];
            if (idx > 0 && score[code - strides[j]] < score[code]) local_min = false;
            if (idx + 1 < radix[j] && score[code + strides[j]] < score[code]) local_min = false;
        }
        if (local_min) raw.push_back({code, score[code]});
    }

    // Valleys that run diagonally through the grid leave chains of
    // axis-local minima; merge candidates that sit within a few cells of
    // each other (transitively) and keep the best-scored member of each
    // component.
    const std::size_t nraw = raw.size();
    std::vector<std::size_t> parent(nraw);
    for (std::size_t i = 0; i < nraw; ++i) parent[i] = i;
    std::function<std::size_t(std::size_t)> find = [&](std::size_t i) -> std::size_t {
        while (parent[i] != i) i = parent[i] = parent[parent[i]];
        return i;
    };
    auto cells_apart = [&](long a, long b, Index j) {
        for (Index jj = 0; jj < j; ++jj) {
            a /= radix[jj];
            b /= radix[jj];
        }
        return std::abs(static_cast<long>(a % radix[j]) - static_cast<long>(b % radix[j]));
    };
    for (std::size_t i = 0; i < nraw; ++i) {
        for (std::size_t k = i + 1; k < nraw; ++k) {
            bool close = true;
            for (Index j = 0; j < dims && close; ++j) {
                if (cells_apart(raw[i].code, raw[k].code, j) > 3) close = false;
            }
            if (close) parent[find(i)] = find(k);
        }
    }
    std::vector<std::size_t> best_of(nraw, nraw);
    for (std::size_t i = 0; i < nraw; ++i) {
        const std::size_t root = find(i);
        if (best_of[root] == nraw || raw[i].residual < raw[best_of[root]].residual) {
            best_of[root] = i;
        }
    }
    std::vector<StationaryCandidate> out;
    for (std::size_t i = 0; i < nraw; ++i) {
        if (best_of[find(i)] != i) continue;
        StationaryCandidate cand;
        cand.u = Vector(spec.n);
        cand.v = Vector(spec.d);
        point_at(raw[i].code, cand.u, cand.v);
        cand.residual = raw[i].residual;
        out.push_back(std::move(cand));
    }
    return out;
}

}  // namespace nappal
