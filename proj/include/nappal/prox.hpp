#pragma once

#include "nappal/bregman.hpp"
#include "nappal/model.hpp"
#include "nappal/regularizer.hpp"

#include <array>
#include <cmath>
#include <exception>
#include <functional>
#include <iostream>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

namespace nappal {

namespace detail {

struct ProxPiece {
    double lo, hi, stationary;
};

// Smooth pieces of z -> (z - x)^2 / (2t) + penalty(z) with the stationary
// point of each piece in closed form. Pieces are listed left to right.
inline int prox_pieces(const Regularizer& r, double t, double x,
                       std::array<ProxPiece, 6>& out) {
    const double inf = std::numeric_limits<double>::infinity();
    const double lam = r.lambda;
    switch (r.kind) {
        case PenaltyKind::zero:
            out[0] = {-inf, inf, x};
            return 1;
        case PenaltyKind::l1:
            out[0] = {-inf, 0.0, x + t * lam};
            out[1] = {0.0, inf, x - t * lam};
            return 2;
        case PenaltyKind::scad: {
            const double a = r.a;
            const double mid = a - 1.0 - t;  // > 0 by the t < a-1 guard
            out[0] = {-inf, -a * lam, x};
            out[1] = {-a * lam, -lam, ((a - 1.0) * x + t * a * lam) / mid};
            out[2] = {-lam, 0.0, x + t * lam};
            out[3] = {0.0, lam, x - t * lam};
            out[4] = {lam, a * lam, ((a - 1.0) * x - t * a * lam) / mid};
            out[5] = {a * lam, inf, x};
            return 6;
        }
        case PenaltyKind::mcp: {
            const double th = r.theta;
            const double mid = th - t;  // > 0 by the t < theta guard
            out[0] = {-inf, -th * lam, x};
            out[1] = {-th * lam, 0.0, th * (x + t * lam) / mid};
            out[2] = {0.0, th * lam, th * (x - t * lam) / mid};
            out[3] = {th * lam, inf, x};
            return 4;
        }
        case PenaltyKind::capped_l1: {
            const double al = r.alpha;
            out[0] = {-inf, -al, x};
            out[1] = {-al, 0.0, x + t * lam};
            out[2] = {0.0, al, x - t * lam};
            out[3] = {al, inf, x};
            return 4;
        }
    }
    return 0;
}

}  // namespace detail

// Global minimizer of z -> (z - x)^2 / (2t) + penalty(z) over [lo, hi],
// by enumerating the stationary point of every smooth piece together with the
// piece breakpoints and box endpoints. Ties are resolved deterministically:
// smallest |z| first, then the smaller z. For MCP we require t < theta and for
// SCAD t < a - 1 so every piece stays strongly convex.
inline double prox_separable(const Regularizer& r, double t, double x, double lo, double hi) {
    r.validate();
    if (!(t > 0.0) || !std::isfinite(t)) {
        throw std::invalid_argument("prox_separable: t must be positive finite");
    }
    if (!std::isfinite(x)) throw std::invalid_argument("prox_separable: x must be finite");
    if (!(lo <= hi)) throw std::invalid_argument("prox_separable: empty box");
    if (r.kind == PenaltyKind::mcp && !(t < r.theta)) {
        throw std::invalid_argument("prox_separable: MCP requires t < theta");
    }
    if (r.kind == PenaltyKind::scad && !(t < r.a - 1.0)) {
        throw std::invalid_argument("prox_separable: SCAD requires t < a - 1");
    }

    std::array<detail::ProxPiece, 6> pieces;
    const int np = detail::prox_pieces(r, t, x, pieces);

    double cand[16];
    int nc = 0;
    for (int i = 0; i < np; ++i) {
        const double plo = std::max(pieces[i].lo, lo);
        const double phi_ = std::min(pieces[i].hi, hi);
        if (plo > phi_) continue;
        cand[nc++] = std::min(std::max(pieces[i].stationary, plo), phi_);
        // interior breakpoints fall out of the clamping above, but list them
        // explicitly so the search never depends on the piece formulas alone
        if (i > 0 && pieces[i].lo >= lo && pieces[i].lo <= hi) cand[nc++] = pieces[i].lo;
    }
    if (std::isfinite(lo)) cand[nc++] = lo;
    if (std::isfinite(hi)) cand[nc++] = hi;

    auto objective = [&](double z) { return (z - x) * (z - x) / (2.0 * t) + r.value(z); };

    double best = cand[0];
    double best_val = objective(best);
    for (int i = 1; i < nc; ++i) {
        const double z = cand[i];
        const double val = objective(z);
        const double tie = 1e-12 * (1.0 + std::abs(best_val));
        if (val < best_val - tie) {
            best = z;
            best_val = val;
        } else if (val <= best_val + tie) {
            if (std::abs(z) < std::abs(best) - 1e-15 ||
                (std::abs(std::abs(z) - std::abs(best)) <= 1e-15 && z < best)) {
                best = z;
                best_val = val;
            }
        }
    }
    return best;
}

// Inputs handed to a user-registered block solver. The callback must return a
// global minimizer of that block's subproblem
//   min_{z in box}  <grad_block, z> + J_i(z) + <q, Phi_i(z)> + D_i(z, u_block) / eps
// (grad_block already contains the linearized Omega term).
struct BlockContext {
    Index block = 0;
    Index offset = 0;  // first global coordinate of the block
    Eigen::Ref<const Vector> u_block;
    Eigen::Ref<const Vector> grad_block;
    const Vector& q;
    double eps = 0.0;
    const Regularizer& reg;
    const BoxSet& box;
    const BregmanKernel& kernel;
};

using BlockSolver = std::function<Vector(const BlockContext&)>;

namespace detail {

// Static strided fan-out over blocks. Each task writes only its own output
// slice, so results are identical for every worker count.
template <typename Fn>
void parallel_blocks(Index nblocks, int workers, Fn&& fn) {
    if (workers <= 1 || nblocks <= 1) {
        for (Index i = 0; i < nblocks; ++i) fn(i);
        return;
    }
    const int nthreads = static_cast<int>(std::min<Index>(workers, nblocks));
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(nthreads);
    pool.reserve(nthreads);
    for (int t = 0; t < nthreads; ++t) {
        pool.emplace_back([&, t]() {
            try {
                for (Index i = t; i < nblocks; i += nthreads) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace detail

// Solves the u-subproblem
//   min_{u in U}  <grad_lin, u> + J(u) + D(u, u_k) / eps
// exactly, block by block. In the default mode (Phi == 0, separable J,
// quadratic kernel, box U) each coordinate reduces to prox_separable with
// step t_j = eps / d_j at the point u_k[j] - t_j grad_lin[j]. Blocks with a
// registered custom solver take that path instead; blocks with a nonzero Phi
// and no custom solver are a configuration error.
class SubproblemSolver {
 public:
    // Returns true when an existing registration was replaced.
    bool register_block_solver(Index block, BlockSolver solver) {
        const bool replaced = custom_.count(block) > 0;
        if (replaced) {
            std::cerr << "nappal: warning: replacing block solver for block " << block << "\n";
        }
        custom_[block] = std::move(solver);
        return replaced;
    }

    bool has_custom(Index block) const { return custom_.count(block) > 0; }

    Vector solve(const ProblemSpec& spec, const BregmanKernel& kernel, const Vector& u_k,
                 const Vector& grad_lin, const Vector& q, double eps, int workers = 1) const {
        if (u_k.size() != spec.n || grad_lin.size() != spec.n) {
            throw std::invalid_argument("u-subproblem: dimension mismatch");
        }
        if (!(eps > 0.0)) throw std::invalid_argument("u-subproblem: eps must be > 0");

        Vector u_next(spec.n);
        const Index nblocks = spec.num_blocks();
        std::vector<Index> offsets(nblocks);
        {
            Index off = 0;
            for (Index i = 0; i < nblocks; ++i) {
                offsets[i] = off;
                off += spec.block_sizes[i];
            }
        }

        detail::parallel_blocks(nblocks, workers, [&](Index i) {
            const Index off = offsets[i];
            const Index sz = spec.block_sizes[i];
            auto it = custom_.find(i);
            if (it != custom_.end()) {
                BlockContext ctx{i,
                                 off,
                                 u_k.segment(off, sz),
                                 grad_lin.segment(off, sz),
                                 q,
                                 eps,
                                 spec.regularizers[i],
                                 spec.boxes[i],
                                 kernel};
                Vector z = it->second(ctx);
                if (z.size() != sz) {
                    throw std::runtime_error("block solver returned wrong dimension");
                }
                u_next.segment(off, sz) = z;
                return;
            }
            if (spec.has_phi()) {
                throw ConfigError(
                    "u-subproblem: nonzero Phi requires a registered block solver "
                    "(block " + std::to_string(i) + ")");
            }
            const Regularizer& reg = spec.regularizers[i];
            const BoxSet& box = spec.boxes[i];
            for (Index j = 0; j < sz; ++j) {
                const double dj = kernel.weight(off + j);
                const double t = eps / dj;
                const double xj = u_k[off + j] - t * grad_lin[off + j];
                u_next[off + j] = prox_separable(reg, t, xj, box.lo[j], box.hi[j]);
            }
        });
        return u_next;
    }

 private:
    std::unordered_map<Index, BlockSolver> custom_;
};

// Convenience wrapper for the default mode without custom blocks.
inline Vector solve_u_subproblem(const ProblemSpec& spec, const BregmanKernel& kernel,
                                 const Vector& u_k, const Vector& grad_lin, double eps,
                                 int workers = 1) {
    static const Vector empty_q;
    return SubproblemSolver().solve(spec, kernel, u_k, grad_lin, empty_q, eps, workers);
}

}  // namespace nappal
