#pragma once

#include "nappal/linalg.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace nappal {

enum class PenaltyKind { zero, l1, scad, mcp, capped_l1 };

// Separable nonsmooth penalty descriptor. All shipped kinds are finite-valued,
// even, and nondecreasing on [0, inf). SCAD and MCP are the standard
// folded-concave penalties; capped-l1 is lambda * min(|z|, alpha).
struct Regularizer {
    PenaltyKind kind = PenaltyKind::zero;
    double lambda = 0.0;
    double a = 3.7;       // SCAD concavity, must be > 2
    double theta = 4.0;   // MCP concavity, must be > 0
    double alpha = 1.0;   // capped-l1 cap, must be > 0

    static Regularizer zero() { return {}; }

    static Regularizer l1(double lambda) {
        Regularizer r;
        r.kind = PenaltyKind::l1;
        r.lambda = lambda;
        r.validate();
        return r;
    }

    static Regularizer scad(double lambda, double a) {
        Regularizer r;
        r.kind = PenaltyKind::scad;
        r.lambda = lambda;
        r.a = a;
        r.validate();
        return r;
    }

    static Regularizer mcp(double lambda, double theta) {
        Regularizer r;
        r.kind = PenaltyKind::mcp;
        r.lambda = lambda;
        r.theta = theta;
        r.validate();
        return r;
    }

    static Regularizer capped_l1(double lambda, double alpha) {
        Regularizer r;
        r.kind = PenaltyKind::capped_l1;
        r.lambda = lambda;
        r.alpha = alpha;
        r.validate();
        return r;
    }

    void validate() const {
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
            throw std::invalid_argument("regularizer: lambda must be >= 0");
        }
        if (kind == PenaltyKind::scad && !(a > 2.0)) {
            throw std::invalid_argument("SCAD: parameter a must be > 2");
        }
        if (kind == PenaltyKind::mcp && !(theta > 0.0)) {
            throw std::invalid_argument("MCP: parameter theta must be > 0");
        }
        if (kind == PenaltyKind::capped_l1 && !(alpha > 0.0)) {
            throw std::invalid_argument("capped-l1: parameter alpha must be > 0");
        }
    }

    double value(double z) const {
        const double az = std::abs(z);
        switch (kind) {
            case PenaltyKind::zero:
                return 0.0;
            case PenaltyKind::l1:
                return lambda * az;
            case PenaltyKind::scad: {
                if (az <= lambda) return lambda * az;
                if (az <= a * lambda) {
                    return (2.0 * a * lambda * az - az * az - lambda * lambda) / (2.0 * (a - 1.0));
                }
                return lambda * lambda * (a + 1.0) / 2.0;
            }
            case PenaltyKind::mcp: {
                if (az <= theta * lambda) return lambda * az - az * az / (2.0 * theta);
                return theta * lambda * lambda / 2.0;
            }
            case PenaltyKind::capped_l1:
                return lambda * std::min(az, alpha);
        }
        return 0.0;
    }

    // One-sided derivative for z away from breakpoints (used by stationarity
    // diagnostics; not defined at kinks).
    double derivative(double z) const {
        const double s = z >= 0.0 ? 1.0 : -1.0;
        const double az = std::abs(z);
        switch (kind) {
            case PenaltyKind::zero:
                return 0.0;
            case PenaltyKind::l1:
                return s * lambda;
            case PenaltyKind::scad: {
                if (az <= lambda) return s * lambda;
                if (az <= a * lambda) return s * (a * lambda - az) / (a - 1.0);
                return 0.0;
            }
            case PenaltyKind::mcp: {
                if (az <= theta * lambda) return s * lambda - z / theta;
                return 0.0;
            }
            case PenaltyKind::capped_l1:
                return az <= alpha ? s * lambda : 0.0;
        }
        return 0.0;
    }

    double value_sum(const Vector& u) const {
        double total = 0.0;
        for (Index j = 0; j < u.size(); ++j) total += value(u[j]);
        return total;
    }

    std::string name() const {
        switch (kind) {
            case PenaltyKind::zero: return "zero";
            case PenaltyKind::l1: return "l1";
            case PenaltyKind::scad: return "scad";
            case PenaltyKind::mcp: return "mcp";
            case PenaltyKind::capped_l1: return "capped_l1";
        }
        return "?";
    }
};

// Per-coordinate box constraints; +/-inf bounds encode unconstrained
// coordinates.
struct BoxSet {
    Vector lo, hi;

    static BoxSet all(Index dim) {
        BoxSet b;
        b.lo = Vector::Constant(dim, -std::numeric_limits<double>::infinity());
        b.hi = Vector::Constant(dim, std::numeric_limits<double>::infinity());
        return b;
    }

    static BoxSet bounds(Vector lo, Vector hi) {
        if (lo.size() != hi.size()) throw std::invalid_argument("BoxSet: size mismatch");
        for (Index j = 0; j < lo.size(); ++j) {
            if (!(lo[j] <= hi[j])) throw std::invalid_argument("BoxSet: requires lo <= hi");
        }
        BoxSet b;
        b.lo = std::move(lo);
        b.hi = std::move(hi);
        return b;
    }

    static BoxSet uniform(Index dim, double lo, double hi) {
        return bounds(Vector::Constant(dim, lo), Vector::Constant(dim, hi));
    }

    Index dim() const { return lo.size(); }

    bool unconstrained() const {
        for (Index j = 0; j < lo.size(); ++j) {
            if (std::isfinite(lo[j]) || std::isfinite(hi[j])) return false;
        }
        return true;
    }

    double clamp(Index j, double z) const { return std::min(std::max(z, lo[j]), hi[j]); }

    bool contains(const Vector& u, double tol = 0.0) const {
        for (Index j = 0; j < u.size(); ++j) {
            if (u[j] < lo[j] - tol || u[j] > hi[j] + tol) return false;
        }
        return true;
    }
};

}  // namespace nappal
