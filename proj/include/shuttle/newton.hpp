#ifndef SHUTTLE_NEWTON_HPP
#define SHUTTLE_NEWTON_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "shuttle/device.hpp"
#include "shuttle/error.hpp"

namespace shuttle {

struct NewtonConfig {
    double tol_energy = 1e-6;  // eV
    int max_iter = 40;
    double fd_step = 1e-3;  // V

    bool operator==(const NewtonConfig&) const = default;
};

struct NewtonResult {
    double v = 0.0;
    double residual = 0.0;  // fn(v) - target
    int evaluations = 0;
    double bootstrap_slope = std::numeric_limits<double>::quiet_NaN();  // forward difference at fd_step
};

/// Root of fn(V) = target on [range.lo, range.hi]. One forward-difference
/// bootstrap, then secant steps. Once a sign change is seen the root stays
/// bracketed and steps leaving the bracket (or stalling) fall back to
/// bisection, which keeps kinks in fn (level crossings) from derailing it.
template <class F>
NewtonResult newton_solve(F&& fn, double target, double v0, const NewtonConfig& cfg, Interval range) {
    if (!std::isfinite(v0)) throw InputError("newton start value is not finite");
    if (!(range.lo < range.hi)) throw InputError("newton clamp interval is empty");

    NewtonResult out;
    double best_v = v0, best_r = std::numeric_limits<double>::infinity();
    const auto eval = [&](double v) {
        const double r = fn(v) - target;
        ++out.evaluations;
        if (!std::isfinite(r)) throw NumericError("functional returned a non-finite value");
        if (std::abs(r) < std::abs(best_r)) {
            best_r = r;
            best_v = v;
        }
        return r;
    };
    const auto fail = [&](const std::string& why) -> NonConvergenceError {
        return NonConvergenceError(why, best_v, best_r);
    };
    const auto done = [&](double v, double r) {
        out.v = v;
        out.residual = r;
        return out;
    };

    double v = std::clamp(v0, range.lo, range.hi);
    double r = eval(v);
    if (std::abs(r) <= cfg.tol_energy) return done(v, r);

    double v1 = v + cfg.fd_step;
    if (v1 > range.hi) v1 = v - cfg.fd_step;
    const double r1 = eval(v1);
    double slope = (r1 - r) / (v1 - v);
    out.bootstrap_slope = slope;
    if (std::abs(r1) <= cfg.tol_energy) return done(v1, r1);

    bool bracketed = false;
    double a = 0.0, ra = 0.0, b = 0.0, rb = 0.0;
    const auto absorb = [&](double x, double rx, double y, double ry) {
        if (!bracketed) {
            if ((rx < 0.0) != (ry < 0.0)) {
                bracketed = true;
                a = std::min(x, y);
                b = std::max(x, y);
                ra = x < y ? rx : ry;
                rb = x < y ? ry : rx;
            }
            return;
        }
        if (x <= a || x >= b) return;
        if ((rx < 0.0) == (ra < 0.0)) {
            a = x;
            ra = rx;
        } else {
            b = x;
            rb = rx;
        }
    };
    absorb(v, r, v1, r1);

    double cur = v1, rcur = r1, rprev = r;
    bool bisect_next = false;
    for (int it = 0; it < cfg.max_iter; ++it) {
        double next = std::numeric_limits<double>::quiet_NaN();
        if (!bisect_next && std::isfinite(slope) && slope != 0.0) next = cur - rcur / slope;
        if (bracketed) {
            if (!(next > a && next < b)) next = 0.5 * (a + b);
        } else {
            if (!std::isfinite(next)) throw fail("flat functional: derivative vanished before the target was bracketed");
            next = std::clamp(next, range.lo, range.hi);
            if (next == cur) throw fail("target outside the functional's range on the clamp interval");
        }
        const double rn = eval(next);
        if (std::abs(rn) <= cfg.tol_energy) return done(next, rn);
        if (bracketed)
            absorb(next, rn, next, rn);
        else
            absorb(cur, rcur, next, rn);
        bisect_next = bracketed && std::abs(rn) > 0.5 * std::abs(rcur) && std::abs(rcur) > 0.5 * std::abs(rprev);
        slope = (rn - rcur) / (next - cur);
        rprev = rcur;
        cur = next;
        rcur = rn;
        if (bracketed && b - a <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(a)))
            throw fail("bracket collapsed without meeting the energy tolerance (discontinuous functional)");
    }
    throw fail("newton iteration limit reached");
}

template <class F>
double newton_scalar(F&& fn, double target, double v0, const NewtonConfig& cfg, Interval range) {
    return newton_solve(std::forward<F>(fn), target, v0, cfg, range).v;
}

}  // namespace shuttle

#endif
