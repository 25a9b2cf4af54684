#ifndef SHUTTLE_BIAS_SEARCH_HPP
#define SHUTTLE_BIAS_SEARCH_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "shuttle/device.hpp"
#include "shuttle/error.hpp"
#include "shuttle/model.hpp"
#include "shuttle/newton.hpp"

namespace shuttle {

struct SweepConfig {
    int max_sweeps = 10;
    double tol_flatband = 1e-5;  // eV
    bool operator==(const SweepConfig&) const = default;
};

struct SearchConfig {
    double ec_target = 0.005;          // eV
    std::optional<double> e0_target;  // eV; empty means auto
    NewtonConfig newton;
    SweepConfig sweep;
    int ramp_samples = 61;       // K, per gate pair
    int resample_points = 41;    // M
    Interval v_clamp{0.0, 2.0};  // AC search window, relative to each gate's DC value
    Interval dc_clamp{-3.0, 3.0};  // absolute window of the flat-band search
    double probe_amplitude = 0.1;  // V above DC for the auto E0 target probe dot
    int n_periods = 3;

    bool operator==(const SearchConfig&) const = default;

    void validate() const {
        if (!(newton.tol_energy > 0.0) || !(sweep.tol_flatband > 0.0)) throw InputError("tolerances must be > 0");
        if (!(newton.fd_step > 0.0)) throw InputError("newton.fd_step must be > 0");
        if (newton.max_iter < 1 || sweep.max_sweeps < 1) throw InputError("iteration limits must be >= 1");
        if (ramp_samples < 3) throw InputError("ramp_samples must be >= 3");
        if (resample_points < 3) throw InputError("resample_points must be >= 3");
        if (!(v_clamp.lo < v_clamp.hi)) throw InputError("v_clamp needs v_min < v_max");
        if (!(dc_clamp.lo < dc_clamp.hi)) throw InputError("dc_clamp needs v_min < v_max");
        if (n_periods < 1) throw InputError("n_periods must be >= 1");
        if (!std::isfinite(ec_target) || (e0_target && !std::isfinite(*e0_target)))
            throw InputError("targets must be finite");
    }
};

enum class ScheduleMode { ramp, uniform_velocity, periodic };

inline std::string to_string(ScheduleMode m) {
    switch (m) {
        case ScheduleMode::ramp: return "ramp";
        case ScheduleMode::uniform_velocity: return "uniform_velocity";
        case ScheduleMode::periodic: return "periodic";
    }
    return "?";
}

struct ShuttleSchedule {
    ScheduleMode mode = ScheduleMode::ramp;
    std::vector<double> times;
    std::vector<BiasPoint> bias_steps;
    std::vector<DotMetrics> metrics;

    std::size_t size() const { return times.size(); }
    std::vector<double> series(double DotMetrics::*field) const {
        std::vector<double> out;
        out.reserve(metrics.size());
        for (const auto& m : metrics) out.push_back(m.*field);
        return out;
    }
};

inline void check_schedule(const ShuttleSchedule& s) {
    if (s.bias_steps.size() != s.times.size() || s.metrics.size() != s.times.size())
        throw InputError("schedule columns have different lengths");
    for (std::size_t k = 1; k < s.times.size(); ++k)
        if (!(s.times[k] > s.times[k - 1])) throw InputError("schedule times are not strictly increasing");
}

// ---------------------------------------------------------------------------
// DC flat band

struct FlatBandResult {
    BiasPoint bias;
    std::vector<double> trace;  // max |E_C - target| over probes after each sweep
    double parasitic_depth = 0.0;  // deepest parasitic well below ec_target, eV
    std::vector<std::string> warnings;
};

/// Deepest interior local minimum of the channel profile outside the probe
/// span, measured downwards from ec_target.
inline double parasitic_well_depth(const LineProfile& p, double span_lo, double span_hi, double ec_target) {
    double depth = 0.0;
    for (std::size_t i = 1; i + 1 < p.ec.size(); ++i) {
        if (p.x[i] >= span_lo && p.x[i] <= span_hi) continue;
        if (p.ec[i] < p.ec[i - 1] && p.ec[i] <= p.ec[i + 1]) depth = std::max(depth, ec_target - p.ec[i]);
    }
    return depth;
}

template <ShuttleModel M>
double max_probe_error(const M& model, const BiasPoint& bias, double target) {
    double worst = 0.0;
    for (std::size_t g : model.layout().path) worst = std::max(worst, std::abs(model.probe_ec(bias, g) - target));
    return worst;
}

/// Gauss-Seidel sweeps over the shuttling gates in layout order, each gate
/// Newton-solved so that E_C at its probe equals ec_target.
template <ShuttleModel M>
FlatBandResult dc_flat_band(const M& model, const SearchConfig& cfg) {
    cfg.validate();
    const ModelLayout& l = model.layout();
    if (l.path.empty()) throw SetupError("device has no shuttling gates");
    FlatBandResult out;
    out.bias = l.hold;
    for (std::size_t g : l.path) out.bias[l.names[g]] = std::clamp(out.bias.at(l.names[g]), cfg.dc_clamp.lo, cfg.dc_clamp.hi);

    bool converged = false;
    for (int sweep = 0; sweep < cfg.sweep.max_sweeps && !converged; ++sweep) {
        for (std::size_t g : l.path) {
            const std::string& name = l.names[g];
            BiasPoint trial = out.bias;
            const auto fn = [&](double v) {
                trial[name] = v;
                return model.probe_ec(trial, g);
            };
            try {
                out.bias[name] = newton_scalar(fn, cfg.ec_target, out.bias.at(name), cfg.newton, cfg.dc_clamp);
            } catch (const NonConvergenceError& e) {
                throw NonConvergenceError("flat-band solve for gate '" + name + "': " + e.what(), e.best_voltage(),
                                          e.best_residual());
            }
        }
        out.trace.push_back(max_probe_error(model, out.bias, cfg.ec_target));
        converged = out.trace.back() <= cfg.sweep.tol_flatband;
    }
    if (!converged) {
        std::string t;
        for (double e : out.trace) t += (t.empty() ? "" : ", ") + std::to_string(e);
        throw ConvergenceError("flat band not reached in " + std::to_string(cfg.sweep.max_sweeps) +
                                   " sweeps; max probe error per sweep: " + t,
                               out.trace.back());
    }

    double lo = l.centers[l.path.front()], hi = lo;
    for (std::size_t g : l.path) {
        lo = std::min(lo, l.centers[g]);
        hi = std::max(hi, l.centers[g]);
    }
    out.parasitic_depth = parasitic_well_depth(model.line_profile(out.bias), lo, hi, cfg.ec_target);
    if (out.parasitic_depth > 0.0 && cfg.ec_target < 2.0 * out.parasitic_depth)
        out.warnings.push_back("ec_target " + std::to_string(cfg.ec_target) +
                               " eV is less than twice the deepest parasitic edge well (" +
                               std::to_string(out.parasitic_depth) + " eV)");
    return out;
}

// ---------------------------------------------------------------------------
// lever-arm alternative

struct LeverArmMatrix {
    std::vector<std::string> gates;  // path order
    Eigen::MatrixXd alpha;           // alpha(i, j) = dE_i / dV_j, eV / V
    bool diagonally_dominant = false;
};

struct LeverArmResult {
    BiasPoint bias;
    LeverArmMatrix matrix;
    double max_error = 0.0;  // post-hoc max |E_C - target| at the returned bias
};

template <ShuttleModel M>
LeverArmResult lever_arm_dc(const M& model, const SearchConfig& cfg, std::optional<BiasPoint> reference = {}) {
    cfg.validate();
    const ModelLayout& l = model.layout();
    const std::size_t n = l.path.size();
    if (n == 0) throw SetupError("device has no shuttling gates");
    const BiasPoint ref = reference ? *reference : l.hold;

    std::vector<double> e_ref(n);
    for (std::size_t i = 0; i < n; ++i) e_ref[i] = model.probe_ec(ref, l.path[i]);

    LeverArmResult out;
    out.matrix.alpha = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < n; ++j) {
        BiasPoint b = ref;
        b[l.names[l.path[j]]] += cfg.newton.fd_step;
        for (std::size_t i = (j ? j - 1 : 0); i <= std::min(n - 1, j + 1); ++i)
            out.matrix.alpha(i, j) = (model.probe_ec(b, l.path[i]) - e_ref[i]) / cfg.newton.fd_step;
    }
    for (std::size_t g : l.path) out.matrix.gates.push_back(l.names[g]);

    out.matrix.diagonally_dominant = true;
    for (std::size_t i = 0; i < n; ++i) {
        double off = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) off += std::abs(out.matrix.alpha(i, j));
        out.matrix.diagonally_dominant &= std::abs(out.matrix.alpha(i, i)) > off;
    }

    Eigen::VectorXd rhs(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) rhs[i] = cfg.ec_target - e_ref[i];
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(out.matrix.alpha);
    if (!lu.isInvertible()) throw NumericError("lever-arm matrix is singular");
    const Eigen::VectorXd dv = lu.solve(rhs);

    out.bias = ref;
    for (std::size_t i = 0; i < n; ++i) out.bias[l.names[l.path[i]]] += dv[i];
    out.max_error = max_probe_error(model, out.bias, cfg.ec_target);
    return out;
}

// ---------------------------------------------------------------------------
// AC amplitudes

struct AcResult {
    std::map<std::string, double> vmax;
    double e0_target = 0.0;
    bool auto_target = false;
    double probe_gap = 0.0;  // E1 - E0 of the bootstrap dot when auto
};

inline Interval ac_window(const BiasPoint& dc, const std::string& gate, const SearchConfig& cfg) {
    const double v = dc.at(gate);
    return {v + cfg.v_clamp.lo, v + cfg.v_clamp.hi};
}

/// E0^T = -(E1 - E0) / 2 of a dot formed under the first shuttling gate at
/// DC + probe_amplitude.
template <ShuttleModel M>
double auto_e0_target(const M& model, const BiasPoint& dc, const SearchConfig& cfg, double* gap = nullptr) {
    const ModelLayout& l = model.layout();
    BiasPoint b = dc;
    b[l.names[l.path.front()]] += cfg.probe_amplitude;
    const DotMetrics m = model.dot(b);
    if (!(m.e0 < 0.0))
        throw SetupError("probe dot under '" + l.names[l.path.front()] + "' is unbound (E0 = " + std::to_string(m.e0) +
                         " eV); increase probe_amplitude");
    if (gap) *gap = m.gap;
    return -0.5 * m.gap;
}

template <ShuttleModel M>
AcResult ac_gate_amplitudes(const M& model, const BiasPoint& dc, const SearchConfig& cfg) {
    cfg.validate();
    const ModelLayout& l = model.layout();
    if (l.path.empty()) throw SetupError("device has no shuttling gates");
    AcResult out;
    if (cfg.e0_target) {
        out.e0_target = *cfg.e0_target;
    } else {
        out.auto_target = true;
        out.e0_target = auto_e0_target(model, dc, cfg, &out.probe_gap);
    }
    for (std::size_t g : l.path) {
        const std::string& name = l.names[g];
        BiasPoint b = dc;
        const auto fn = [&](double v) {
            b[name] = v;
            return model.dot(b).e0;
        };
        const Interval w = ac_window(dc, name, cfg);
        try {
            out.vmax[name] = newton_scalar(fn, out.e0_target, dc.at(name) + cfg.probe_amplitude, cfg.newton, w);
        } catch (const NonConvergenceError& e) {
            throw NonConvergenceError("AC amplitude for gate '" + name + "': " + e.what(), e.best_voltage(),
                                      e.best_residual());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// conveyor ramp

namespace detail {

inline void check_pinning(const DotMetrics& m, double target, double tol, std::size_t step) {
    if (!(std::abs(m.e0 - target) <= tol))
        throw ConsistencyError("E0 pinning violated at step " + std::to_string(step) + ": E0 = " +
                               std::to_string(m.e0) + " eV, target " + std::to_string(target) + " eV");
}

// Solve `gate` so that E0 = target, recording the metrics at the solution.
template <ShuttleModel M>
DotMetrics solve_companion(const M& model, BiasPoint& bias, const std::string& gate, double v0, Interval window,
                           double target, const NewtonConfig& cfg) {
    std::map<double, DotMetrics> seen;
    BiasPoint trial = bias;
    const auto fn = [&](double v) {
        trial[gate] = v;
        const DotMetrics m = model.dot(trial);
        seen[v] = m;
        return m.e0;
    };
    const double v = newton_scalar(fn, target, v0, cfg, window);
    bias[gate] = v;
    return seen.at(v);
}

}  // namespace detail

/// For each adjacent pair (a, b) along the path the driven gate a falls
/// linearly from V_a^max to DC over K steps while b is re-solved to hold
/// E0 = E0^T. The first step of every later pair repeats the last state of
/// the previous pair and is dropped.
template <ShuttleModel M>
ShuttleSchedule ramp_schedule(const M& model, const BiasPoint& dc, const AcResult& ac, const SearchConfig& cfg) {
    cfg.validate();
    const ModelLayout& l = model.layout();
    if (l.path.size() < 2) throw SetupError("shuttling needs at least two gates on the path");
    const int K = cfg.ramp_samples;

    ShuttleSchedule s;
    s.mode = ScheduleMode::ramp;
    BiasPoint bias = dc;
    for (std::size_t p = 0; p + 1 < l.path.size(); ++p) {
        const std::string& a = l.names[l.path[p]];
        const std::string& b = l.names[l.path[p + 1]];
        const double va = ac.vmax.at(a), da = dc.at(a);
        for (int k = (p == 0 ? 0 : 1); k < K; ++k) {
            // written as DC plus a non-negative AC part so rounding never takes it below DC
            bias[a] = da + (va - da) * static_cast<double>(K - 1 - k) / (K - 1);
            const std::size_t step = s.size();
            DotMetrics m;
            try {
                m = detail::solve_companion(model, bias, b, bias.at(b), ac_window(dc, b, cfg), ac.e0_target, cfg.newton);
            } catch (const NonConvergenceError& e) {
                throw NonConvergenceError("ramp step " + std::to_string(step) + " (" + a + " -> " + b +
                                              "): " + e.what(),
                                          e.best_voltage(), e.best_residual());
            }
            detail::check_pinning(m, ac.e0_target, cfg.newton.tol_energy, step);
            s.times.push_back(static_cast<double>(step));
            s.bias_steps.push_back(bias);
            s.metrics.push_back(m);
        }
        bias[a] = da;
    }
    return s;
}

// ---------------------------------------------------------------------------
// constant-velocity re-discretization

inline double coefficient_of_variation(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    if (mean == 0.0) return var == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return std::sqrt(var) / std::abs(mean);
}

/// Forward differences of X on the unit time grid.
inline std::vector<double> step_velocity(const ShuttleSchedule& s) {
    std::vector<double> v;
    for (std::size_t k = 0; k + 1 < s.size(); ++k)
        v.push_back((s.metrics[k + 1].x - s.metrics[k].x) / (s.times[k + 1] - s.times[k]));
    return v;
}

/// Piecewise-linear interpolation on increasing abscissae.
inline double interpolate(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
    if (x <= xs.front()) return ys.front();
    if (x >= xs.back()) return ys.back();
    const auto it = std::upper_bound(xs.begin(), xs.end(), x);
    const std::size_t k = static_cast<std::size_t>(it - xs.begin());
    const double t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
    const double y = ys[k - 1] + t * (ys[k] - ys[k - 1]);
    // rounding must not leave the bracket: a gate ramped down to DC would dip below it
    return std::clamp(y, std::min(ys[k - 1], ys[k]), std::max(ys[k - 1], ys[k]));
}

struct ResampleInfo {
    double velocity_cv = 0.0;
    std::vector<std::string> solved_gate;  // per step
    std::size_t fallbacks = 0;             // steps where a driven gate had to be re-solved
};

template <ShuttleModel M>
ShuttleSchedule uniform_velocity_resample(const M& model, const ShuttleSchedule& ramp, const BiasPoint& dc,
                                          double e0_target, const SearchConfig& cfg, ResampleInfo* info = nullptr) {
    cfg.validate();
    check_schedule(ramp);
    const ModelLayout& l = model.layout();
    const std::size_t n = ramp.size();
    if (n < 2) throw InputError("ramp schedule too short to resample");

    std::vector<double> xs = ramp.series(&DotMetrics::x);
    const bool increasing = xs.back() > xs.front();
    for (std::size_t k = 1; k < n; ++k)
        if (increasing ? !(xs[k] > xs[k - 1]) : !(xs[k] < xs[k - 1]))
            throw TunnellingSuspected("dot position is not strictly monotone at ramp step " + std::to_string(k) +
                                          "; run the diagnostics on the ramp schedule",
                                      k);
    std::vector<std::size_t> order(n);
    for (std::size_t k = 0; k < n; ++k) order[k] = increasing ? k : n - 1 - k;
    std::vector<double> sx(n);
    for (std::size_t k = 0; k < n; ++k) sx[k] = xs[order[k]];
    std::map<std::string, std::vector<double>> curves;
    for (const auto& name : l.names) {
        auto& c = curves[name];
        for (std::size_t k = 0; k < n; ++k) c.push_back(ramp.bias_steps[order[k]].at(name));
    }

    const auto nearest = [&](double x, bool driven_class) -> std::optional<std::size_t> {
        std::optional<std::size_t> best;
        for (std::size_t p = 0; p < l.path.size(); ++p) {
            if (l.driven[p] != driven_class) continue;
            if (!best || std::abs(l.centers[l.path[p]] - x) < std::abs(l.centers[l.path[*best]] - x)) best = p;
        }
        return best;
    };

    ResampleInfo local;
    ShuttleSchedule out;
    out.mode = ScheduleMode::uniform_velocity;
    const int points = cfg.resample_points;
    for (int m = 0; m < points; ++m) {
        const double x = xs.front() + (xs.back() - xs.front()) * static_cast<double>(m) / (points - 1);
        BiasPoint bias;
        for (const auto& name : l.names) bias[name] = interpolate(sx, curves.at(name), x);

        DotMetrics metrics;
        std::string solved;
        std::optional<std::size_t> companion = nearest(x, false);
        std::optional<NonConvergenceError> first_failure;
        if (companion) {
            solved = l.names[l.path[*companion]];
            try {
                metrics = detail::solve_companion(model, bias, solved, bias.at(solved), ac_window(dc, solved, cfg),
                                                  e0_target, cfg.newton);
            } catch (const NonConvergenceError& e) {
                first_failure = e;
            }
        }
        if (!companion || first_failure) {
            // the companion cannot reach the target inside its window (it would have
            // to drop below DC); move the nearest driven gate instead
            const auto driven = nearest(x, true);
            if (!driven) throw *first_failure;
            if (companion) bias[solved] = interpolate(sx, curves.at(solved), x);
            solved = l.names[l.path[*driven]];
            try {
                metrics = detail::solve_companion(model, bias, solved, bias.at(solved), ac_window(dc, solved, cfg),
                                                  e0_target, cfg.newton);
            } catch (const NonConvergenceError& e) {
                throw NonConvergenceError("resample step " + std::to_string(m) + " (gate " + solved + "): " + e.what(),
                                          e.best_voltage(), e.best_residual());
            }
            ++local.fallbacks;
        }
        detail::check_pinning(metrics, e0_target, cfg.newton.tol_energy, static_cast<std::size_t>(m));
        out.times.push_back(static_cast<double>(m));
        out.bias_steps.push_back(std::move(bias));
        out.metrics.push_back(metrics);
        local.solved_gate.push_back(solved);
    }
    local.velocity_cv = coefficient_of_variation(step_velocity(out));
    if (info) *info = std::move(local);
    return out;
}

// ---------------------------------------------------------------------------
// periodic assembly

/// One conveyor period cut from a uniform-velocity schedule: the AC
/// waveforms of path positions 0 (even class) and 1 (odd class) over the
/// time the dot needs to advance two gates.
struct PeriodCell {
    std::vector<double> even;  // path positions 0, 2, 4, ...
    std::vector<double> odd;   // path positions 1, 3, 5, ...
    std::vector<DotMetrics> metrics;
    double x_advance = 0.0;  // nm per period

    std::size_t period() const { return even.size(); }
};

/// Cell boundaries: from the first step to the step where the gate two
/// positions down the path peaks (exclusive). A two-gate path is one cell.
/// Within the cell the even template is AC(g0) + AC(g2): the well leaving g0
/// and the next well arriving.
inline PeriodCell extract_period(const ShuttleSchedule& s, const BiasPoint& dc, const ModelLayout& l) {
    check_schedule(s);
    if (l.path.size() < 2) throw SetupError("periodic assembly needs at least two path gates");
    const auto ac = [&](std::size_t k, std::size_t pos) {
        const std::string& g = l.names[l.path[pos]];
        return s.bias_steps[k].at(g) - dc.at(g);
    };
    PeriodCell c;
    std::size_t end = s.size();
    if (l.path.size() >= 3) {
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < s.size(); ++k)
            if (ac(k, 2) > peak) {
                peak = ac(k, 2);
                end = k;
            }
        if (end == 0) throw SetupError("third path gate never peaks; schedule does not span a period");
        c.x_advance = s.metrics[end].x - s.metrics[0].x;
    } else {
        const double step = s.size() > 1 ? (s.metrics.back().x - s.metrics.front().x) / (s.size() - 1) : 0.0;
        c.x_advance = s.metrics.back().x - s.metrics.front().x + step;
    }
    for (std::size_t k = 0; k < end; ++k) {
        c.even.push_back(ac(k, 0) + (l.path.size() >= 3 ? ac(k, 2) : 0.0));
        c.odd.push_back(ac(k, 1));
        c.metrics.push_back(s.metrics[k]);
    }
    return c;
}

/// Gate at path position i follows template (i mod 2) delayed by floor(i/2)
/// periods; no re-solving, cross-talk between gates two apart is neglected.
inline ShuttleSchedule periodic_tile(const PeriodCell& cell, const BiasPoint& dc, const ModelLayout& l, int n_periods) {
    if (n_periods < 1) throw InputError("n_periods must be >= 1");
    const std::size_t T = cell.period();
    if (T == 0) throw InputError("empty period cell");
    ShuttleSchedule s;
    s.mode = ScheduleMode::periodic;
    const std::size_t total = T * static_cast<std::size_t>(n_periods);
    for (std::size_t t = 0; t < total; ++t) {
        BiasPoint b = dc;
        for (std::size_t p = 0; p < l.path.size(); ++p) {
            const std::size_t delay = (p / 2) * T;
            const std::size_t phase = (t + total * T - delay) % T;  // (t - delay) mod T, unsigned-safe
            const auto& tpl = p % 2 == 0 ? cell.even : cell.odd;
            b[l.names[l.path[p]]] = dc.at(l.names[l.path[p]]) + tpl[phase];
        }
        DotMetrics m = cell.metrics[t % T];
        m.x += static_cast<double>(t / T) * cell.x_advance;
        s.times.push_back(static_cast<double>(t));
        s.bias_steps.push_back(std::move(b));
        s.metrics.push_back(m);
    }
    return s;
}

}  // namespace shuttle

#endif
