#ifndef SHUTTLE_DIAGNOSTICS_HPP
#define SHUTTLE_DIAGNOSTICS_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "shuttle/bias_search.hpp"
#include "shuttle/model.hpp"

namespace shuttle {

enum class Verdict { conveyor, tunnelling, degraded };

inline std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::conveyor: return "conveyor";
        case Verdict::tunnelling: return "tunnelling";
        case Verdict::degraded: return "degraded";
    }
    return "?";
}

struct Thresholds {
    double gap_eV = 1e-4;
    std::optional<double> jump_nm;  // empty: half the gate pitch
    double warn_gap_eV = 5e-4;
    bool operator==(const Thresholds&) const = default;
};

struct TunnellingEvent {
    std::size_t step_index = 0;  // smallest gap inside the flagged run
    std::size_t first_step = 0, last_step = 0;
    double gap_at_event = 0.0;   // eV
    double x_jump = 0.0;         // nm, |x(last + 1) - x(first - 1)|
    double dx_spike_ratio = 0.0; // max dx over the run / median dx of the sequence
};

struct SequenceReport {
    std::size_t steps = 0;
    double gap_min = 0.0;
    std::size_t gap_min_index = 0;
    std::vector<double> gap_series, x_series, dx_series, pmax_series;
    std::vector<double> velocity;  // nm per time unit, between consecutive steps
    double velocity_cv = 0.0;
    std::vector<TunnellingEvent> events;
    Verdict verdict = Verdict::conveyor;
    double jump_threshold_nm = 0.0;  // resolved
};

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const std::size_t m = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end());
    if (v.size() % 2) return v[m];
    const double hi = v[m];
    return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m)));
}

/// `pitch` resolves the default jump threshold; pass 0 when thresholds.jump_nm is set.
inline SequenceReport analyze_sequence(const std::vector<double>& times, const std::vector<DotMetrics>& metrics,
                                       const Thresholds& th, double pitch) {
    const std::size_t n = metrics.size();
    if (times.size() != n) throw InputError("metrics and time stamps differ in length");
    if (n < 3) throw InputError("analysis needs at least 3 steps with metrics, got " + std::to_string(n));
    for (std::size_t k = 1; k < n; ++k)
        if (!(times[k] > times[k - 1])) throw InputError("time stamps are not strictly increasing");
    for (const auto& m : metrics)
        if (!std::isfinite(m.gap) || !std::isfinite(m.x) || !std::isfinite(m.dx) || !std::isfinite(m.p_max))
            throw InputError("metrics contain non-finite values");

    SequenceReport r;
    r.steps = n;
    r.jump_threshold_nm = th.jump_nm ? *th.jump_nm : 0.5 * pitch;
    if (!(r.jump_threshold_nm > 0.0)) throw InputError("jump threshold must be > 0 (no gate pitch available)");
    for (const auto& m : metrics) {
        r.gap_series.push_back(m.gap);
        r.x_series.push_back(m.x);
        r.dx_series.push_back(m.dx);
        r.pmax_series.push_back(m.p_max);
    }
    const auto lo = std::min_element(r.gap_series.begin(), r.gap_series.end());
    r.gap_min = *lo;
    r.gap_min_index = static_cast<std::size_t>(lo - r.gap_series.begin());
    for (std::size_t k = 0; k + 1 < n; ++k)
        r.velocity.push_back((r.x_series[k + 1] - r.x_series[k]) / (times[k + 1] - times[k]));
    r.velocity_cv = coefficient_of_variation(r.velocity);

    const double dx_median = median(r.dx_series);
    std::vector<bool> flagged(n, false);
    for (std::size_t k = 1; k + 1 < n; ++k)
        flagged[k] = r.gap_series[k] < th.gap_eV &&
                     std::abs(r.x_series[k + 1] - r.x_series[k - 1]) > r.jump_threshold_nm;
    // one physical transfer usually flags the two steps around the jump
    for (std::size_t k = 1; k + 1 < n;) {
        if (!flagged[k]) {
            ++k;
            continue;
        }
        TunnellingEvent e;
        e.first_step = k;
        while (k + 1 < n && flagged[k]) ++k;
        e.last_step = k - 1;
        e.step_index = e.first_step;
        double dx_peak = 0.0;
        for (std::size_t j = e.first_step; j <= e.last_step; ++j) {
            if (r.gap_series[j] < r.gap_series[e.step_index]) e.step_index = j;
            dx_peak = std::max(dx_peak, r.dx_series[j]);
        }
        e.gap_at_event = r.gap_series[e.step_index];
        e.x_jump = std::abs(r.x_series[e.last_step + 1] - r.x_series[e.first_step - 1]);
        e.dx_spike_ratio = dx_median > 0.0 ? dx_peak / dx_median : std::numeric_limits<double>::infinity();
        r.events.push_back(e);
    }

    if (!r.events.empty())
        r.verdict = Verdict::tunnelling;
    else if (r.gap_min < th.warn_gap_eV)
        r.verdict = Verdict::degraded;
    else
        r.verdict = Verdict::conveyor;
    return r;
}

inline SequenceReport analyze_sequence(const ShuttleSchedule& s, const Thresholds& th, double pitch) {
    return analyze_sequence(s.times, s.metrics, th, pitch);
}

struct GapDip {
    std::size_t step = 0;
    double x = 0.0;       // nm
    double gap = 0.0;     // eV
    double depth = 0.0;   // eV, rise to the lower of the two flanking maxima
    double midpoint = 0.0;  // nearest midpoint between adjacent path gate centers, nm
    std::size_t left_gate = 0, right_gate = 0;  // path positions around that midpoint
    bool between_centers = false;  // x strictly inside (center_left, center_right)
};

/// Local minima of the gap along the schedule; endpoints never count.
inline std::vector<GapDip> gap_dip_map(const std::vector<DotMetrics>& metrics, const ModelLayout& l) {
    const std::size_t n = metrics.size();
    std::vector<std::size_t> minima;
    for (std::size_t k = 1; k + 1 < n; ++k)
        if (metrics[k].gap < metrics[k - 1].gap && metrics[k].gap <= metrics[k + 1].gap) minima.push_back(k);

    std::vector<double> centers;
    for (std::size_t g : l.path) centers.push_back(l.centers[g]);

    std::vector<GapDip> out;
    for (std::size_t i = 0; i < minima.size(); ++i) {
        const std::size_t k = minima[i];
        const std::size_t a = i ? minima[i - 1] : 0, b = i + 1 < minima.size() ? minima[i + 1] : n - 1;
        double left = 0.0, right = 0.0;
        for (std::size_t j = a; j <= k; ++j) left = std::max(left, metrics[j].gap);
        for (std::size_t j = k; j <= b; ++j) right = std::max(right, metrics[j].gap);

        GapDip d;
        d.step = k;
        d.x = metrics[k].x;
        d.gap = metrics[k].gap;
        d.depth = std::min(left, right) - d.gap;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t p = 0; p + 1 < centers.size(); ++p) {
            const double mid = 0.5 * (centers[p] + centers[p + 1]);
            if (std::abs(d.x - mid) < best) {
                best = std::abs(d.x - mid);
                d.midpoint = mid;
                d.left_gate = p;
                d.right_gate = p + 1;
            }
        }
        if (centers.size() >= 2) {
            const double c0 = std::min(centers[d.left_gate], centers[d.right_gate]);
            const double c1 = std::max(centers[d.left_gate], centers[d.right_gate]);
            d.between_centers = d.x > c0 && d.x < c1;
        }
        out.push_back(d);
    }
    return out;
}

inline nlohmann::json to_json(const Thresholds& th) {
    nlohmann::json j = {{"gap_eV", th.gap_eV}, {"warn_gap_eV", th.warn_gap_eV}};
    j["jump_nm"] = th.jump_nm ? nlohmann::json(*th.jump_nm) : nlohmann::json(nullptr);
    return j;
}

inline nlohmann::json to_json(const SequenceReport& r, const Thresholds& th, const std::vector<GapDip>& dips,
                              const std::vector<std::string>& path) {
    using nlohmann::json;
    json j;
    j["verdict"] = to_string(r.verdict);
    j["steps"] = r.steps;
    j["gap_min_eV"] = r.gap_min;
    j["gap_min_index"] = r.gap_min_index;
    j["velocity_cv"] = r.velocity_cv;
    j["thresholds"] = to_json(th);
    j["thresholds"]["jump_nm_resolved"] = r.jump_threshold_nm;
    j["events"] = json::array();
    for (const auto& e : r.events)
        j["events"].push_back({{"step_index", e.step_index},
                               {"first_step", e.first_step},
                               {"last_step", e.last_step},
                               {"gap_at_event_eV", e.gap_at_event},
                               {"x_jump_nm", e.x_jump},
                               {"dx_spike_ratio", e.dx_spike_ratio}});
    j["gap_dips"] = json::array();
    for (const auto& d : dips) {
        json dj = {{"step", d.step}, {"x_nm", d.x}, {"gap_eV", d.gap}, {"depth_eV", d.depth},
                   {"between_centers", d.between_centers}};
        if (d.left_gate < path.size() && d.right_gate < path.size()) {
            dj["midpoint_nm"] = d.midpoint;
            dj["between"] = {path[d.left_gate], path[d.right_gate]};
        }
        j["gap_dips"].push_back(dj);
    }
    return j;
}

}  // namespace shuttle

#endif
