#ifndef SHUTTLE_PIPELINE_HPP
#define SHUTTLE_PIPELINE_HPP

#include <algorithm>
#include <array>
#include <chrono>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "shuttle/bias_search.hpp"
#include "shuttle/diagnostics.hpp"
#include "shuttle/io.hpp"
#include "shuttle/model.hpp"
#include "shuttle/svg.hpp"

namespace shuttle {

namespace fs = std::filesystem;

/// Execution knobs that must never change the artifacts (timings aside,
/// which are opt-in).
struct RunOptions {
    int threads = 1;
    bool plots = true;
    bool timings = false;
};

enum ExitCode : int { exit_ok = 0, exit_error = 1, exit_tunnelling = 3 };

inline const std::array<const char*, 7>& stage_names() {
    static const std::array<const char*, 7> names{"validate", "dc", "ac", "ramp", "resample", "tile", "analyze"};
    return names;
}

class RunContext {
public:
    RunContext(fs::path device_path, DeviceSpec spec, RunConfig config, fs::path out, RunOptions opt)
        : device_path_(std::move(device_path)), spec_(std::move(spec)), config_(config), out_(std::move(out)),
          opt_(opt), dhash_(device_hash(spec_)), chash_(config_hash(config_)) {}

    const DeviceSpec& spec() const { return spec_; }
    const RunConfig& config() const { return config_; }
    const RunOptions& options() const { return opt_; }
    const fs::path& out() const { return out_; }
    fs::path file(const std::string& name) const { return out_ / name; }
    const std::string& dhash() const { return dhash_; }
    const std::string& chash() const { return chash_; }

    const DeviceModel& model() const {
        if (!model_) model_ = std::make_shared<DeviceModel>(spec_, config_.mode);
        return *model_;
    }

    std::vector<std::string> gate_names() const {
        std::vector<std::string> g;
        for (const auto& gate : spec_.gates) g.push_back(gate.name);
        return g;
    }

    json stamp(const std::string& stage) const {
        return {{"stage", stage}, {"device", spec_.name}, {"device_hash", dhash_}, {"config_hash", chash_}};
    }

    /// Upstream stage record; missing or produced under another device/config
    /// is a dependency error naming the file.
    json require(const std::string& name) const {
        const fs::path p = file(name);
        if (!fs::exists(p))
            throw DependencyError("missing upstream artifact '" + p.string() + "'; run the earlier stage first",
                                  p.string());
        const json j = read_json(p);
        if (j.value("device_hash", "") != dhash_ || j.value("config_hash", "") != chash_)
            throw DependencyError("stale upstream artifact '" + p.string() +
                                      "' (device or config changed since it was written)",
                                  p.string());
        return j;
    }

private:
    fs::path device_path_;
    DeviceSpec spec_;
    RunConfig config_;
    fs::path out_;
    RunOptions opt_;
    std::string dhash_, chash_;
    mutable std::shared_ptr<DeviceModel> model_;
};

struct StageResult {
    int exit = exit_ok;
    std::string status = "ok";
    std::vector<std::string> files;
    std::vector<std::string> warnings;
};

// ---------------------------------------------------------------------------
// json helpers

inline json to_json(const BiasPoint& b) {
    json j = json::object();
    for (const auto& [k, v] : b.voltages) j[k] = v;
    return j;
}

inline BiasPoint bias_from_json(const json& j) {
    BiasPoint b;
    for (auto it = j.begin(); it != j.end(); ++it) b[it.key()] = it.value().get<double>();
    return b;
}

inline AcResult ac_from_json(const json& j) {
    AcResult a;
    a.e0_target = j.at("e0_target_eV").get<double>();
    a.auto_target = j.at("auto_target").get<bool>();
    a.probe_gap = j.at("probe_gap_eV").get<double>();
    for (auto it = j.at("vmax").begin(); it != j.at("vmax").end(); ++it) a.vmax[it.key()] = it.value().get<double>();
    return a;
}

inline std::vector<std::string> path_names(const ModelLayout& l) {
    std::vector<std::string> out;
    for (std::size_t g : l.path) out.push_back(l.names[g]);
    return out;
}

// A schedule written by an earlier stage: bias CSV + metrics CSV.
inline ShuttleSchedule load_schedule(const RunContext& ctx, const std::string& stem, ScheduleMode mode) {
    ShuttleSchedule s;
    s.mode = mode;
    read_schedule_csv(ctx.file(stem + "_schedule.csv"), s);
    std::vector<double> t;
    read_metrics_csv(ctx.file(stem + "_metrics.csv"), t, s.metrics);
    if (t != s.times) throw InputError("'" + stem + "' schedule and metrics time stamps disagree");
    for (const auto& g : ctx.gate_names())
        for (const auto& b : s.bias_steps) (void)b.at(g);
    return s;
}

inline std::vector<std::string> save_schedule(const RunContext& ctx, const std::string& stem,
                                              const ShuttleSchedule& s) {
    write_text(ctx.file(stem + "_schedule.csv"), schedule_csv(s, ctx.gate_names()));
    write_text(ctx.file(stem + "_metrics.csv"), metrics_csv(s.times, s.metrics));
    return {stem + "_schedule.csv", stem + "_metrics.csv"};
}

inline double max_pinning_error(const std::vector<DotMetrics>& m, double target) {
    double e = 0.0;
    for (const auto& d : m) e = std::max(e, std::abs(d.e0 - target));
    return e;
}

// ---------------------------------------------------------------------------
// stages

inline StageResult stage_validate(const RunContext& ctx) {
    const DeviceSpec& s = ctx.spec();
    const Grid g = build_grid(s);
    const ModelLayout l = make_layout(s);
    json j = ctx.stamp("validate");
    j["dimension"] = to_string(s.dimension);
    j["grid"] = {g.nx, g.nz};
    j["gate_edges_aligned"] = gate_edges_aligned(s, g);
    j["gates"] = json::array();
    for (std::size_t k = 0; k < l.names.size(); ++k)
        j["gates"].push_back({{"name", l.names[k]}, {"role", to_string(l.roles[k])}, {"center_nm", l.centers[k]}});
    j["path"] = path_names(l);
    j["driven"] = json::array();
    for (std::size_t p = 0; p < l.path.size(); ++p)
        if (l.driven[p]) j["driven"].push_back(l.names[l.path[p]]);
    j["pitch_nm"] = l.pitch();
    write_json(ctx.file("validate.json"), j);
    return {exit_ok, "ok", {"validate.json"}, {}};
}

inline StageResult stage_dc(const RunContext& ctx) {
    ctx.require("validate.json");
    const SearchConfig& cfg = ctx.config().search;
    const DeviceModel& m = ctx.model();
    const FlatBandResult fb = dc_flat_band(m, cfg);

    // independent check: full Poisson solve at the returned bias
    const PotentialField f = solve_poisson(ctx.spec(), fb.bias);
    double resolved = 0.0;
    for (std::size_t g : m.layout().path) {
        const double z = ctx.spec().is_2d() ? ctx.spec().quantum.line_nm : 0.0;
        const double x = ctx.spec().is_2d() ? m.layout().centers[g] : ctx.spec().quantum.line_nm;
        resolved = std::max(resolved, std::abs(band_edge_at(f, x, z) - cfg.ec_target));
    }

    json j = ctx.stamp("dc");
    j["bias"] = to_json(fb.bias);
    j["trace_eV"] = fb.trace;
    j["sweeps"] = fb.trace.size();
    j["max_probe_error_eV"] = fb.trace.back();
    j["resolved_max_probe_error_eV"] = resolved;
    j["parasitic_depth_eV"] = fb.parasitic_depth;
    j["warnings"] = fb.warnings;
    try {
        const LeverArmResult la = lever_arm_dc(m, cfg);
        json a = json::array();
        for (Eigen::Index r = 0; r < la.matrix.alpha.rows(); ++r) {
            json row = json::array();
            for (Eigen::Index c = 0; c < la.matrix.alpha.cols(); ++c) row.push_back(la.matrix.alpha(r, c));
            a.push_back(row);
        }
        j["lever_arm"] = {{"gates", la.matrix.gates},
                          {"alpha_eV_per_V", a},
                          {"diagonally_dominant", la.matrix.diagonally_dominant},
                          {"bias", to_json(la.bias)},
                          {"max_probe_error_eV", la.max_error}};
    } catch (const Error& e) {
        j["lever_arm"] = {{"error", e.what()}};
    }
    write_json(ctx.file("dc.json"), j);
    return {exit_ok, "ok", {"dc.json"}, fb.warnings};
}

inline StageResult stage_ac(const RunContext& ctx) {
    const BiasPoint dc = bias_from_json(ctx.require("dc.json").at("bias"));
    const AcResult ac = ac_gate_amplitudes(ctx.model(), dc, ctx.config().search);
    json j = ctx.stamp("ac");
    j["e0_target_eV"] = ac.e0_target;
    j["auto_target"] = ac.auto_target;
    j["probe_gap_eV"] = ac.probe_gap;
    j["vmax"] = json::object();
    for (const auto& [k, v] : ac.vmax) j["vmax"][k] = v;
    write_json(ctx.file("ac.json"), j);
    return {exit_ok, "ok", {"ac.json"}, {}};
}

inline StageResult stage_ramp(const RunContext& ctx) {
    const BiasPoint dc = bias_from_json(ctx.require("dc.json").at("bias"));
    const AcResult ac = ac_from_json(ctx.require("ac.json"));
    const ShuttleSchedule s = ramp_schedule(ctx.model(), dc, ac, ctx.config().search);
    StageResult r;
    r.files = save_schedule(ctx, "ramp", s);
    json j = ctx.stamp("ramp");
    j["steps"] = s.size();
    j["pairs"] = ctx.model().layout().path.size() - 1;
    j["max_pinning_error_eV"] = max_pinning_error(s.metrics, ac.e0_target);
    j["files"] = r.files;
    write_json(ctx.file("ramp.json"), j);
    r.files.insert(r.files.begin(), "ramp.json");
    return r;
}

inline StageResult stage_resample(const RunContext& ctx) {
    const BiasPoint dc = bias_from_json(ctx.require("dc.json").at("bias"));
    const AcResult ac = ac_from_json(ctx.require("ac.json"));
    ctx.require("ramp.json");
    const ShuttleSchedule ramp = load_schedule(ctx, "ramp", ScheduleMode::ramp);
    json j = ctx.stamp("resample");
    StageResult r;
    try {
        ResampleInfo info;
        const ShuttleSchedule u = uniform_velocity_resample(ctx.model(), ramp, dc, ac.e0_target, ctx.config().search, &info);
        r.files = save_schedule(ctx, "uniform", u);
        j["status"] = "ok";
        j["steps"] = u.size();
        j["velocity_cv"] = info.velocity_cv;
        j["solved_gate"] = info.solved_gate;
        j["driven_fallbacks"] = info.fallbacks;
        j["max_pinning_error_eV"] = max_pinning_error(u.metrics, ac.e0_target);
        j["files"] = r.files;
        if (info.velocity_cv > 0.05) r.warnings.push_back("velocity CV " + std::to_string(info.velocity_cv) + " exceeds 5%");
    } catch (const TunnellingSuspected& e) {
        j["status"] = "tunnelling_suspected";
        j["step"] = e.step();
        j["message"] = e.what();
        r.exit = exit_tunnelling;
        r.status = "tunnelling_suspected";
        r.warnings.push_back(e.what());
    }
    write_json(ctx.file("resample.json"), j);
    r.files.insert(r.files.begin(), "resample.json");
    return r;
}

inline StageResult stage_tile(const RunContext& ctx) {
    const BiasPoint dc = bias_from_json(ctx.require("dc.json").at("bias"));
    const json rs = ctx.require("resample.json");
    json j = ctx.stamp("tile");
    StageResult r;
    if (rs.at("status") != "ok") {
        j["status"] = "skipped";
        j["reason"] = "no uniform-velocity schedule (resample status " + rs.at("status").get<std::string>() + ")";
        r.status = "skipped";
    } else {
        const ShuttleSchedule u = load_schedule(ctx, "uniform", ScheduleMode::uniform_velocity);
        const PeriodCell cell = extract_period(u, dc, ctx.model().layout());
        const ShuttleSchedule t = periodic_tile(cell, dc, ctx.model().layout(), ctx.config().search.n_periods);
        r.files = save_schedule(ctx, "periodic", t);
        j["status"] = "ok";
        j["n_periods"] = ctx.config().search.n_periods;
        j["period_steps"] = cell.period();
        j["x_advance_nm"] = cell.x_advance;
        j["steps"] = t.size();
        j["assumption"] = "waveforms copied to gates two positions apart; their cross-talk is neglected and no "
                          "step is re-solved; metrics are the single-period values translated by x_advance_nm";
        j["files"] = r.files;
    }
    write_json(ctx.file("tile.json"), j);
    r.files.insert(r.files.begin(), "tile.json");
    return r;
}

/// Re-evaluates every step's dot metrics from its bias. Steps are
/// independent, each thread writes its own slots.
inline std::vector<DotMetrics> reanalyze(const DeviceModel& m, const std::vector<BiasPoint>& bias, int threads) {
    std::vector<DotMetrics> out(bias.size());
    std::vector<std::exception_ptr> errors(bias.size());
    const auto work = [&](std::size_t begin, std::size_t stride) {
        for (std::size_t k = begin; k < bias.size(); k += stride) {
            try {
                out[k] = m.dot(bias[k]);
            } catch (...) {
                errors[k] = std::current_exception();
            }
        }
    };
    const std::size_t n = static_cast<std::size_t>(std::max(1, threads));
    if (n == 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n; ++t) pool.emplace_back(work, t, n);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

inline std::string plot_energies(const std::vector<double>& t, const std::vector<DotMetrics>& m) {
    std::vector<double> e0, e1, gap;
    for (const auto& d : m) {
        e0.push_back(1e3 * d.e0);
        e1.push_back(1e3 * d.e1);
        gap.push_back(1e3 * d.gap);
    }
    svg::Panel a{"Lowest levels", "t (a.u.)", "E (meV)", {{"E0", t, e0, "#1f77b4"}, {"E1", t, e1, "#d62728"}}};
    svg::Panel b{"Splitting", "t (a.u.)", "E1 - E0 (meV)", {{"gap", t, gap, "#2ca02c"}}};
    return svg::render({a, b});
}

inline std::string plot_position(const std::vector<double>& t, const std::vector<DotMetrics>& m) {
    std::vector<double> x, dx, ref;
    for (const auto& d : m) {
        x.push_back(d.x);
        dx.push_back(d.dx);
    }
    for (double ti : t) ref.push_back(x.front() + (x.back() - x.front()) * (ti - t.front()) / (t.back() - t.front()));
    svg::Panel a{"Dot position", "t (a.u.)", "X (nm)",
                 {{"X", t, x, "#1f77b4"}, {"constant speed", t, ref, "#2ca02c", true}}};
    svg::Panel b{"Dot size", "t (a.u.)", "dX (nm)", {{"dX", t, dx, "#ff7f0e"}}};
    return svg::render({a, b});
}

inline StageResult write_report(const RunContext* ctx, const fs::path& out, const std::string& source,
                                const std::vector<double>& times, const std::vector<DotMetrics>& metrics,
                                const Thresholds& th, const ModelLayout* layout, bool plots,
                                std::optional<double> e0_target, json base) {
    const double pitch = layout ? layout->pitch() : 0.0;
    const SequenceReport rep = analyze_sequence(times, metrics, th, pitch);
    const ModelLayout empty;
    const std::vector<GapDip> dips = gap_dip_map(metrics, layout ? *layout : empty);
    json j = std::move(base);
    j["source"] = source;
    const json body = to_json(rep, th, dips, layout ? path_names(*layout) : std::vector<std::string>{});
    for (const auto& [k, v] : body.items()) j[k] = v;
    if (e0_target) {
        j["e0_target_eV"] = *e0_target;
        j["max_pinning_error_eV"] = max_pinning_error(metrics, *e0_target);
    }
    StageResult r;
    write_json(out / "report.json", j);
    r.files.push_back("report.json");
    if (plots) {
        write_text(out / "energies.svg", plot_energies(times, metrics));
        write_text(out / "position.svg", plot_position(times, metrics));
        r.files.push_back("energies.svg");
        r.files.push_back("position.svg");
    }
    (void)ctx;
    r.status = to_string(rep.verdict);
    r.exit = rep.verdict == Verdict::tunnelling ? exit_tunnelling : exit_ok;
    if (rep.verdict == Verdict::degraded)
        r.warnings.push_back("gap minimum " + std::to_string(rep.gap_min) + " eV below warn threshold");
    return r;
}

/// Analyzes the uniform-velocity schedule, or the ramp when resampling was
/// refused. Metrics are recomputed from the stored voltages.
inline StageResult stage_analyze(const RunContext& ctx) {
    const AcResult ac = ac_from_json(ctx.require("ac.json"));
    const json rs = ctx.require("resample.json");
    const bool uniform = rs.at("status") == "ok";
    const std::string stem = uniform ? "uniform" : "ramp";
    ctx.require(uniform ? "resample.json" : "ramp.json");
    const ShuttleSchedule s = load_schedule(ctx, stem, uniform ? ScheduleMode::uniform_velocity : ScheduleMode::ramp);
    const std::vector<DotMetrics> m = reanalyze(ctx.model(), s.bias_steps, ctx.options().threads);
    json base = ctx.stamp("analyze");
    double drift = 0.0;
    for (std::size_t k = 0; k < m.size(); ++k) drift = std::max(drift, std::abs(m[k].e0 - s.metrics[k].e0));
    base["reanalysis_max_e0_change_eV"] = drift;
    return write_report(&ctx, ctx.out(), stem, s.times, m, ctx.config().thresholds, &ctx.model().layout(),
                        ctx.options().plots, ac.e0_target, std::move(base));
}

// ---------------------------------------------------------------------------
// manifest

/// Stage records live in manifest.json in pipeline order. Running stages one
/// by one rewrites the same records a pipeline run writes.
inline void record_stage(const RunContext& ctx, const std::string& stage, const StageResult& r,
                         const std::optional<std::pair<std::string, std::string>>& error, double seconds) {
    const fs::path p = ctx.file("manifest.json");
    json m;
    if (fs::exists(p)) {
        try {
            m = read_json(p);
        } catch (const Error&) {
            m = json();
        }
    }
    if (!m.is_object() || m.value("device_hash", "") != ctx.dhash() || m.value("config_hash", "") != ctx.chash())
        m = json::object();
    m["device"] = ctx.spec().name;
    m["device_hash"] = ctx.dhash();
    m["config_hash"] = ctx.chash();
    m["config"] = to_json(ctx.config());
    json stages = m.value("stages", json::object());
    json rec = {{"status", error ? "error" : r.status}, {"files", r.files}, {"warnings", r.warnings}};
    if (error) rec["error"] = {{"kind", error->first}, {"message", error->second}};
    if (ctx.options().timings) rec["seconds"] = seconds;
    stages[stage] = rec;
    // later stages are invalidated when an earlier one is rerun
    bool after = false;
    for (const char* s : stage_names()) {
        if (after) stages.erase(s);
        after |= stage == s;
    }
    json ordered = json::array(), files = json::array(), warnings = json::array();
    for (const char* s : stage_names()) {
        if (!stages.contains(s)) continue;
        json e = stages[s];
        e["name"] = s;
        ordered.push_back(e);
        for (const auto& f : stages[s]["files"]) files.push_back(f);
        for (const auto& w : stages[s]["warnings"]) warnings.push_back(std::string(s) + ": " + w.get<std::string>());
    }
    m["stages"] = stages;
    m["stage_order"] = json::array();
    for (const auto& e : ordered) m["stage_order"].push_back(e["name"]);
    files.push_back("manifest.json");
    m["files"] = files;
    m["warnings"] = warnings;
    write_json(p, m);
}

inline int run_stage(const RunContext& ctx, const std::string& stage, std::ostream& err = std::cerr) {
    static const std::map<std::string, std::function<StageResult(const RunContext&)>> table{
        {"validate", stage_validate}, {"dc", stage_dc},     {"ac", stage_ac},          {"ramp", stage_ramp},
        {"resample", stage_resample}, {"tile", stage_tile}, {"analyze", stage_analyze}};
    const auto it = table.find(stage);
    if (it == table.end()) throw InputError("unknown stage '" + stage + "'");
    fs::create_directories(ctx.out());
    const auto t0 = std::chrono::steady_clock::now();
    StageResult r;
    std::optional<std::pair<std::string, std::string>> error;
    try {
        r = it->second(ctx);
    } catch (const Error& e) {
        error = {{e.kind(), e.what()}};
    } catch (const std::exception& e) {
        error = {{"error", e.what()}};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    record_stage(ctx, stage, r, error, secs);
    if (error) {
        err << "stage " << stage << " failed (" << error->first << "): " << error->second << "\n";
        return exit_error;
    }
    for (const auto& w : r.warnings) err << "warning [" << stage << "]: " << w << "\n";
    return r.exit;
}

inline int run_pipeline(const RunContext& ctx, std::ostream& err = std::cerr) {
    int last = exit_ok;
    for (const char* s : stage_names()) {
        last = run_stage(ctx, s, err);
        if (last == exit_error) return exit_error;
    }
    return last;  // the analyze verdict
}

}  // namespace shuttle

#endif
