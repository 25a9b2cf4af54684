#ifndef SHUTTLE_IO_HPP
#define SHUTTLE_IO_HPP

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "shuttle/bias_search.hpp"
#include "shuttle/diagnostics.hpp"

namespace shuttle {

using nlohmann::json;

/// Everything a run is parameterized by, apart from the device and the
/// execution knobs (threads, plots) that must not change results.
struct RunConfig {
    SearchConfig search;
    Thresholds thresholds;
    QuantumMode mode = QuantumMode::line;
    bool operator==(const RunConfig&) const = default;
};

inline json to_json(const RunConfig& c) {
    const SearchConfig& s = c.search;
    json j;
    j["ec_target"] = s.ec_target;
    j["e0_target"] = s.e0_target ? json(*s.e0_target) : json("auto");
    j["newton"] = {{"tol_energy", s.newton.tol_energy}, {"max_iter", s.newton.max_iter}, {"fd_step", s.newton.fd_step}};
    j["sweep"] = {{"max_sweeps", s.sweep.max_sweeps}, {"tol_flatband", s.sweep.tol_flatband}};
    j["ramp_samples"] = s.ramp_samples;
    j["resample_points"] = s.resample_points;
    j["v_clamp"] = {{"v_min", s.v_clamp.lo}, {"v_max", s.v_clamp.hi}};
    j["dc_clamp"] = {{"v_min", s.dc_clamp.lo}, {"v_max", s.dc_clamp.hi}};
    j["probe_amplitude"] = s.probe_amplitude;
    j["n_periods"] = s.n_periods;
    j["mode"] = to_string(c.mode);
    j["analysis"] = to_json(c.thresholds);
    return j;
}

namespace detail {

inline void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : keys) known |= it.key() == k;
        if (!known) throw InputError("unknown config key '" + where + it.key() + "'");
    }
}

inline double num(const json& j, const std::string& key, const std::string& where) {
    if (!j.contains(key)) throw InputError("config is missing '" + where + key + "'");
    if (!j[key].is_number()) throw InputError("config '" + where + key + "' must be a number");
    return j[key].get<double>();
}

inline int integer(const json& j, const std::string& key, const std::string& where) {
    const double v = num(j, key, where);
    if (v != static_cast<double>(static_cast<int>(v))) throw InputError("config '" + where + key + "' must be an integer");
    return static_cast<int>(v);
}

inline const json& object(const json& j, const std::string& key) {
    if (!j.contains(key) || !j[key].is_object()) throw InputError("config '" + key + "' must be an object");
    return j[key];
}

}  // namespace detail

/// Strict reader: every key must be known; the input is expected to be a
/// complete document (defaults merged in by resolve_config).
inline RunConfig run_config_from_json(const json& j) {
    using namespace detail;
    if (!j.is_object()) throw InputError("config must be a JSON object");
    reject_unknown(j,
                   {"ec_target", "e0_target", "newton", "sweep", "ramp_samples", "resample_points", "v_clamp",
                    "dc_clamp", "probe_amplitude", "n_periods", "mode", "analysis"},
                   "");
    RunConfig c;
    SearchConfig& s = c.search;
    s.ec_target = num(j, "ec_target", "");
    if (j.contains("e0_target") && j["e0_target"].is_string()) {
        if (j["e0_target"] != "auto") throw InputError("config 'e0_target' must be a number or \"auto\"");
    } else {
        s.e0_target = num(j, "e0_target", "");
    }
    const json& n = object(j, "newton");
    reject_unknown(n, {"tol_energy", "max_iter", "fd_step"}, "newton.");
    s.newton.tol_energy = num(n, "tol_energy", "newton.");
    s.newton.max_iter = integer(n, "max_iter", "newton.");
    s.newton.fd_step = num(n, "fd_step", "newton.");
    const json& w = object(j, "sweep");
    reject_unknown(w, {"max_sweeps", "tol_flatband"}, "sweep.");
    s.sweep.max_sweeps = integer(w, "max_sweeps", "sweep.");
    s.sweep.tol_flatband = num(w, "tol_flatband", "sweep.");
    s.ramp_samples = integer(j, "ramp_samples", "");
    s.resample_points = integer(j, "resample_points", "");
    for (const char* key : {"v_clamp", "dc_clamp"}) {
        const json& v = object(j, key);
        reject_unknown(v, {"v_min", "v_max"}, std::string(key) + ".");
        Interval& iv = std::string(key) == "v_clamp" ? s.v_clamp : s.dc_clamp;
        iv = {num(v, "v_min", std::string(key) + "."), num(v, "v_max", std::string(key) + ".")};
    }
    s.probe_amplitude = num(j, "probe_amplitude", "");
    s.n_periods = integer(j, "n_periods", "");
    if (!j.contains("mode") || !j["mode"].is_string() || (j["mode"] != "1d" && j["mode"] != "2d"))
        throw InputError("config 'mode' must be \"1d\" or \"2d\"");
    c.mode = j["mode"] == "2d" ? QuantumMode::plane : QuantumMode::line;
    const json& a = object(j, "analysis");
    reject_unknown(a, {"gap_eV", "jump_nm", "warn_gap_eV"}, "analysis.");
    c.thresholds.gap_eV = num(a, "gap_eV", "analysis.");
    c.thresholds.warn_gap_eV = num(a, "warn_gap_eV", "analysis.");
    if (a.contains("jump_nm") && !a["jump_nm"].is_null()) c.thresholds.jump_nm = num(a, "jump_nm", "analysis.");
    s.validate();
    if (!(c.thresholds.gap_eV > 0.0) || !(c.thresholds.warn_gap_eV > 0.0) ||
        (c.thresholds.jump_nm && !(*c.thresholds.jump_nm > 0.0)))
        throw InputError("analysis thresholds must be > 0");
    return c;
}

/// Environment variable for a config leaf: SHUTTLE_ + path joined by '_',
/// upper-cased (newton.tol_energy -> SHUTTLE_NEWTON_TOL_ENERGY).
inline std::string env_name(const std::string& pointer) {
    std::string out = "SHUTTLE";
    for (char ch : pointer) out += ch == '/' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    return out;
}

inline json parse_env_value(const std::string& raw) {
    try {
        return json::parse(raw);
    } catch (const json::parse_error&) {
        return raw;  // bare words such as auto or 2d
    }
}

inline std::vector<std::string> config_env_names() {
    std::vector<std::string> out;
    const json flat = to_json(RunConfig{}).flatten();
    for (const auto& [ptr, _] : flat.items()) out.push_back(env_name(ptr));
    return out;
}

/// Precedence, lowest first: built-in defaults, the device file's "search"
/// block, the config file, SHUTTLE_* environment variables.
inline RunConfig resolve_config(const DeviceSpec* device, const json* file, bool use_env = true) {
    json merged = to_json(RunConfig{});
    if (device && !device->search.is_null()) merged.merge_patch(device->search);
    if (file) {
        if (!file->is_object()) throw InputError("config file must contain a JSON object");
        merged.merge_patch(*file);
    }
    if (use_env) {
        json flat = to_json(RunConfig{}).flatten();
        for (const auto& [ptr, _] : flat.items())
            if (const char* v = std::getenv(env_name(ptr).c_str())) merged[json::json_pointer(ptr)] = parse_env_value(v);
    }
    return run_config_from_json(merged);
}

// ---------------------------------------------------------------------------
// hashing: same FNV-1a as device_hash, over the canonical config dump

inline std::string config_hash(const RunConfig& c) {
    const std::string text = to_json(c).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// files

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw InputError("cannot open '" + p.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + p.string() + "'");
    out << text;
    if (!out) throw InputError("write failed for '" + p.string() + "'");
}

inline void write_json(const std::filesystem::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

inline json read_json(const std::filesystem::path& p) {
    try {
        return json::parse(read_text(p));
    } catch (const json::parse_error& e) {
        throw ParseError(p.string(), std::string("malformed JSON: ") + e.what());
    }
}

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, sep)) out.push_back(cell);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
    const char* b = s.c_str();
    char* end = nullptr;
    const double v = std::strtod(b, &end);
    if (end == b || *end != '\0') throw ParseError(where, "not a number: '" + s + "'");
    return v;
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

inline Table read_csv(const std::filesystem::path& p) {
    std::stringstream in(read_text(p));
    std::string line;
    Table t;
    if (!std::getline(in, line)) throw ParseError(p.string(), "empty CSV");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    t.header = split(line);
    for (std::size_t row = 1; std::getline(in, line); ++row) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != t.header.size())
            throw ParseError(p.string() + ":" + std::to_string(row + 1), "expected " + std::to_string(t.header.size()) +
                                                                           " columns, got " + std::to_string(cells.size()));
        std::vector<double> r;
        for (const auto& c : cells) r.push_back(parse_double(c, p.string() + ":" + std::to_string(row + 1)));
        t.rows.push_back(std::move(r));
    }
    return t;
}

inline const std::vector<std::string>& metrics_header() {
    static const std::vector<std::string> h{"t_au", "E0_eV", "E1_eV", "gap_eV", "X_nm", "dX_nm", "p_max"};
    return h;
}

inline std::string schedule_csv(const ShuttleSchedule& s, const std::vector<std::string>& gates) {
    std::string out = "t_au";
    for (const auto& g : gates) out += "," + g + "_V";
    out += "\n";
    for (std::size_t k = 0; k < s.size(); ++k) {
        out += fmt(s.times[k]);
        for (const auto& g : gates) out += "," + fmt(s.bias_steps[k].at(g));
        out += "\n";
    }
    return out;
}

inline std::string metrics_csv(const std::vector<double>& times, const std::vector<DotMetrics>& m) {
    std::string out;
    for (std::size_t c = 0; c < metrics_header().size(); ++c) out += (c ? "," : "") + metrics_header()[c];
    out += "\n";
    for (std::size_t k = 0; k < m.size(); ++k)
        out += fmt(times[k]) + "," + fmt(m[k].e0) + "," + fmt(m[k].e1) + "," + fmt(m[k].gap) + "," + fmt(m[k].x) + "," +
               fmt(m[k].dx) + "," + fmt(m[k].p_max) + "\n";
    return out;
}

inline void read_schedule_csv(const std::filesystem::path& p, ShuttleSchedule& s) {
    const Table t = read_csv(p);
    if (t.header.empty() || t.header[0] != "t_au") throw ParseError(p.string(), "first column must be t_au");
    std::vector<std::string> gates;
    for (std::size_t c = 1; c < t.header.size(); ++c) {
        const std::string& h = t.header[c];
        if (h.size() < 3 || h.substr(h.size() - 2) != "_V") throw ParseError(p.string(), "bad column '" + h + "'");
        gates.push_back(h.substr(0, h.size() - 2));
    }
    s.times.clear();
    s.bias_steps.clear();
    for (const auto& r : t.rows) {
        s.times.push_back(r[0]);
        BiasPoint b;
        for (std::size_t c = 0; c < gates.size(); ++c) b[gates[c]] = r[c + 1];
        s.bias_steps.push_back(std::move(b));
    }
}

inline void read_metrics_csv(const std::filesystem::path& p, std::vector<double>& times, std::vector<DotMetrics>& m) {
    const Table t = read_csv(p);
    if (t.header != metrics_header()) throw ParseError(p.string(), "unexpected metrics header");
    times.clear();
    m.clear();
    for (const auto& r : t.rows) {
        times.push_back(r[0]);
        m.push_back({r[1], r[2], r[3], r[4], r[5], r[6]});
    }
}

}  // namespace shuttle

#endif
