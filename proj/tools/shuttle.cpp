// shuttle: waveform search pipeline for conveyor-mode electron shuttling.
//
//   shuttle pipeline --device fixtures/simos.toy --out out/simos
//   shuttle dc --device d.toy --out o && shuttle ac --device d.toy --out o
//   shuttle analyze --metrics m.csv --device d.toy --out o
//
// Exit codes: 0 conveyor (or stage ok), 3 tunnelling, 1 any error.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "shuttle/pipeline.hpp"

namespace {

using namespace shuttle;

struct Args {
    std::string device, config, out = "out", mode, plots, metrics;
    int threads = 0;
    bool timings = false;
};

std::optional<std::string> env(const char* name) {
    if (const char* v = std::getenv(name)) return std::string(v);
    return std::nullopt;
}

RunOptions options(const Args& a) {
    RunOptions o;
    if (auto t = env("SHUTTLE_THREADS")) {
        try {
            o.threads = std::stoi(*t);
        } catch (const std::exception&) {
            throw InputError("SHUTTLE_THREADS must be an integer");
        }
    }
    if (a.threads > 0) o.threads = a.threads;
    if (o.threads < 1) throw InputError("thread count must be >= 1");
    std::string plots = env("SHUTTLE_PLOTS").value_or("on");
    if (!a.plots.empty()) plots = a.plots;
    if (plots != "on" && plots != "off") throw InputError("plots must be on or off");
    o.plots = plots == "on";
    o.timings = a.timings;
    return o;
}

RunConfig config(const Args& a, const DeviceSpec* spec) {
    json file;
    const json* fp = nullptr;
    if (!a.config.empty()) {
        file = read_json(a.config);
        fp = &file;
    }
    RunConfig c = resolve_config(spec, fp);
    if (!a.mode.empty()) c.mode = a.mode == "2d" ? QuantumMode::plane : QuantumMode::line;
    return c;
}

int run(const std::string& command, const Args& a) {
    if (command == "analyze" && !a.metrics.empty()) {
        // metrics-only analysis: no re-solve, the device (if any) only supplies the gate pitch
        std::optional<DeviceSpec> spec;
        if (!a.device.empty()) spec = load_device(a.device);
        const RunConfig c = config(a, spec ? &*spec : nullptr);
        const RunOptions o = options(a);
        std::vector<double> t;
        std::vector<DotMetrics> m;
        read_metrics_csv(a.metrics, t, m);
        std::optional<ModelLayout> layout;
        if (spec) layout = make_layout(*spec);
        fs::create_directories(a.out);
        json base = {{"stage", "analyze"}, {"config_hash", config_hash(c)}};
        if (spec) base["device_hash"] = device_hash(*spec);
        const StageResult r = write_report(nullptr, a.out, a.metrics, t, m, c.thresholds, layout ? &*layout : nullptr,
                                           o.plots, c.search.e0_target, base);
        std::cout << "verdict: " << r.status << "\n";
        return r.exit;
    }
    if (a.device.empty()) throw InputError("--device is required");
    DeviceSpec spec = load_device(a.device);
    const RunConfig c = config(a, &spec);
    const RunContext ctx(a.device, std::move(spec), c, a.out, options(a));
    const int code = command == "pipeline" ? run_pipeline(ctx) : run_stage(ctx, command);
    if (command == "pipeline" || command == "analyze") {
        const fs::path report = ctx.file("report.json");
        if (code != exit_error && fs::exists(report)) std::cout << "verdict: " << read_json(report).at("verdict").get<std::string>() << "\n";
    }
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gate-voltage waveform search for single-electron shuttling"};
    app.require_subcommand(1);
    Args args;
    const char* commands[][2] = {
        {"validate", "parse, validate and grid a device file"},
        {"dc", "flat-band DC bias search"},
        {"ac", "per-gate AC amplitudes holding the target ground-state energy"},
        {"ramp", "conveyor ramp over consecutive gate pairs"},
        {"resample", "re-discretize the ramp at constant dot velocity"},
        {"tile", "assemble the periodic multi-well waveform"},
        {"analyze", "transport diagnostics and verdict"},
        {"pipeline", "all stages in order"},
    };
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--device", args.device, "device file (JSON)");
        sub->add_option("--config", args.config, "search config file (JSON)");
        sub->add_option("--out", args.out, "output directory")->capture_default_str();
        sub->add_option("--mode", args.mode, "quantum mode")->check(CLI::IsMember({"1d", "2d"}));
        sub->add_option("--threads", args.threads, "worker threads for per-step re-analysis")->check(CLI::PositiveNumber);
        sub->add_option("--plots", args.plots, "write SVG plots")->check(CLI::IsMember({"on", "off"}));
        sub->add_flag("--timings", args.timings, "record wall times in the manifest (breaks byte-identity)");
        if (std::string(name) == "analyze")
            sub->add_option("--metrics", args.metrics, "analyze a metrics CSV directly, without re-solving");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }
    const std::string command = app.get_subcommands().front()->get_name();
    try {
        return run(command, args);
    } catch (const Error& e) {
        std::cerr << "error (" << e.kind() << "): " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
