// End-to-end runs of the shuttle binary on the frozen fixtures.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "shuttle/io.hpp"

using namespace shuttle;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = SHUTTLE_FIXTURES;
const std::string kCli = SHUTTLE_CLI;

struct Result {
    int code = -1;
    std::string out, err;
};

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("shuttle_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

Result run(const std::string& args, const fs::path& dir, const std::string& env = "") {
    const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd = env + (env.empty() ? "" : " ") + "'" + kCli + "' " + args + " >'" + out.string() + "' 2>'" +
                            err.string() + "'";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_text(out);
    r.err = read_text(err);
    return r;
}

std::string device(const std::string& name) { return "--device '" + (kFixtures / name).string() + "'"; }

// Relative path -> contents of every file under dir.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> m;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) m[fs::relative(e.path(), dir).string()] = read_text(e.path());
    return m;
}

}  // namespace

TEST(Cli, ValidateEveryFixture) {
    const fs::path dir = scratch("validate");
    for (const char* f : {"simos.toy", "fdsoi_jgates.toy", "fdsoi_nojgates.toy", "sige.toy"}) {
        const Result r = run("validate " + device(f) + " --out '" + (dir / f).string() + "'", dir);
        EXPECT_EQ(r.code, 0) << f << ": " << r.err;
        EXPECT_TRUE(fs::exists(dir / f / "validate.json")) << f;
    }
}

TEST(Cli, MissingDeviceNamesPath) {
    const fs::path dir = scratch("missing");
    const Result r = run("validate --device /nonexistent/dev.toy --out '" + (dir / "o").string() + "'", dir);
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("/nonexistent/dev.toy"), std::string::npos) << r.err;
}

TEST(Cli, BadArgumentsExitOne) {
    const fs::path dir = scratch("args");
    EXPECT_EQ(run("", dir).code, 1);
    EXPECT_EQ(run("frobnicate", dir).code, 1);
    EXPECT_EQ(run("dc " + device("simos.toy") + " --mode 3d", dir).code, 1);
    EXPECT_EQ(run("dc " + device("simos.toy") + " --threads 0", dir).code, 1);
}

TEST(Cli, MissingUpstreamIsDependencyError) {
    const fs::path dir = scratch("upstream");
    const std::string out = (dir / "o").string();
    const Result r = run("ac " + device("simos.toy") + " --out '" + out + "'", dir);
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("dependency"), std::string::npos) << r.err;
    EXPECT_NE(r.err.find("dc.json"), std::string::npos) << r.err;
    const json manifest = read_json(dir / "o" / "manifest.json");
    EXPECT_EQ(manifest["stages"]["ac"]["status"], "error");
    EXPECT_EQ(manifest["stages"]["ac"]["error"]["kind"], "dependency");
}

TEST(Cli, DcThenAcListsEveryPathGate) {
    const fs::path dir = scratch("dcac");
    const std::string out = " --out '" + (dir / "o").string() + "'";
    ASSERT_EQ(run("validate " + device("fdsoi_jgates.toy") + out, dir).code, 0);
    ASSERT_EQ(run("dc " + device("fdsoi_jgates.toy") + out, dir).code, 0);
    const Result r = run("ac " + device("fdsoi_jgates.toy") + out, dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const json ac = read_json(dir / "o" / "ac.json");
    ASSERT_EQ(ac["vmax"].size(), 5u);
    for (const char* g : {"J0", "T0", "J1", "T1", "J2"}) EXPECT_TRUE(ac["vmax"].contains(g)) << g;
    EXPECT_EQ(ac["auto_target"], true);
}

TEST(Cli, StaleUpstreamAfterConfigChange) {
    const fs::path dir = scratch("stale");
    const std::string out = " --out '" + (dir / "o").string() + "'";
    ASSERT_EQ(run("validate " + device("simos.toy") + out, dir).code, 0);
    ASSERT_EQ(run("dc " + device("simos.toy") + out, dir).code, 0);
    const Result r = run("ac " + device("simos.toy") + out, dir, "SHUTTLE_EC_TARGET=0.006");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("stale"), std::string::npos) << r.err;
}

TEST(Cli, UnknownConfigKeyFails) {
    const fs::path dir = scratch("badcfg");
    write_text(dir / "c.json", "{\"ramp_sample\": 5}\n");
    const Result r = run("dc " + device("simos.toy") + " --config '" + (dir / "c.json").string() + "' --out '" +
                          (dir / "o").string() + "'",
                      dir);
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("ramp_sample"), std::string::npos) << r.err;
}

TEST(Cli, AnalyzeCleanMetricsFile) {
    const fs::path dir = scratch("metrics");
    std::string csv = "t_au,E0_eV,E1_eV,gap_eV,X_nm,dX_nm,p_max\n";
    for (int k = 0; k < 30; ++k)
        csv += std::to_string(k) + ",-0.01,-0.008,0.002," + std::to_string(60 + 2 * k) + ",24,0.04\n";
    write_text(dir / "m.csv", csv);
    write_text(dir / "c.json", "{\"analysis\": {\"jump_nm\": 20}}\n");
    const std::string base = "analyze --metrics '" + (dir / "m.csv").string() + "' --out '" + (dir / "o").string() + "'";
    Result r = run(base + " --config '" + (dir / "c.json").string() + "'", dir);
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("verdict: conveyor"), std::string::npos);
    EXPECT_EQ(read_json(dir / "o" / "report.json")["verdict"], "conveyor");
    // the jump threshold can also come from the device's gate pitch
    r = run(base + " " + device("simos.toy"), dir);
    EXPECT_EQ(r.code, 0) << r.err;
    // and with neither there is nothing to resolve it from
    r = run(base, dir);
    EXPECT_EQ(r.code, 1);
}

TEST(Cli, AnalyzeFlagsTunnellingMetrics) {
    const fs::path dir = scratch("metrics_tunnel");
    std::string csv = "t_au,E0_eV,E1_eV,gap_eV,X_nm,dX_nm,p_max\n";
    for (int k = 0; k < 30; ++k) {
        const double x = 60 + 2 * k + (k > 14 ? 50 : 0);
        const double gap = k == 14 ? 2e-5 : 2e-3;
        csv += std::to_string(k) + ",-0.01,-0.008," + fmt(gap) + "," + fmt(x) + ",24,0.04\n";
    }
    write_text(dir / "m.csv", csv);
    const Result r = run("analyze --metrics '" + (dir / "m.csv").string() + "' " + device("simos.toy") + " --out '" +
                          (dir / "o").string() + "'",
                      dir);
    EXPECT_EQ(r.code, 3) << r.err;
    EXPECT_NE(r.out.find("verdict: tunnelling"), std::string::npos);
}

TEST(Cli, PipelineEqualsStagesRunOneByOne) {
    const fs::path dir = scratch("equiv");
    const std::string dev = device("simos.toy");
    const Result p = run("pipeline " + dev + " --out '" + (dir / "pipe").string() + "'", dir);
    ASSERT_EQ(p.code, 0) << p.err;
    EXPECT_NE(p.out.find("verdict: conveyor"), std::string::npos);
    for (const char* s : {"validate", "dc", "ac", "ramp", "resample", "tile", "analyze"})
        ASSERT_EQ(run(std::string(s) + " " + dev + " --out '" + (dir / "stages").string() + "'", dir).code, 0) << s;
    const auto a = snapshot(dir / "pipe"), b = snapshot(dir / "stages");
    ASSERT_EQ(a.size(), b.size());
    for (const auto& [name, text] : a) {
        ASSERT_TRUE(b.count(name)) << name;
        EXPECT_TRUE(text == b.at(name)) << name << " differs";
    }
}

TEST(Cli, TunnellingDeviceExitsThree) {
    const fs::path dir = scratch("nojgates");
    const Result r = run("pipeline " + device("fdsoi_nojgates.toy") + " --plots off --out '" + (dir / "o").string() + "'", dir);
    EXPECT_EQ(r.code, 3) << r.err;
    EXPECT_NE(r.out.find("verdict: tunnelling"), std::string::npos);
    const json report = read_json(dir / "o" / "report.json");
    EXPECT_GE(report["events"].size(), 1u);
    EXPECT_FALSE(fs::exists(dir / "o" / "energies.svg"));
}

TEST(Cli, PlotsToggleFromEnvironment) {
    const fs::path dir = scratch("plots");
    const std::string out = " --out '" + (dir / "o").string() + "'";
    ASSERT_EQ(run("pipeline " + device("simos.toy") + out, dir, "SHUTTLE_PLOTS=off").code, 0);
    EXPECT_FALSE(fs::exists(dir / "o" / "position.svg"));
    ASSERT_EQ(run("analyze " + device("simos.toy") + out, dir).code, 0);
    EXPECT_TRUE(fs::exists(dir / "o" / "position.svg"));
}
