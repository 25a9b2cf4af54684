#include <cstdlib>
#include <filesystem>

#include <gtest/gtest.h>

#include "shuttle/io.hpp"

using namespace shuttle;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = SHUTTLE_FIXTURES;

// Sets an environment variable for the lifetime of the guard.
struct EnvGuard {
    std::string name;
    EnvGuard(std::string n, const std::string& value) : name(std::move(n)) { ::setenv(name.c_str(), value.c_str(), 1); }
    ~EnvGuard() { ::unsetenv(name.c_str()); }
};

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("shuttle_io_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST(Config, DefaultsRoundTrip) {
    const RunConfig c{};
    EXPECT_EQ(run_config_from_json(to_json(c)), c);
    EXPECT_FALSE(c.search.e0_target.has_value());
    EXPECT_EQ(c.mode, QuantumMode::line);
}

TEST(Config, Precedence) {
    const DeviceSpec simos = load_device(kFixtures / "simos.toy");
    // device search block over defaults
    RunConfig c = resolve_config(&simos, nullptr, false);
    ASSERT_TRUE(c.search.e0_target.has_value());
    EXPECT_DOUBLE_EQ(*c.search.e0_target, -0.010);
    EXPECT_EQ(c.search.ramp_samples, SearchConfig{}.ramp_samples);

    // file over device
    const json file = {{"e0_target", -0.02}, {"ramp_samples", 31}, {"newton", {{"max_iter", 12}}}};
    c = resolve_config(&simos, &file, false);
    EXPECT_DOUBLE_EQ(*c.search.e0_target, -0.02);
    EXPECT_EQ(c.search.ramp_samples, 31);
    EXPECT_EQ(c.search.newton.max_iter, 12);
    EXPECT_DOUBLE_EQ(c.search.newton.tol_energy, NewtonConfig{}.tol_energy);  // merge, not replace

    // environment over file
    const EnvGuard a("SHUTTLE_RAMP_SAMPLES", "45"), b("SHUTTLE_NEWTON_TOL_ENERGY", "2e-7"), m("SHUTTLE_MODE", "2d");
    c = resolve_config(&simos, &file, true);
    EXPECT_EQ(c.search.ramp_samples, 45);
    EXPECT_DOUBLE_EQ(c.search.newton.tol_energy, 2e-7);
    EXPECT_EQ(c.mode, QuantumMode::plane);
    EXPECT_DOUBLE_EQ(*c.search.e0_target, -0.02);
    // and ignored when asked to
    EXPECT_EQ(resolve_config(&simos, &file, false).search.ramp_samples, 31);
}

TEST(Config, AutoTargetFromEnvironment) {
    const DeviceSpec simos = load_device(kFixtures / "simos.toy");
    const EnvGuard g("SHUTTLE_E0_TARGET", "auto");
    EXPECT_FALSE(resolve_config(&simos, nullptr).search.e0_target.has_value());
}

TEST(Config, EnvironmentNamesCoverEveryLeaf) {
    const auto names = config_env_names();
    for (const char* n : {"SHUTTLE_EC_TARGET", "SHUTTLE_NEWTON_FD_STEP", "SHUTTLE_SWEEP_MAX_SWEEPS",
                          "SHUTTLE_V_CLAMP_V_MAX", "SHUTTLE_ANALYSIS_JUMP_NM", "SHUTTLE_MODE"})
        EXPECT_NE(std::find(names.begin(), names.end(), n), names.end()) << n;
}

TEST(Config, UnknownKeysRejected) {
    for (const json& bad : {json{{"ramp_sample", 5}}, json{{"newton", {{"tol", 1e-6}}}},
                            json{{"analysis", {{"gap", 1e-4}}}}}) {
        try {
            resolve_config(nullptr, &bad, false);
            FAIL() << bad.dump();
        } catch (const InputError& e) {
            EXPECT_NE(std::string(e.what()).find("unknown config key"), std::string::npos);
        }
    }
}

TEST(Config, InvalidValuesRejected) {
    for (const json& bad : {json{{"ramp_samples", 2}}, json{{"ramp_samples", 4.5}}, json{{"mode", "3d"}},
                            json{{"v_clamp", {{"v_min", 1.0}, {"v_max", 0.0}}}}, json{{"e0_target", "lowest"}},
                            json{{"analysis", {{"jump_nm", -1.0}}}}, json::array()})
        EXPECT_THROW(resolve_config(nullptr, &bad, false), InputError) << bad.dump();
    const EnvGuard g("SHUTTLE_RAMP_SAMPLES", "many");
    EXPECT_THROW(resolve_config(nullptr, nullptr, true), InputError);
}

TEST(Config, HashTracksContent) {
    RunConfig a{}, b{};
    EXPECT_EQ(config_hash(a), config_hash(b));
    EXPECT_EQ(config_hash(a).size(), 16u);
    b.search.ramp_samples += 2;
    EXPECT_NE(config_hash(a), config_hash(b));
    b = a;
    b.thresholds.jump_nm = 20.0;
    EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Csv, ScheduleRoundTripIsExact) {
    ShuttleSchedule s;
    const std::vector<std::string> gates{"P0", "T0"};
    for (int k = 0; k < 5; ++k) {
        s.times.push_back(k);
        BiasPoint b;
        b["P0"] = 0.1 + 1.0 / 3.0 * k;
        b["T0"] = -std::exp(-k) * 1e-7;
        s.bias_steps.push_back(b);
    }
    const fs::path dir = scratch("schedule");
    write_text(dir / "s.csv", schedule_csv(s, gates));
    ShuttleSchedule back;
    read_schedule_csv(dir / "s.csv", back);
    EXPECT_EQ(back.times, s.times);
    EXPECT_EQ(back.bias_steps, s.bias_steps);
}

TEST(Csv, MetricsRoundTripIsExact) {
    std::vector<double> t{0.0, 1.0, 2.0};
    std::vector<DotMetrics> m{{-0.01, -0.008, 0.002, 61.25, 24.0, 0.041},
                              {-0.01 + 1e-9, -0.0075, 0.0025, 63.0 + 1.0 / 7.0, 24.5, 0.04},
                              {-0.01, -0.007, 0.003, 65.0, 25.0, 0.039}};
    const fs::path dir = scratch("metrics");
    write_text(dir / "m.csv", metrics_csv(t, m));
    std::vector<double> t2;
    std::vector<DotMetrics> m2;
    read_metrics_csv(dir / "m.csv", t2, m2);
    EXPECT_EQ(t2, t);
    ASSERT_EQ(m2.size(), m.size());
    for (std::size_t k = 0; k < m.size(); ++k) {
        EXPECT_EQ(m2[k].e0, m[k].e0);
        EXPECT_EQ(m2[k].x, m[k].x);
        EXPECT_EQ(m2[k].p_max, m[k].p_max);
    }
}

TEST(Csv, MalformedFilesRejected) {
    const fs::path dir = scratch("bad");
    write_text(dir / "a.csv", "t_au,E0_eV\n0,1\n");
    std::vector<double> t;
    std::vector<DotMetrics> m;
    EXPECT_THROW(read_metrics_csv(dir / "a.csv", t, m), ParseError);
    write_text(dir / "b.csv", "t_au,P0_V\n0,abc\n");
    ShuttleSchedule s;
    EXPECT_THROW(read_schedule_csv(dir / "b.csv", s), Error);
    write_text(dir / "c.csv", "t_au,P0_V\n0,1,2\n");
    EXPECT_THROW(read_schedule_csv(dir / "c.csv", s), Error);
    EXPECT_THROW(read_schedule_csv(dir / "missing.csv", s), Error);
}

TEST(Config, ShippedDefaultsMatchBuiltIn) {
    const json file = read_json(kFixtures / "default_config.json");
    EXPECT_EQ(resolve_config(nullptr, &file, false), RunConfig{});
    EXPECT_EQ(file, to_json(RunConfig{}));
}
