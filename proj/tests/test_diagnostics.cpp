#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "shuttle/diagnostics.hpp"
#include "test_models.hpp"

using namespace shuttle;

namespace {

constexpr double kPitch = 40.0;

// Clean conveyor: X linear in t, constant size, gap well above every threshold.
struct Sequence {
    std::vector<double> t;
    std::vector<DotMetrics> m;
};

Sequence clean(std::size_t n, double x0 = 60.0, double v = 2.0, double gap = 3e-3) {
    Sequence s;
    for (std::size_t k = 0; k < n; ++k) {
        s.t.push_back(static_cast<double>(k));
        DotMetrics d;
        d.e0 = -0.01;
        d.gap = gap;
        d.e1 = d.e0 + gap;
        d.x = x0 + v * static_cast<double>(k);
        d.dx = 25.0;
        d.p_max = 0.04;
        s.m.push_back(d);
    }
    return s;
}

// Gap collapse at step k with the dot moving by `jump` across it.
void inject(Sequence& s, std::size_t k, double gap, double jump) {
    s.m[k].gap = gap;
    for (std::size_t j = k + 1; j < s.m.size(); ++j) s.m[j].x += jump;
    s.m[k].dx = 60.0;
}

Thresholds th() { return Thresholds{}; }

}  // namespace

TEST(Diagnostics, LinearTransportIsConveyor) {
    const Sequence s = clean(50);
    const auto r = analyze_sequence(s.t, s.m, th(), kPitch);
    EXPECT_EQ(r.verdict, Verdict::conveyor);
    EXPECT_TRUE(r.events.empty());
    EXPECT_LE(r.velocity_cv, 1e-12);
    EXPECT_EQ(r.velocity.size(), 49u);
    EXPECT_DOUBLE_EQ(r.velocity.front(), 2.0);
    EXPECT_DOUBLE_EQ(r.jump_threshold_nm, 20.0);
    EXPECT_EQ(r.steps, 50u);
}

TEST(Diagnostics, VelocityUsesTimeStamps) {
    Sequence s = clean(5);
    for (auto& t : s.t) t *= 0.5;
    const auto r = analyze_sequence(s.t, s.m, th(), kPitch);
    EXPECT_DOUBLE_EQ(r.velocity[2], 4.0);
}

TEST(Diagnostics, DegradedBetweenThresholds) {
    Sequence s = clean(30);
    s.m[12].gap = 3e-4;
    const auto r = analyze_sequence(s.t, s.m, th(), kPitch);
    EXPECT_EQ(r.verdict, Verdict::degraded);
    EXPECT_EQ(r.gap_min_index, 12u);
    EXPECT_DOUBLE_EQ(r.gap_min, 3e-4);
}

// Either condition alone must never produce an event.
TEST(Diagnostics, SoundnessProperty) {
    std::mt19937 rng(7);
    std::uniform_int_distribution<std::size_t> step(1, 58);
    std::uniform_real_distribution<double> small_gap(1e-7, 0.99e-4), big_jump(25.0, 80.0);
    for (int trial = 0; trial < 200; ++trial) {
        Sequence a = clean(60);
        inject(a, step(rng), small_gap(rng), 0.0);  // collapse without a jump
        const auto ra = analyze_sequence(a.t, a.m, th(), kPitch);
        EXPECT_TRUE(ra.events.empty());
        EXPECT_NE(ra.verdict, Verdict::tunnelling);

        Sequence b = clean(60);
        inject(b, step(rng), 3e-3, big_jump(rng));  // jump with an open gap
        const auto rb = analyze_sequence(b.t, b.m, th(), kPitch);
        EXPECT_TRUE(rb.events.empty());
        EXPECT_EQ(rb.verdict, Verdict::conveyor);
    }
}

// Both conditions together must produce exactly one event at the injected step.
TEST(Diagnostics, CompletenessProperty) {
    std::mt19937 rng(11);
    std::uniform_int_distribution<std::size_t> step(1, 58);
    std::uniform_real_distribution<double> small_gap(1e-7, 0.99e-4), big_jump(25.0, 80.0);
    for (int trial = 0; trial < 200; ++trial) {
        Sequence s = clean(60);
        const std::size_t k = step(rng);
        const double gap = small_gap(rng), jump = big_jump(rng);
        inject(s, k, gap, jump);
        const auto r = analyze_sequence(s.t, s.m, th(), kPitch);
        ASSERT_EQ(r.events.size(), 1u) << "step " << k;
        EXPECT_EQ(r.events[0].step_index, k);
        EXPECT_DOUBLE_EQ(r.events[0].gap_at_event, gap);
        EXPECT_NEAR(r.events[0].x_jump, jump + 4.0, 1e-9);  // two clean steps of 2 nm around it
        EXPECT_DOUBLE_EQ(r.events[0].dx_spike_ratio, 60.0 / 25.0);
        EXPECT_EQ(r.verdict, Verdict::tunnelling);
    }
}

TEST(Diagnostics, AdjacentFlaggedStepsMergeIntoOneEvent) {
    Sequence s = clean(30);
    // the transfer straddles steps 10 and 11, both with a closed gap
    s.m[10].gap = 5e-5;
    s.m[11].gap = 2e-5;
    for (std::size_t j = 11; j < s.m.size(); ++j) s.m[j].x += 40.0;
    const auto r = analyze_sequence(s.t, s.m, th(), kPitch);
    ASSERT_EQ(r.events.size(), 1u);
    EXPECT_EQ(r.events[0].first_step, 10u);
    EXPECT_EQ(r.events[0].last_step, 11u);
    EXPECT_EQ(r.events[0].step_index, 11u);
    EXPECT_NEAR(r.events[0].x_jump, 40.0 + 6.0, 1e-9);
}

TEST(Diagnostics, SeparateTransfersAreSeparateEvents) {
    Sequence s = clean(40);
    inject(s, 8, 1e-5, 30.0);
    inject(s, 25, 1e-5, 30.0);
    const auto r = analyze_sequence(s.t, s.m, th(), kPitch);
    ASSERT_EQ(r.events.size(), 2u);
    EXPECT_EQ(r.events[0].step_index, 8u);
    EXPECT_EQ(r.events[1].step_index, 25u);
}

TEST(Diagnostics, EndpointsAreNeverFlagged) {
    Sequence s = clean(10);
    s.m[0].gap = 1e-6;
    s.m[9].gap = 1e-6;
    for (std::size_t j = 1; j < 10; ++j) s.m[j].x += 50.0;
    const auto r = analyze_sequence(s.t, s.m, th(), kPitch);
    EXPECT_TRUE(r.events.empty());
    EXPECT_EQ(r.verdict, Verdict::degraded);
}

TEST(Diagnostics, ExplicitJumpThresholdOverridesPitch) {
    Sequence s = clean(20);
    inject(s, 5, 1e-5, 15.0);
    EXPECT_TRUE(analyze_sequence(s.t, s.m, th(), kPitch).events.empty());
    Thresholds t = th();
    t.jump_nm = 10.0;
    EXPECT_EQ(analyze_sequence(s.t, s.m, t, 0.0).events.size(), 1u);
}

TEST(Diagnostics, Purity) {
    Sequence s = clean(40);
    inject(s, 17, 2e-5, 35.0);
    s.m[30].gap = 2e-4;
    const auto a = to_json(analyze_sequence(s.t, s.m, th(), kPitch), th(), {}, {});
    const auto b = to_json(analyze_sequence(s.t, s.m, th(), kPitch), th(), {}, {});
    EXPECT_EQ(a.dump(), b.dump());
}

TEST(Diagnostics, RejectsBadInput) {
    Sequence s = clean(2);
    EXPECT_THROW(analyze_sequence(s.t, s.m, th(), kPitch), InputError);
    s = clean(5);
    s.m[2].x = NAN;
    EXPECT_THROW(analyze_sequence(s.t, s.m, th(), kPitch), InputError);
    s = clean(5);
    s.t[3] = s.t[2];
    EXPECT_THROW(analyze_sequence(s.t, s.m, th(), kPitch), InputError);
    s = clean(5);
    EXPECT_THROW(analyze_sequence(s.t, s.m, th(), 0.0), InputError);
    s.t.pop_back();
    EXPECT_THROW(analyze_sequence(s.t, s.m, th(), kPitch), InputError);
}

TEST(Diagnostics, Median) {
    EXPECT_DOUBLE_EQ(median({3.0, 1.0, 2.0}), 2.0);
    EXPECT_DOUBLE_EQ(median({4.0, 1.0, 3.0, 2.0}), 2.5);
}

// ---------------------------------------------------------------------------
// gap dips

TEST(GapDips, MonotoneGapHasNoDips) {
    Sequence s = clean(30);
    for (std::size_t k = 0; k < s.m.size(); ++k) s.m[k].gap = 2e-3 + 1e-5 * static_cast<double>(k);
    const auto l = shuttle::testing::chain_layout(3, kPitch, 60.0);
    EXPECT_TRUE(gap_dip_map(s.m, l).empty());
}

TEST(GapDips, DipsBetweenGatesAreLabelled) {
    // three gates at 60, 100, 140; gap minima at the two midpoints
    const auto l = shuttle::testing::chain_layout(3, kPitch, 60.0);
    Sequence s = clean(41, 60.0, 2.0);
    for (auto& d : s.m) d.gap = 3e-3 - 1e-3 * std::pow(std::sin(M_PI * (d.x - 60.0) / kPitch), 2);
    const auto dips = gap_dip_map(s.m, l);
    ASSERT_EQ(dips.size(), 2u);
    EXPECT_DOUBLE_EQ(dips[0].x, 80.0);
    EXPECT_DOUBLE_EQ(dips[1].x, 120.0);
    EXPECT_EQ(dips[0].left_gate, 0u);
    EXPECT_EQ(dips[1].right_gate, 2u);
    for (const auto& d : dips) {
        EXPECT_TRUE(d.between_centers);
        EXPECT_DOUBLE_EQ(d.midpoint, d.x);
        EXPECT_NEAR(d.gap, 2e-3, 1e-15);
        EXPECT_NEAR(d.depth, 1e-3, 1e-12);
    }
}

TEST(GapDips, DipUnderAGateIsNotBetweenCenters) {
    const auto l = shuttle::testing::chain_layout(3, kPitch, 60.0);
    Sequence s = clean(41, 60.0, 2.0);
    s.m[20].gap = 1e-3;  // x = 100, on top of the middle gate
    const auto dips = gap_dip_map(s.m, l);
    ASSERT_EQ(dips.size(), 1u);
    EXPECT_FALSE(dips[0].between_centers);
}
