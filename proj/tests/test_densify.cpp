#include "rsplat/densify.hpp"
#include "test_helpers.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace rsplat;

namespace {

GrowthSchedule window(int start, int end, int prune_start) {
    GrowthSchedule s;
    s.densify_start_iter = start;
    s.densify_end_iter = end;
    s.densify_interval = 100;
    s.prune_start_iter = prune_start;
    s.opacity_reset_start_iter = start;
    s.opacity_reset_interval = 300;
    s.opacity_reset_end_iter = end;
    return s;
}

/// Two Gaussians: index 0 small (clone candidate), index 1 large (split).
GaussianSet pair_set() {
    GaussianSet g;
    g.resize(2);
    g.rotations = {1, 0, 0, 0, 1, 0, 0, 0};
    g.set_position(0, {0, 0, 0});
    g.set_position(1, {1, 1, 1});
    g.set_log_scale(0, Vec3::Constant(std::log(0.001)));
    g.set_log_scale(1, Vec3(std::log(0.5), std::log(0.2), std::log(0.1)));
    g.opacity_logits = {logit(0.5), logit(0.5)};
    for (std::size_t i = 0; i < 6; ++i) g.sh_dc[i] = 0.1 * static_cast<double>(i);
    return g;
}

DensifyStats hot_stats(std::size_t n, double grad) {
    DensifyStats s(n);
    for (std::size_t i = 0; i < n; ++i) {
        s.grad_sum[i] = grad * 2;
        s.count[i] = 2;
        s.pos_grad_sum[3 * i] = 1.0;
    }
    return s;
}

}  // namespace

TEST(Schedule, TicksOnlyInsideTheWindowOnIntervalMultiples) {
    const GrowthSchedule s = window(2000, 3000, 2000);
    EXPECT_FALSE(s.is_densify_tick(1900));
    EXPECT_TRUE(s.is_densify_tick(2000));
    EXPECT_FALSE(s.is_densify_tick(2050));
    EXPECT_TRUE(s.is_densify_tick(3000));
    EXPECT_FALSE(s.is_densify_tick(3100));
    EXPECT_TRUE(s.is_reset_tick(2100));
    EXPECT_FALSE(s.is_reset_tick(3300));
    const GrowthSchedule off = GrowthSchedule::disabled();
    for (int i = 0; i <= 10000; ++i) ASSERT_FALSE(off.is_densify_tick(i) || off.is_reset_tick(i));
}

TEST(Schedule, ConfigAndVanillaTiming) {
    const TrainConfig cfg = TrainConfig::defaults();
    const GrowthSchedule dg = GrowthSchedule::from_config(cfg);
    EXPECT_EQ(dg.densify_start_iter, 2000);
    EXPECT_EQ(dg.prune_start_iter, 2000);
    EXPECT_EQ(dg.opacity_reset_start_iter, 3000);
    const GrowthSchedule v = GrowthSchedule::vanilla(cfg);
    EXPECT_EQ(v.densify_start_iter, 100);
    EXPECT_EQ(v.prune_start_iter, 100);
    EXPECT_EQ(v.opacity_reset_start_iter, 600);
    EXPECT_EQ(v.densify_end_iter, dg.densify_end_iter);
    GrowthSchedule bad = dg;
    bad.densify_interval = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Stats, AccumulateVisibleOnly) {
    DensifyStats s(3);
    const std::vector<double> g{1, 2, 3}, r{5, 6, 7}, p{1, 1, 1, 2, 2, 2, 3, 3, 3};
    const std::vector<std::uint8_t> vis{1, 0, 1};
    accumulate_stats(s, g, vis, r, p);
    accumulate_stats(s, g, vis, std::vector<double>{9, 9, 2});
    EXPECT_EQ(s.grad_sum, (std::vector<double>{2, 0, 6}));
    EXPECT_EQ(s.count, (std::vector<double>{2, 0, 2}));
    EXPECT_EQ(s.max_radius, (std::vector<double>{9, 0, 7}));
    EXPECT_EQ(s.pos_grad_sum[6], 3.0);
    EXPECT_EQ(s.pos_grad_sum[3], 0.0);
    EXPECT_THROW(accumulate_stats(s, std::vector<double>{1, 2}, vis), ShapeError);
    EXPECT_THROW(accumulate_stats(s, g, vis, std::vector<double>{1}), ShapeError);
}

TEST(Densify, NoChangeOffTick) {
    GaussianSet g = pair_set();
    const GaussianSet before = g;
    DensifyStats s = hot_stats(2, 1.0);
    Rng rng(1);
    const auto rep = densify_and_prune(g, s, 2050, window(2000, 3000, 2000), DensifyParams{}, rng);
    EXPECT_FALSE(rep.ran);
    EXPECT_EQ(g, before);
    EXPECT_EQ(rep.origin, (std::vector<std::int64_t>{0, 1}));
    EXPECT_EQ(s.grad_sum[0], 2.0);
}

TEST(Densify, ClonesSmallAndSplitsLargeGaussians) {
    GaussianSet g = pair_set();
    DensifyStats s = hot_stats(2, 1e-3);
    Rng rng(2);
    DensifyParams p;
    p.scene_extent = 2.0;
    const auto rep = densify_and_prune(g, s, 2000, window(2000, 3000, 5000), p, rng);
    EXPECT_TRUE(rep.ran);
    EXPECT_EQ(rep.cloned, 1u);
    EXPECT_EQ(rep.split, 1u);
    EXPECT_EQ(rep.count_before, 2u);
    // Original small kept, its clone, two children of the split parent.
    ASSERT_EQ(g.count(), 4u);
    EXPECT_EQ(rep.origin, (std::vector<std::int64_t>{0, -1, -1, -1}));
    EXPECT_EQ(g.position(0), Vec3(0, 0, 0));
    EXPECT_NEAR(g.position(1).x(), -0.01 * 2.0, 1e-15);
    for (std::size_t c : {2u, 3u}) {
        EXPECT_NEAR(g.log_scales[3 * c], std::log(0.5 / 1.6), 1e-12);
        EXPECT_NEAR(g.log_scales[3 * c + 2], std::log(0.1 / 1.6), 1e-12);
        EXPECT_EQ(g.sh_dc[3 * c], 0.1 * 3.0);
    }
    EXPECT_EQ(s.size(), 4u);
    for (double v : s.grad_sum) EXPECT_EQ(v, 0.0);
}

TEST(Densify, BelowThresholdOnlyPrunes) {
    GaussianSet g = pair_set();
    g.opacity_logits[1] = logit(0.001);
    DensifyStats s = hot_stats(2, 1e-5);
    Rng rng(3);
    const auto rep = densify_and_prune(g, s, 2000, window(2000, 3000, 2000), DensifyParams{}, rng);
    EXPECT_EQ(rep.cloned + rep.split, 0u);
    EXPECT_EQ(rep.pruned, 1u);
    ASSERT_EQ(g.count(), 1u);
    EXPECT_EQ(rep.origin, (std::vector<std::int64_t>{0}));
}

TEST(Densify, PrunesScreenFilling) {
    GaussianSet g = pair_set();
    DensifyStats s(2);
    s.max_radius = {10, 120};
    Rng rng(4);
    DensifyParams p;
    p.image_edge = 128;
    const auto rep = densify_and_prune(g, s, 2000, window(2000, 3000, 2000), p, rng);
    EXPECT_EQ(rep.pruned, 1u);
    EXPECT_EQ(g.count(), 1u);
}

TEST(Densify, NoPruningBeforePruneStart) {
    GaussianSet g = pair_set();
    g.opacity_logits = {logit(0.001), logit(0.001)};
    DensifyStats s(2);
    Rng rng(5);
    const auto rep = densify_and_prune(g, s, 2000, window(2000, 3000, 2500), DensifyParams{}, rng);
    EXPECT_TRUE(rep.ran);
    EXPECT_EQ(rep.pruned, 0u);
    EXPECT_EQ(g.count(), 2u);
}

TEST(Densify, SeededSplitsAreDeterministic) {
    GaussianSet a = pair_set(), b = pair_set();
    DensifyStats sa = hot_stats(2, 1.0), sb = hot_stats(2, 1.0);
    Rng ra(9), rb(9);
    densify_and_prune(a, sa, 2000, window(2000, 3000, 2000), DensifyParams{}, ra);
    densify_and_prune(b, sb, 2000, window(2000, 3000, 2000), DensifyParams{}, rb);
    EXPECT_EQ(a, b);
}

TEST(Densify, StatsMismatchThrows) {
    GaussianSet g = pair_set();
    DensifyStats s(3);
    Rng rng(1);
    EXPECT_THROW(densify_and_prune(g, s, 2000, window(2000, 3000, 2000), DensifyParams{}, rng), ShapeError);
}

TEST(OpacityReset, ClampsOnlyAtResetTicks) {
    GaussianSet g = pair_set();
    g.opacity_logits = {logit(0.9), logit(0.004)};
    const GrowthSchedule s = window(2000, 3000, 2000);
    EXPECT_FALSE(opacity_reset(g, 2000, s, 0.01));
    EXPECT_NEAR(sigmoid(g.opacity_logits[0]), 0.9, 1e-12);
    EXPECT_TRUE(opacity_reset(g, 2100, s, 0.01));
    EXPECT_NEAR(sigmoid(g.opacity_logits[0]), 0.01, 1e-12);
    EXPECT_NEAR(sigmoid(g.opacity_logits[1]), 0.004, 1e-12);
}
