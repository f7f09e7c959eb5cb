#include "rsplat/io.hpp"
#include "rsplat/losses.hpp"
#include "rsplat/trainer.hpp"
#include "fixtures.hpp"
#include "test_helpers.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

using namespace rsplat;
using rsplat::testing::tiny_config;
using rsplat::testing::tiny_dataset;

namespace {

const std::vector<PreparedView>& tiny_views() {
    static const auto views = prepare_views(tiny_dataset(), tiny_config());
    return views;
}

TrainState fresh(const std::string& flags, TrainConfig cfg = tiny_config()) {
    return init_state(tiny_dataset(), cfg, AblationFlags::parse(flags));
}

}  // namespace

TEST(Flags, ParseAndFormat) {
    EXPECT_EQ(AblationFlags::parse("mask,dg,mb,reg,densify"), AblationFlags::full());
    EXPECT_EQ(AblationFlags::parse(""), AblationFlags{});
    const auto f = AblationFlags::parse(" mask , densify");
    EXPECT_TRUE(f.enable_mask);
    EXPECT_TRUE(f.enable_densification);
    EXPECT_FALSE(f.enable_reg);
    EXPECT_EQ(f.to_string(), "mask,densify");
    EXPECT_EQ(AblationFlags::parse(AblationFlags::full().to_string()), AblationFlags::full());
    EXPECT_THROW(AblationFlags::parse("mask,growth"), ConfigError);
}

TEST(Flags, EffectiveSchedule) {
    const TrainConfig cfg = TrainConfig::defaults();
    EXPECT_EQ(effective_schedule(cfg, AblationFlags::parse("densify")).densify_start_iter, 100);
    EXPECT_EQ(effective_schedule(cfg, AblationFlags::parse("dg,densify")).densify_start_iter, 2000);
    const GrowthSchedule off = effective_schedule(cfg, AblationFlags::parse("mask,dg"));
    for (int i = 0; i <= cfg.total_iters; ++i) ASSERT_FALSE(off.is_densify_tick(i) || off.is_reset_tick(i));
}

TEST(SupervisionScale, LowBeforeGrowthOnlyWithBootstrapping) {
    const TrainConfig cfg = TrainConfig::defaults();
    const auto full = AblationFlags::full();
    EXPECT_EQ(supervision_scale(0, cfg, full), FeatureLevel::low);
    EXPECT_EQ(supervision_scale(1999, cfg, full), FeatureLevel::low);
    EXPECT_EQ(supervision_scale(2000, cfg, full), FeatureLevel::high);
    const auto no_mb = AblationFlags::parse("mask,reg,dg,densify");
    EXPECT_EQ(supervision_scale(0, cfg, no_mb), FeatureLevel::high);
    const auto vanilla_mb = AblationFlags::parse("mask,reg,mb,densify");
    EXPECT_EQ(supervision_scale(99, cfg, vanilla_mb), FeatureLevel::low);
    EXPECT_EQ(supervision_scale(100, cfg, vanilla_mb), FeatureLevel::high);
}

TEST(Initialization, NearestNeighbourScaleAndOpacity) {
    std::vector<InitPoint> pts;
    for (int i = 0; i < 5; ++i) pts.push_back({Vec3(i, 0, 0), Vec3(0.5, 0.5, 0.5)});
    const GaussianSet g = init_gaussians(pts);
    ASSERT_EQ(g.count(), 5u);
    // Middle point: neighbours at distances 1, 1, 2.
    EXPECT_NEAR(std::exp(g.log_scales[6]), std::sqrt((1.0 + 1.0 + 4.0) / 3.0), 1e-12);
    EXPECT_NEAR(sigmoid(g.opacity_logits[2]), 0.1, 1e-12);
    EXPECT_EQ(g.rotation(2), Vec4(1, 0, 0, 0));
    EXPECT_NEAR(g.sh_dc[0], 0.0, 1e-15);
    EXPECT_THROW(init_gaussians({}), ConfigError);
}

TEST(Initialization, StateIsSeeded) {
    const TrainState a = fresh("mask"), b = fresh("mask");
    EXPECT_TRUE(a == b);
    TrainConfig cfg = tiny_config();
    cfg.seed = 6;
    const TrainState c = fresh("mask", cfg);
    EXPECT_NE(a.mlp, c.mlp);
    EXPECT_EQ(a.cameras.size(), tiny_dataset().train.size() + tiny_dataset().test.size());
}

TEST(PreparedViews, LevelsAndShapes) {
    const auto& views = tiny_views();
    ASSERT_EQ(views.size(), 8u);
    EXPECT_EQ(views[0].low_camera.width, 56);
    EXPECT_EQ(views[0].low_image.width, 56);
    EXPECT_EQ(views[0].features_low.grid_w, 4);
    EXPECT_EQ(views[0].features_high.grid_w, 9);
    TrainConfig bad = tiny_config();
    bad.feature_dim = 8;
    EXPECT_THROW(prepare_views(tiny_dataset(), bad), ConfigError);
}

TEST(TrainStep, ZeroMaskLeavesGaussiansUnchanged) {
    TrainState st = fresh("mask,reg");
    st.mlp.b2 = -1e4;  // sigmoid saturates to exactly 0
    const GaussianSet before = st.gaussians;
    for (int i = 0; i < 5; ++i) {
        const StepLog log = train_step(st, tiny_views()[static_cast<std::size_t>(i)]);
        EXPECT_EQ(log.mask_mean, 0.0);
        EXPECT_FALSE(log.rolled_back);
    }
    EXPECT_EQ(st.gaussians, before);
    EXPECT_EQ(st.iteration, 5);
}

TEST(TrainStep, AllOnesMaskMatchesUnmaskedVanillaBitForBit) {
    TrainState masked = fresh("mask,reg");
    masked.mlp.b2 = 1e4;  // sigmoid saturates to exactly 1
    TrainState vanilla = fresh("");
    for (int i = 0; i < 12; ++i) {
        const auto& v = tiny_views()[static_cast<std::size_t>(i % 8)];
        const StepLog a = train_step(masked, v);
        const StepLog b = train_step(vanilla, v);
        ASSERT_EQ(a.mask_mean, 1.0);
        ASSERT_EQ(a.loss_photo, b.loss_photo);
    }
    EXPECT_EQ(masked.gaussians, vanilla.gaussians);
    EXPECT_EQ(masked.adam_m, vanilla.adam_m);
    EXPECT_EQ(masked.adam_v, vanilla.adam_v);
}

TEST(TrainStep, PhotometricAndMaskLossesAreIsolated) {
    const auto& view = tiny_views()[2];
    auto step_with = [&](TrainConfig cfg) {
        TrainState st = fresh("mask,reg,mb", cfg);
        train_step(st, view);
        return st;
    };
    const TrainConfig base = tiny_config();

    // MLP loss weights cannot reach the Gaussians.
    TrainConfig heavy_mask = base;
    heavy_mask.lambda_cos = 5.0;
    heavy_mask.lambda_residual = 3.0;
    const TrainState a = step_with(base), b = step_with(heavy_mask);
    EXPECT_EQ(a.gaussians, b.gaussians);
    EXPECT_NE(a.mlp.w1, b.mlp.w1);

    // The photometric weighting cannot reach the MLP.
    TrainConfig heavy_ssim = base;
    heavy_ssim.lambda_dssim = 0.6;
    const TrainState c = step_with(heavy_ssim);
    EXPECT_EQ(a.mlp, c.mlp);
    EXPECT_NE(a.gaussians, c.gaussians);
}

TEST(TrainStep, PixelMaskIsRefinedPreStepPrediction) {
    TrainState st = fresh("mask,reg");
    const auto& view = tiny_views()[1];
    const auto full = render(st.gaussians, view.camera, st.background);
    const MaskStep ms = compute_mask_step(st, view, full.image, 1, {});
    const auto pred = predict_mask(st.mlp, view.features_high);
    EXPECT_EQ(ms.pixel_mask, refine_mask(pred.mask, 64, 64, st.config.dilation_kernel));
    EXPECT_TRUE(ms.finite);
    EXPECT_GT(ms.loss, 0.0);
    const StepLog log = train_step(st, view);
    EXPECT_DOUBLE_EQ(log.mask_mean, ms.pixel_mask.mean());
}

TEST(TrainStep, LowLevelSupervisionUsesTheLowGrid) {
    TrainState st = fresh("mask,reg,mb,dg,densify");
    const auto& view = tiny_views()[0];
    const auto full = render(st.gaussians, view.camera, st.background);
    const MaskStep lo = compute_mask_step(st, view, full.image, 1, {});
    const auto pred = predict_mask(st.mlp, view.features_low);
    EXPECT_EQ(pred.mask.width, 4);
    EXPECT_EQ(lo.pixel_mask, refine_mask(pred.mask, 64, 64, st.config.dilation_kernel));
    EXPECT_EQ(lo.grads.w1.size(), st.mlp.w1.size());
}

TEST(TrainStep, NonFiniteStepRollsBack) {
    TrainState st = fresh("mask,reg,densify");
    for (std::size_t i = 0; i < st.gaussians.count(); i += 2) st.gaussians.sh_dc[3 * i] = std::numeric_limits<double>::quiet_NaN();
    const GaussianSet before = st.gaussians;
    const MaskMLP mlp_before = st.mlp;
    const StepLog log = train_step(st, tiny_views()[0]);
    EXPECT_TRUE(log.rolled_back);
    EXPECT_EQ(st.rollbacks, 1u);
    EXPECT_EQ(st.iteration, 1);
    EXPECT_EQ(st.gaussians.positions, before.positions);
    EXPECT_EQ(st.gaussians.opacity_logits, before.opacity_logits);
    EXPECT_EQ(std::memcmp(st.gaussians.sh_dc.data(), before.sh_dc.data(), 8 * before.sh_dc.size()), 0);
    EXPECT_EQ(st.mlp, mlp_before);
    EXPECT_EQ(st.adam_step, 0u);
}

TEST(Training, DeterministicAcrossRuns) {
    TrainState a = fresh("mask,reg,dg,mb,densify"), b = fresh("mask,reg,dg,mb,densify");
    run_training(a, tiny_dataset(), tiny_views());
    run_training(b, tiny_dataset(), tiny_views());
    EXPECT_TRUE(a == b);
    EXPECT_EQ(format_metrics_csv(a.history), format_metrics_csv(b.history));
}

TEST(Training, ThreadCountDoesNotChangeResults) {
    TrainState a = fresh("mask,reg,densify"), b = fresh("mask,reg,densify");
    run_training(a, tiny_dataset(), tiny_views(), {1}, {}, 50);
    run_training(b, tiny_dataset(), tiny_views(), {3}, {}, 50);
    EXPECT_TRUE(a == b);
}

TEST(Training, ResumeFromCheckpointMatchesUninterrupted) {
    TrainState whole = fresh("mask,reg,dg,mb,densify");
    run_training(whole, tiny_dataset(), tiny_views());

    TrainState first = fresh("mask,reg,dg,mb,densify");
    run_training(first, tiny_dataset(), tiny_views(), {}, {}, 70);
    ASSERT_EQ(first.iteration, 70);
    TrainState resumed = deserialize_checkpoint(serialize_checkpoint(first));
    run_training(resumed, tiny_dataset(), tiny_views());
    EXPECT_TRUE(resumed == whole);
    EXPECT_EQ(serialize_checkpoint(resumed), serialize_checkpoint(whole));
}

TEST(Training, SmokeRunImprovesAndKeepsCountBeforeGrowth) {
    TrainConfig cfg = tiny_config();
    cfg.total_iters = 200;
    cfg.densify_start_iter = cfg.prune_start_iter = 100;
    cfg.densify_end_iter = 160;
    cfg.opacity_reset_start_iter = 190;
    cfg.eval_interval = 20;
    TrainState st = fresh("mask,reg,dg,mb,densify", cfg);
    const auto views = prepare_views(tiny_dataset(), cfg);
    std::vector<MetricRow> rows;
    run_training(st, tiny_dataset(), views, {}, [&](const MetricRow& r) { rows.push_back(r); });
    ASSERT_EQ(rows.size(), 11u);
    EXPECT_EQ(rows.front().iter, 0);
    EXPECT_EQ(rows.back().iter, 200);
    EXPECT_EQ(st.history, rows);
    EXPECT_EQ(st.rollbacks, 0u);
    for (const auto& r : rows) {
        EXPECT_TRUE(std::isfinite(r.psnr));
        if (r.iter < cfg.densify_start_iter) {
            EXPECT_EQ(r.gauss_count, rows.front().gauss_count) << r.iter;
        }
    }
    EXPECT_GT(rows.back().psnr, rows.front().psnr + 3.0);
    EXPECT_FALSE(st.events.empty());
    EXPECT_EQ(st.events.front().event, "densify");
    EXPECT_GE(st.events.front().iter, 100);
}

TEST(Training, WithoutDensificationCountNeverChanges) {
    TrainState st = fresh("mask,reg");
    run_training(st, tiny_dataset(), tiny_views());
    for (const auto& r : st.history) EXPECT_EQ(r.gauss_count, st.history.front().gauss_count);
    EXPECT_TRUE(st.events.empty());
}

TEST(Training, RejectsMismatchedViews) {
    TrainState st = fresh("");
    std::vector<PreparedView> fewer(tiny_views().begin(), tiny_views().begin() + 3);
    EXPECT_THROW(run_training(st, tiny_dataset(), fewer), ShapeError);
}

TEST(Output, CsvFormatsAndTrainWritesFiles) {
    const std::string csv = format_metrics_csv({{0, 20.5, 0.5, 10, 1.0, 0.0, 0.0}, {200, 25.25, 0.75, 12, 0.9, 0.01, 0.02}});
    EXPECT_EQ(csv,
              "iter,psnr,ssim,gauss_count,mask_mean,loss_photo,loss_mlp\n"
              "0,20.500000,0.500000,10,1.000000,0.00000000,0.00000000\n"
              "200,25.250000,0.750000,12,0.900000,0.01000000,0.02000000\n");
    EXPECT_EQ(format_events_csv({{40, "densify", 10, 14}}), "iter,event,count_before,count_after\n40,densify,10,14\n");

    const auto dir = rsplat::testing::temp_dir("train_out");
    TrainConfig cfg = tiny_config();
    cfg.total_iters = 45;
    cfg.densify_end_iter = 45;
    cfg.opacity_reset_start_iter = 45;
    const TrainState st = train(tiny_dataset(), cfg, AblationFlags::full(), dir.string());
    EXPECT_EQ(read_text_file((dir / "train.csv").string()), format_metrics_csv(st.history));
    EXPECT_EQ(read_text_file((dir / "events.csv").string()), format_events_csv(st.events));
    EXPECT_TRUE(load_checkpoint((dir / "checkpoint.rspl").string()) == st);
}
