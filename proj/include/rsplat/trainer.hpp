#pragma once

#include "rsplat/config.hpp"
#include "rsplat/core.hpp"
#include "rsplat/densify.hpp"
#include "rsplat/features.hpp"
#include "rsplat/maskmlp.hpp"
#include "rsplat/random.hpp"
#include "rsplat/renderer.hpp"
#include "rsplat/scenegen.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace rsplat {

struct AblationFlags {
    bool enable_mask = false;
    bool enable_delayed_growth = false;
    bool enable_bootstrapping = false;
    bool enable_reg = false;
    bool enable_densification = false;

    static AblationFlags full();
    /// Comma-separated subset of {mask, dg, mb, reg, densify}; empty string
    /// means every flag off. Throws ConfigError on unknown tokens.
    static AblationFlags parse(const std::string& list);
    [[nodiscard]] std::string to_string() const;

    friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

/// Growth schedule actually used for a run with these flags.
GrowthSchedule effective_schedule(const TrainConfig& cfg, const AblationFlags& flags);

/// Low before growth starts (only with bootstrapping), high afterwards.
FeatureLevel supervision_scale(int iteration, const TrainConfig& cfg, const AblationFlags& flags);

/// One logged row of the training CSV.
struct MetricRow {
    int iter = 0;
    double psnr = 0, ssim = 0;
    std::size_t gauss_count = 0;
    double mask_mean = 1, loss_photo = 0, loss_mlp = 0;

    friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

struct DensifyEvent {
    int iter = 0;
    std::string event;  // "densify" or "opacity_reset"
    std::size_t count_before = 0, count_after = 0;

    friend bool operator==(const DensifyEvent&, const DensifyEvent&) = default;
};

struct TrainState {
    TrainConfig config;
    AblationFlags flags;
    GaussianSet gaussians;
    GaussianSet adam_m, adam_v;
    std::uint64_t adam_step = 0;
    MaskMLP mlp;
    DensifyStats stats;
    /// Completed steps. Step numbers start at 1.
    int iteration = 0;
    Rng rng;
    std::vector<std::uint32_t> view_order;
    std::uint32_t view_cursor = 0;
    double scene_extent = 1.0;
    Vec3 background = Vec3::Zero();
    /// Every dataset camera: training views first, then test views.
    std::vector<Camera> cameras;
    std::vector<MetricRow> history;
    std::vector<DensifyEvent> events;
    std::uint64_t rollbacks = 0;

    friend bool operator==(const TrainState&, const TrainState&) = default;
};

/// A training view with the image-side quantities cached once per run.
struct PreparedView {
    int camera_id = 0;
    Camera camera, low_camera;
    ImageBuffer image, low_image;
    TransientMask gt_mask;
    FeatureMap features_low, features_high;
};

std::vector<PreparedView> prepare_views(const DatasetBundle& data, const TrainConfig& cfg);

/// Gaussians seeded from the point cloud: isotropic scale from the mean
/// squared distance to the three nearest neighbours, opacity 0.1.
GaussianSet init_gaussians(const std::vector<InitPoint>& points);

TrainState init_state(const DatasetBundle& data, const TrainConfig& cfg, const AblationFlags& flags);

/// Runtime-only knobs that never influence results.
struct RuntimeOptions {
    int threads = 1;
};

struct StepLog {
    int iter = 0;
    int camera_id = 0;
    FeatureLevel level = FeatureLevel::high;
    double loss_photo = 0, loss_mlp = 0, mask_mean = 1;
    bool rolled_back = false;
    DensifyReport densify;
    bool opacity_reset = false;
};

/// Pixel-resolution mask used to weight the photometric loss at a step.
struct MaskStep {
    TransientMask pixel_mask;
    double loss = 0;
    MaskMLPGrads grads;
    bool finite = true;
};

/// Mask supervision for `view` at the level chosen for `iteration`; the
/// returned gradients are for the MLP only.
MaskStep compute_mask_step(const TrainState& state, const PreparedView& view, const ImageBuffer& full_render,
                           int iteration, const RuntimeOptions& rt);

/// One optimization step on `view`. Non-finite losses or gradients leave
/// every parameter untouched and count a rollback.
StepLog train_step(TrainState& state, const PreparedView& view, const RuntimeOptions& rt = {});

/// Test-set PSNR/SSIM of the current Gaussians.
std::pair<double, double> evaluate_test(const TrainState& state, const DatasetBundle& data, const RuntimeOptions& rt);

/// Runs the remaining steps up to config.total_iters, logging a metric row
/// at iteration 0 and every eval_interval. `on_row` is called per row. A
/// non-negative `stop_at` pauses after that many completed steps; calling
/// again later continues exactly where the run left off.
void run_training(TrainState& state, const DatasetBundle& data, const std::vector<PreparedView>& views,
                  const RuntimeOptions& rt = {}, const std::function<void(const MetricRow&)>& on_row = {},
                  int stop_at = -1);

std::string format_metrics_csv(const std::vector<MetricRow>& rows);
std::string format_events_csv(const std::vector<DensifyEvent>& events);

/// Trains from scratch and writes train.csv, events.csv and checkpoint.rspl
/// into `out_dir`.
TrainState train(const DatasetBundle& data, const TrainConfig& cfg, const AblationFlags& flags,
                 const std::string& out_dir, const RuntimeOptions& rt = {});

}  // namespace rsplat
