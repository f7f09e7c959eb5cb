#pragma once

#include "rsplat/core.hpp"

#include <cstdint>

namespace rsplat {

/// Every hyperparameter and schedule knob of a training run.
///
/// Iteration counts are expressed at desk scale: the reference 30K-iteration
/// schedule is multiplied by `schedule_scale` (default 1/5), which keeps the
/// phase ratios of the delayed-growth schedule intact.
struct TrainConfig {
    double schedule_scale = 0.2;

    int total_iters = 6000;
    int densify_start_iter = 2000;
    int densify_interval = 100;
    int densify_end_iter = 3000;
    int prune_start_iter = 2000;
    int opacity_reset_start_iter = 3000;
    int opacity_reset_interval = 600;
    double opacity_reset_cap = 0.01;
    double grad_threshold = 2e-4;
    double percent_dense = 0.01;
    double min_opacity = 0.005;

    double lambda_dssim = 0.2;
    double lambda_residual = 0.5;
    double lambda_cos = 0.5;
    double lambda_reg = 2.0;
    double beta_reg = 400.0;
    double tau_u = 0.6;
    double tau_l = 0.8;

    double mlp_lr = 0.001;
    int mlp_hidden_dim = 64;
    int feature_dim = 16;
    int patch_size = 14;
    int low_res_edge = 56;
    int high_res_edge = 126;
    int residual_extra_downsample = 4;
    int dilation_kernel = 7;

    // Gaussian-parameter learning rates (position is multiplied by the scene
    // extent and decays exponentially from init to final over total_iters).
    double position_lr_init = 1.6e-4;
    double position_lr_final = 1.6e-6;
    double color_lr = 2.5e-3;
    double opacity_lr = 5e-2;
    double scaling_lr = 5e-3;
    double rotation_lr = 1e-3;

    int sh_degree = 1;
    int eval_interval = 200;
    double alpha_min = 1.0 / 255.0;

    std::uint64_t seed = 0;
    Vec3 background_color = Vec3::Zero();

    /// Desk-scale defaults derived from the reference schedule.
    static TrainConfig defaults(double schedule_scale = 0.2);

    /// Iteration at which vanilla growth would start under this config's scale.
    [[nodiscard]] int vanilla_densify_start() const;
    [[nodiscard]] int vanilla_opacity_reset_start() const;

    /// Throws ConfigError on a violated invariant.
    void validate() const;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Reference schedule values (30K-iteration run) before scaling.
namespace reference_schedule {
inline constexpr int kTotalIters = 30000;
inline constexpr int kDelayedDensifyStart = 10000;
inline constexpr int kDelayedPruneStart = 10000;
inline constexpr int kDelayedOpacityResetStart = 15000;
inline constexpr int kOpacityResetInterval = 3000;
inline constexpr int kVanillaDensifyStart = 500;
inline constexpr int kVanillaOpacityResetStart = 3000;
inline constexpr int kDensifyInterval = 100;
inline constexpr double kBetaReg = 2000.0;
}  // namespace reference_schedule

}  // namespace rsplat
