#include "rsplat/config.hpp"

#include <cmath>
#include <string>

namespace rsplat {

namespace {
int scale_iters(int iters, double s) { return static_cast<int>(std::lround(iters * s)); }
}  // namespace

TrainConfig TrainConfig::defaults(double schedule_scale) {
    namespace ref = reference_schedule;
    TrainConfig c;
    c.schedule_scale = schedule_scale;
    c.total_iters = scale_iters(ref::kTotalIters, schedule_scale);
    c.densify_start_iter = scale_iters(ref::kDelayedDensifyStart, schedule_scale);
    c.densify_end_iter = c.total_iters / 2;
    c.prune_start_iter = scale_iters(ref::kDelayedPruneStart, schedule_scale);
    c.opacity_reset_start_iter = scale_iters(ref::kDelayedOpacityResetStart, schedule_scale);
    c.opacity_reset_interval = std::max(1, scale_iters(ref::kOpacityResetInterval, schedule_scale));
    c.densify_interval = ref::kDensifyInterval;
    c.beta_reg = ref::kBetaReg * schedule_scale;
    return c;
}

int TrainConfig::vanilla_densify_start() const {
    return scale_iters(reference_schedule::kVanillaDensifyStart, schedule_scale);
}

int TrainConfig::vanilla_opacity_reset_start() const {
    return scale_iters(reference_schedule::kVanillaOpacityResetStart, schedule_scale);
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (total_iters < 0) fail("total_iters must be >= 0");
    if (!(tau_u < tau_l)) fail("tau_u must be < tau_l");
    if (!(tau_u > 0 && tau_l < 1)) fail("tau_u and tau_l must lie in (0, 1)");
    if (densify_start_iter > opacity_reset_start_iter) fail("densify_start_iter must be <= opacity_reset_start_iter");
    if (!(lambda_dssim > 0 && lambda_dssim < 1)) fail("lambda_dssim must lie in (0, 1)");
    for (auto [name, v] : {std::pair{"densify_start_iter", densify_start_iter}, {"densify_end_iter", densify_end_iter},
                           {"prune_start_iter", prune_start_iter}, {"opacity_reset_start_iter", opacity_reset_start_iter}}) {
        if (v < 0) fail(std::string(name) + " must be >= 0");
        if (v > total_iters) fail(std::string(name) + " must be <= total_iters");
    }
    if (densify_interval <= 0 || opacity_reset_interval <= 0) fail("intervals must be > 0");
    if (densify_start_iter > densify_end_iter) fail("densify_start_iter must be <= densify_end_iter");
    if (lambda_residual < 0 || lambda_cos < 0 || lambda_reg < 0) fail("MLP loss weights must be >= 0");
    if (!(beta_reg > 0)) fail("beta_reg must be > 0");
    if (!(mlp_lr > 0)) fail("mlp_lr must be > 0");
    if (mlp_hidden_dim <= 0 || feature_dim <= 0) fail("mlp_hidden_dim and feature_dim must be > 0");
    if (patch_size <= 0) fail("patch_size must be > 0");
    if (low_res_edge < patch_size || high_res_edge < patch_size) fail("feature edges must hold at least one patch");
    if (residual_extra_downsample < 1) fail("residual_extra_downsample must be >= 1");
    if (dilation_kernel < 1 || dilation_kernel % 2 == 0) fail("dilation_kernel must be odd and >= 1");
    if (sh_degree < 0 || sh_degree > 1) fail("sh_degree must be 0 or 1");
    if (eval_interval <= 0) fail("eval_interval must be > 0");
    if (!(opacity_reset_cap > 0 && opacity_reset_cap < 1)) fail("opacity_reset_cap must lie in (0, 1)");
    if (!(alpha_min >= 0 && alpha_min < 0.99)) fail("alpha_min must lie in [0, 0.99)");
    if (!(schedule_scale > 0)) fail("schedule_scale must be > 0");
    for (int c = 0; c < 3; ++c)
        if (!(background_color[c] >= 0 && background_color[c] <= 1)) fail("background_color must lie in [0, 1]");
}

}  // namespace rsplat
