#pragma once

#include "rsplat/core.hpp"
#include "rsplat/scenegen.hpp"
#include "rsplat/trainer.hpp"

#include <string>
#include <vector>

namespace rsplat {

/// IoU of the transient regions (value < threshold) of two masks; 1 when
/// both are empty. Throws ShapeError on mismatched sizes.
double mask_iou(const TransientMask& pred, const TransientMask& gt, double threshold = 0.5);

struct EvalRecord {
    std::string config;
    std::uint64_t seed = 0;
    double psnr = 0, ssim = 0, mask_iou = 0;
};

struct EvalOptions {
    /// Exclude GT-transient pixels from PSNR. Test views carry no transients,
    /// so this only matters when evaluating on training views.
    bool masked_metrics = false;
    /// Evaluate PSNR/SSIM on training views (against GT masks) instead of test views.
    bool on_train_views = false;
    RuntimeOptions runtime;
};

/// Pixel-resolution mask the model predicts for a training view; all ones
/// when the mask is disabled.
TransientMask predicted_mask(const TrainState& state, const PreparedView& view);

EvalRecord evaluate_state(const TrainState& state, const DatasetBundle& data, const EvalOptions& opts = {},
                          std::vector<ImageBuffer>* renders = nullptr);
EvalRecord evaluate_checkpoint(const std::string& checkpoint_path, const DatasetBundle& data,
                               const EvalOptions& opts = {}, std::vector<ImageBuffer>* renders = nullptr);

std::string metrics_csv_header();
std::string metrics_csv_row(const EvalRecord& r);

}  // namespace rsplat
