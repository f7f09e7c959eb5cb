#pragma once

#include "rsplat/core.hpp"
#include "rsplat/features.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace rsplat {

/// Two-layer transient-mask predictor shared by all training views:
/// M = sigmoid(w2 . relu(W1 f + b1) + b2), evaluated per feature patch.
struct MaskMLP {
    int dim_in = 0;
    int hidden = 0;
    std::vector<double> w1;  // hidden x dim_in, row-major
    std::vector<double> b1;  // hidden
    std::vector<double> w2;  // hidden
    double b2 = 0;

    // Adam state, same shapes as the weights.
    std::vector<double> m_w1, v_w1, m_b1, v_b1, m_w2, v_w2;
    double m_b2 = 0, v_b2 = 0;
    std::uint64_t step = 0;
    std::uint64_t skipped_steps = 0;

    /// Uniform +-1/sqrt(fan_in) weights, output bias `output_bias`.
    static MaskMLP create(int dim_in, int hidden, std::uint64_t seed, double output_bias = 2.0);

    friend bool operator==(const MaskMLP&, const MaskMLP&) = default;
};

struct MaskMLPGrads {
    std::vector<double> w1, b1, w2;
    double b2 = 0;
};

/// Forward activations retained for the backward pass.
struct MaskForward {
    TransientMask mask;             // grid_w x grid_h, values in (0, 1)
    std::vector<double> pre_hidden;  // cells x hidden
};

/// Per-patch mask prediction. Throws ShapeError when f.dim != mlp.dim_in.
MaskForward predict_mask(const MaskMLP& mlp, const FeatureMap& f);

/// Gradients of a loss w.r.t. the weights given dL/dM per patch.
MaskMLPGrads predict_mask_backward(const MaskMLP& mlp, const FeatureMap& f, const MaskForward& fwd,
                                   const TransientMask& d_mask);

/// Bilinear upsample to target size followed by a kernel x kernel min filter,
/// which grows the transient (low-confidence) regions.
/// Throws ConfigError for an even or non-positive kernel.
TransientMask refine_mask(const TransientMask& patch_mask, int target_w, int target_h, int kernel);

/// Grayscale erosion (min filter) over a kernel x kernel window, edges clamped.
TransientMask erode(const TransientMask& m, int kernel);

struct AdamParams {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One Adam update. A non-finite gradient skips the whole update and bumps
/// `skipped_steps`; returns false in that case.
bool mlp_adam_step(MaskMLP& mlp, const MaskMLPGrads& grads, const AdamParams& params = {});

}  // namespace rsplat
