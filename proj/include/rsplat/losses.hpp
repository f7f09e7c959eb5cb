#pragma once

#include "rsplat/config.hpp"
#include "rsplat/core.hpp"
#include "rsplat/features.hpp"

#include <vector>

namespace rsplat {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr double kPsnrCap = 99.0;

struct SsimResult {
    double value = 0;          // mean of `map`
    std::vector<double> map;   // per pixel, averaged over channels
};

/// Windowed SSIM with an 11x11 Gaussian window (sigma 1.5) and zero padding,
/// output the same size as the inputs. Throws ShapeError on mismatched or
/// smaller-than-window images.
SsimResult ssim(const ImageBuffer& a, const ImageBuffer& b);

/// 10 log10(1 / MSE), capped at kPsnrCap for identical images.
double psnr(const ImageBuffer& a, const ImageBuffer& b);
/// PSNR over pixels whose weight is > 0.5 only.
double psnr_masked(const ImageBuffer& a, const ImageBuffer& b, const TransientMask& keep);

struct PhotometricLoss {
    double value = 0;
    double l1 = 0;     // masked mean L1 term
    double dssim = 0;  // masked mean D-SSIM term
    std::vector<double> d_render;  // same layout as ImageBuffer::values
};

/// (1 - lambda) mean(M * L1) + lambda mean(M * (1 - SSIM) / 2). The mask is a
/// constant; pixels with M = 0 are replaced by ground truth inside the SSIM
/// windows, so they receive exactly zero gradient.
PhotometricLoss photometric_loss(const ImageBuffer& render, const ImageBuffer& gt, const TransientMask& mask,
                                 double lambda_dssim);

/// Mean absolute color error per pixel, smoothed with a 3x3 box filter.
TransientMask residual_map(const ImageBuffer& render, const ImageBuffer& gt);

/// Linear-interpolation empirical quantile.
double quantile(std::vector<double> values, double tau);

/// Binary inlier maps (1 = static): strict (tau_u quantile) and loose (tau_l).
struct ResidualBounds {
    TransientMask low;   // residual <= q_u
    TransientMask high;  // residual <= q_l
    double q_u = 0, q_l = 0;
};

ResidualBounds residual_bounds(const TransientMask& residual, double tau_u, double tau_l);

struct MaskLoss {
    double value = 0;
    TransientMask grad;  // dL/dM, same shape as M
};

/// mean(max(b_low - M, 0) + max(M - b_high, 0)).
MaskLoss loss_residual(const TransientMask& m, const ResidualBounds& bounds);
/// mean |M - M_cos| on the patch grid.
MaskLoss loss_cos(const TransientMask& m, const CosineMap& m_cos);
/// exp(-i / beta_reg) mean |1 - M|.
MaskLoss loss_reg(const TransientMask& m, int iteration, double beta_reg);
/// lambda_residual * residual + lambda_cos * cos + lambda_reg * reg.
double loss_mlp(double residual_term, double cos_term, double reg_term, const TrainConfig& cfg);

}  // namespace rsplat
