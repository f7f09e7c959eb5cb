#include "rsplat/maskmlp.hpp"

#include "rsplat/random.hpp"

#include <algorithm>
#include <cmath>

namespace rsplat {

MaskMLP MaskMLP::create(int dim_in, int hidden, std::uint64_t seed, double output_bias) {
    MaskMLP m;
    m.dim_in = dim_in;
    m.hidden = hidden;
    Rng rng(seed);
    const double a1 = 1.0 / std::sqrt(static_cast<double>(dim_in));
    const double a2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    m.w1.resize(static_cast<std::size_t>(hidden) * dim_in);
    for (double& w : m.w1) w = uniform(rng, -a1, a1);
    m.b1.resize(hidden);
    for (double& b : m.b1) b = uniform(rng, -a1, a1);
    m.w2.resize(hidden);
    for (double& w : m.w2) w = uniform(rng, -a2, a2);
    m.b2 = output_bias;
    m.m_w1.assign(m.w1.size(), 0.0);
    m.v_w1.assign(m.w1.size(), 0.0);
    m.m_b1.assign(m.b1.size(), 0.0);
    m.v_b1.assign(m.b1.size(), 0.0);
    m.m_w2.assign(m.w2.size(), 0.0);
    m.v_w2.assign(m.w2.size(), 0.0);
    return m;
}

MaskForward predict_mask(const MaskMLP& mlp, const FeatureMap& f) {
    if (f.dim != mlp.dim_in) {
        throw ShapeError("feature dim " + std::to_string(f.dim) + " does not match MLP input dim " +
                         std::to_string(mlp.dim_in));
    }
    MaskForward out;
    out.mask = TransientMask(f.grid_w, f.grid_h, 0.0);
    out.pre_hidden.resize(f.cells() * mlp.hidden);
    for (std::size_t cidx = 0; cidx < f.cells(); ++cidx) {
        const double* x = f.cell(cidx);
        double* pre = out.pre_hidden.data() + cidx * mlp.hidden;
        double logit_out = mlp.b2;
        for (int h = 0; h < mlp.hidden; ++h) {
            const double* row = mlp.w1.data() + static_cast<std::size_t>(h) * mlp.dim_in;
            double s = mlp.b1[h];
            for (int k = 0; k < mlp.dim_in; ++k) s += row[k] * x[k];
            pre[h] = s;
            if (s > 0) logit_out += mlp.w2[h] * s;
        }
        out.mask.values[cidx] = sigmoid(logit_out);
    }
    return out;
}

MaskMLPGrads predict_mask_backward(const MaskMLP& mlp, const FeatureMap& f, const MaskForward& fwd,
                                   const TransientMask& d_mask) {
    if (d_mask.pixels() != f.cells()) throw ShapeError("mask gradient does not match the feature grid");
    MaskMLPGrads g;
    g.w1.assign(mlp.w1.size(), 0.0);
    g.b1.assign(mlp.b1.size(), 0.0);
    g.w2.assign(mlp.w2.size(), 0.0);
    for (std::size_t cidx = 0; cidx < f.cells(); ++cidx) {
        const double m = fwd.mask.values[cidx];
        const double d_logit = d_mask.values[cidx] * m * (1.0 - m);
        if (d_logit == 0.0) continue;
        const double* x = f.cell(cidx);
        const double* pre = fwd.pre_hidden.data() + cidx * mlp.hidden;
        g.b2 += d_logit;
        for (int h = 0; h < mlp.hidden; ++h) {
            if (pre[h] <= 0) continue;
            g.w2[h] += d_logit * pre[h];
            const double d_pre = d_logit * mlp.w2[h];
            g.b1[h] += d_pre;
            double* row = g.w1.data() + static_cast<std::size_t>(h) * mlp.dim_in;
            for (int k = 0; k < mlp.dim_in; ++k) row[k] += d_pre * x[k];
        }
    }
    return g;
}

TransientMask erode(const TransientMask& m, int kernel) {
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("erosion kernel must be odd and >= 1");
    const int r = kernel / 2;
    // Separable min filter.
    TransientMask tmp(m.width, m.height, 0.0), out(m.width, m.height, 0.0);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            double v = 1.0e300;
            for (int dx = std::max(0, x - r); dx <= std::min(m.width - 1, x + r); ++dx) v = std::min(v, m.at(dx, y));
            tmp.at(x, y) = v;
        }
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            double v = 1.0e300;
            for (int dy = std::max(0, y - r); dy <= std::min(m.height - 1, y + r); ++dy)
                v = std::min(v, tmp.at(x, dy));
            out.at(x, y) = v;
        }
    return out;
}

TransientMask refine_mask(const TransientMask& patch_mask, int target_w, int target_h, int kernel) {
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("dilation kernel must be odd and >= 1");
    TransientMask up = resample_bilinear(patch_mask, target_w, target_h);
    for (double& v : up.values) v = std::clamp(v, 0.0, 1.0);
    return erode(up, kernel);
}

namespace {

bool all_finite(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void adam_update(std::vector<double>& w, std::vector<double>& m, std::vector<double>& v, const std::vector<double>& g,
                 const AdamParams& p, double bc1, double bc2) {
    for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = p.beta1 * m[i] + (1 - p.beta1) * g[i];
        v[i] = p.beta2 * v[i] + (1 - p.beta2) * g[i] * g[i];
        w[i] -= p.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + p.eps);
    }
}

}  // namespace

bool mlp_adam_step(MaskMLP& mlp, const MaskMLPGrads& grads, const AdamParams& params) {
    if (grads.w1.size() != mlp.w1.size() || grads.b1.size() != mlp.b1.size() || grads.w2.size() != mlp.w2.size()) {
        throw ShapeError("MLP gradients do not match the weight shapes");
    }
    if (!all_finite(grads.w1) || !all_finite(grads.b1) || !all_finite(grads.w2) || !std::isfinite(grads.b2)) {
        ++mlp.skipped_steps;
        return false;
    }
    ++mlp.step;
    const double bc1 = 1.0 - std::pow(params.beta1, static_cast<double>(mlp.step));
    const double bc2 = 1.0 - std::pow(params.beta2, static_cast<double>(mlp.step));
    adam_update(mlp.w1, mlp.m_w1, mlp.v_w1, grads.w1, params, bc1, bc2);
    adam_update(mlp.b1, mlp.m_b1, mlp.v_b1, grads.b1, params, bc1, bc2);
    adam_update(mlp.w2, mlp.m_w2, mlp.v_w2, grads.w2, params, bc1, bc2);
    mlp.m_b2 = params.beta1 * mlp.m_b2 + (1 - params.beta1) * grads.b2;
    mlp.v_b2 = params.beta2 * mlp.v_b2 + (1 - params.beta2) * grads.b2 * grads.b2;
    mlp.b2 -= params.lr * (mlp.m_b2 / bc1) / (std::sqrt(mlp.v_b2 / bc2) + params.eps);
    return true;
}

}  // namespace rsplat
