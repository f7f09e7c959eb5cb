#include "rsplat/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace rsplat {

namespace {

std::array<double, kSsimWindow> gaussian_window() {
    std::array<double, kSsimWindow> w{};
    double sum = 0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - kSsimWindow / 2;
        w[i] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
        sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
}

/// Zero-padded separable "same" filtering of a single-channel w x h plane.
void blur(const std::vector<double>& in, std::vector<double>& out, std::vector<double>& tmp, int w, int h) {
    static const auto win = gaussian_window();
    constexpr int r = kSsimWindow / 2;
    tmp.assign(in.size(), 0.0);
    out.assign(in.size(), 0.0);
    for (int y = 0; y < h; ++y) {
        const double* row = in.data() + static_cast<std::size_t>(y) * w;
        double* trow = tmp.data() + static_cast<std::size_t>(y) * w;
        for (int x = 0; x < w; ++x) {
            double s = 0;
            const int k0 = std::max(0, r - x), k1 = std::min(kSsimWindow - 1, r + (w - 1 - x));
            for (int k = k0; k <= k1; ++k) s += win[k] * row[x + k - r];
            trow[x] = s;
        }
    }
    for (int y = 0; y < h; ++y) {
        double* orow = out.data() + static_cast<std::size_t>(y) * w;
        const int k0 = std::max(0, r - y), k1 = std::min(kSsimWindow - 1, r + (h - 1 - y));
        for (int k = k0; k <= k1; ++k) {
            const double wk = win[k];
            const double* trow = tmp.data() + static_cast<std::size_t>(y + k - r) * w;
            for (int x = 0; x < w; ++x) orow[x] += wk * trow[x];
        }
    }
}

struct SsimPlanes {
    std::vector<double> mu_a, mu_b, e_aa, e_bb, e_ab;
};

void check_ssim_shapes(const ImageBuffer& a, const ImageBuffer& b) {
    if (a.width != b.width || a.height != b.height) throw ShapeError("ssim: image shapes differ");
    if (a.width < kSsimWindow || a.height < kSsimWindow) throw ShapeError("ssim: image smaller than the 11x11 window");
}

/// Per-channel SSIM map plus the filtered moments needed for its gradient.
void ssim_channel(const ImageBuffer& a, const ImageBuffer& b, int c, SsimPlanes& p, std::vector<double>& s_map) {
    const int w = a.width, h = a.height;
    const std::size_t n = a.pixels();
    std::vector<double> pa(n), pb(n), paa(n), pbb(n), pab(n), tmp;
    for (std::size_t i = 0; i < n; ++i) {
        pa[i] = a.values[3 * i + c];
        pb[i] = b.values[3 * i + c];
        paa[i] = pa[i] * pa[i];
        pbb[i] = pb[i] * pb[i];
        pab[i] = pa[i] * pb[i];
    }
    blur(pa, p.mu_a, tmp, w, h);
    blur(pb, p.mu_b, tmp, w, h);
    blur(paa, p.e_aa, tmp, w, h);
    blur(pbb, p.e_bb, tmp, w, h);
    blur(pab, p.e_ab, tmp, w, h);
    s_map.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double ma = p.mu_a[i], mb = p.mu_b[i];
        const double saa = p.e_aa[i] - ma * ma, sbb = p.e_bb[i] - mb * mb, sab = p.e_ab[i] - ma * mb;
        s_map[i] = ((2 * ma * mb + kSsimC1) * (2 * sab + kSsimC2)) /
                   ((ma * ma + mb * mb + kSsimC1) * (saa + sbb + kSsimC2));
    }
}

}  // namespace

SsimResult ssim(const ImageBuffer& a, const ImageBuffer& b) {
    check_ssim_shapes(a, b);
    SsimResult r;
    r.map.assign(a.pixels(), 0.0);
    SsimPlanes planes;
    std::vector<double> s;
    for (int c = 0; c < 3; ++c) {
        ssim_channel(a, b, c, planes, s);
        for (std::size_t i = 0; i < s.size(); ++i) r.map[i] += s[i] / 3.0;
    }
    double sum = 0;
    for (double v : r.map) sum += v;
    r.value = sum / static_cast<double>(r.map.size());
    return r;
}

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
    if (a.width != b.width || a.height != b.height) throw ShapeError("psnr: image shapes differ");
    double se = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const double d = a.values[i] - b.values[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.values.size());
    if (mse <= 0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double psnr_masked(const ImageBuffer& a, const ImageBuffer& b, const TransientMask& keep) {
    if (a.width != b.width || a.height != b.height || keep.width != a.width || keep.height != a.height)
        throw ShapeError("psnr_masked: shapes differ");
    double se = 0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < a.pixels(); ++p) {
        if (keep.values[p] <= 0.5) continue;
        for (int c = 0; c < 3; ++c) {
            const double d = a.values[3 * p + c] - b.values[3 * p + c];
            se += d * d;
        }
        n += 3;
    }
    if (n == 0 || se <= 0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(static_cast<double>(n) / se));
}

PhotometricLoss photometric_loss(const ImageBuffer& render, const ImageBuffer& gt, const TransientMask& mask,
                                 double lambda_dssim) {
    if (render.width != gt.width || render.height != gt.height) throw ShapeError("photometric_loss: image shapes differ");
    if (mask.width != render.width || mask.height != render.height)
        throw ShapeError("photometric_loss: mask shape differs from image");
    const std::size_t n = render.pixels();
    const double inv_n = 1.0 / static_cast<double>(n);
    PhotometricLoss out;
    out.d_render.assign(render.values.size(), 0.0);

    // L1.
    double l1 = 0;
    for (std::size_t p = 0; p < n; ++p) {
        const double m = mask.values[p];
        if (m == 0.0) continue;
        double e = 0;
        for (int c = 0; c < 3; ++c) {
            const double d = render.values[3 * p + c] - gt.values[3 * p + c];
            e += std::abs(d);
            const double sgn = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
            out.d_render[3 * p + c] += (1.0 - lambda_dssim) * inv_n * m * sgn / 3.0;
        }
        l1 += m * e / 3.0;
    }
    out.l1 = l1 * inv_n;

    // D-SSIM on the gated render.
    ImageBuffer gated = render;
    for (std::size_t p = 0; p < n; ++p)
        if (mask.values[p] == 0.0)
            for (int c = 0; c < 3; ++c) gated.values[3 * p + c] = gt.values[3 * p + c];
    check_ssim_shapes(gated, gt);

    const int w = render.width, h = render.height;
    SsimPlanes pl;
    std::vector<double> s, tmp;
    std::vector<double> g_mu(n), g_aa(n), g_ab(n), c_mu, c_aa, c_ab;
    double dssim = 0;
    for (int c = 0; c < 3; ++c) {
        ssim_channel(gated, gt, c, pl, s);
        for (std::size_t p = 0; p < n; ++p) {
            const double m = mask.values[p];
            dssim += m * (1.0 - s[p]) / 2.0 / 3.0;
            // dL/dS for this channel's map.
            const double gs = -lambda_dssim * inv_n * m / 2.0 / 3.0;
            const double ma = pl.mu_a[p], mb = pl.mu_b[p];
            const double a1 = 2 * ma * mb + kSsimC1;
            const double a2 = 2 * (pl.e_ab[p] - ma * mb) + kSsimC2;
            const double b1 = ma * ma + mb * mb + kSsimC1;
            const double b2 = pl.e_aa[p] - ma * ma + pl.e_bb[p] - mb * mb + kSsimC2;
            const double inv_b = 1.0 / (b1 * b2);
            const double d_a1 = a2 * inv_b, d_a2 = a1 * inv_b, d_b1 = -s[p] / b1, d_b2 = -s[p] / b2;
            g_mu[p] = gs * (d_a1 * 2 * mb - d_a2 * 2 * mb + d_b1 * 2 * ma - d_b2 * 2 * ma);
            g_aa[p] = gs * d_b2;
            g_ab[p] = gs * 2 * d_a2;
        }
        blur(g_mu, c_mu, tmp, w, h);
        blur(g_aa, c_aa, tmp, w, h);
        blur(g_ab, c_ab, tmp, w, h);
        for (std::size_t p = 0; p < n; ++p) {
            if (mask.values[p] == 0.0) continue;
            const double av = gated.values[3 * p + c], bv = gt.values[3 * p + c];
            out.d_render[3 * p + c] += c_mu[p] + 2 * av * c_aa[p] + bv * c_ab[p];
        }
    }
    out.dssim = dssim * inv_n;
    out.value = (1.0 - lambda_dssim) * out.l1 + lambda_dssim * out.dssim;
    return out;
}

TransientMask residual_map(const ImageBuffer& render, const ImageBuffer& gt) {
    if (render.width != gt.width || render.height != gt.height) throw ShapeError("residual_map: image shapes differ");
    TransientMask raw(render.width, render.height, 0.0);
    for (std::size_t p = 0; p < render.pixels(); ++p) {
        double e = 0;
        for (int c = 0; c < 3; ++c) e += std::abs(render.values[3 * p + c] - gt.values[3 * p + c]);
        raw.values[p] = e / 3.0;
    }
    TransientMask out(render.width, render.height, 0.0);
    for (int y = 0; y < raw.height; ++y)
        for (int x = 0; x < raw.width; ++x) {
            double s = 0;
            int cnt = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int xx = x + dx, yy = y + dy;
                    if (xx < 0 || yy < 0 || xx >= raw.width || yy >= raw.height) continue;
                    s += raw.at(xx, yy);
                    ++cnt;
                }
            out.at(x, y) = s / cnt;
        }
    return out;
}

double quantile(std::vector<double> values, double tau) {
    if (values.empty()) throw ShapeError("quantile of an empty set");
    std::sort(values.begin(), values.end());
    const double pos = tau * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

ResidualBounds residual_bounds(const TransientMask& residual, double tau_u, double tau_l) {
    if (residual.values.empty()) throw ShapeError("residual_bounds: empty residual map");
    ResidualBounds b;
    b.q_u = quantile(residual.values, tau_u);
    b.q_l = quantile(residual.values, tau_l);
    b.low = TransientMask(residual.width, residual.height, 0.0);
    b.high = TransientMask(residual.width, residual.height, 0.0);
    for (std::size_t p = 0; p < residual.pixels(); ++p) {
        b.low.values[p] = residual.values[p] <= b.q_u ? 1.0 : 0.0;
        b.high.values[p] = residual.values[p] <= b.q_l ? 1.0 : 0.0;
    }
    return b;
}

MaskLoss loss_residual(const TransientMask& m, const ResidualBounds& bounds) {
    if (m.width != bounds.low.width || m.height != bounds.low.height || m.width != bounds.high.width ||
        m.height != bounds.high.height)
        throw ShapeError("loss_residual: mask and bounds differ in shape");
    MaskLoss out;
    out.grad = TransientMask(m.width, m.height, 0.0);
    const double inv_n = 1.0 / static_cast<double>(m.pixels());
    double sum = 0;
    for (std::size_t p = 0; p < m.pixels(); ++p) {
        const double under = bounds.low.values[p] - m.values[p];
        const double over = m.values[p] - bounds.high.values[p];
        if (under > 0) {
            sum += under;
            out.grad.values[p] -= inv_n;
        }
        if (over > 0) {
            sum += over;
            out.grad.values[p] += inv_n;
        }
    }
    out.value = sum * inv_n;
    return out;
}

MaskLoss loss_cos(const TransientMask& m, const CosineMap& m_cos) {
    if (m.width != m_cos.grid_w || m.height != m_cos.grid_h) throw ShapeError("loss_cos: mask and cosine map differ");
    MaskLoss out;
    out.grad = TransientMask(m.width, m.height, 0.0);
    const double inv_n = 1.0 / static_cast<double>(m.pixels());
    double sum = 0;
    for (std::size_t p = 0; p < m.pixels(); ++p) {
        const double d = m.values[p] - m_cos.values[p];
        sum += std::abs(d);
        out.grad.values[p] = d > 0 ? inv_n : (d < 0 ? -inv_n : 0.0);
    }
    out.value = sum * inv_n;
    return out;
}

MaskLoss loss_reg(const TransientMask& m, int iteration, double beta_reg) {
    MaskLoss out;
    out.grad = TransientMask(m.width, m.height, 0.0);
    const double decay = std::exp(-static_cast<double>(iteration) / beta_reg);
    const double inv_n = 1.0 / static_cast<double>(m.pixels());
    double sum = 0;
    for (std::size_t p = 0; p < m.pixels(); ++p) {
        const double d = 1.0 - m.values[p];
        sum += std::abs(d);
        out.grad.values[p] = d > 0 ? -decay * inv_n : (d < 0 ? decay * inv_n : 0.0);
    }
    out.value = decay * sum * inv_n;
    return out;
}

double loss_mlp(double residual_term, double cos_term, double reg_term, const TrainConfig& cfg) {
    return cfg.lambda_residual * residual_term + cfg.lambda_cos * cos_term + cfg.lambda_reg * reg_term;
}

}  // namespace rsplat
