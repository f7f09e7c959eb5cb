#include "rsplat/renderer.hpp"

#include "rsplat/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace rsplat {

namespace {

/// d(pixel)/d(camera-frame point) of the pinhole projection.
Eigen::Matrix<double, 2, 3> projection_jacobian(const Vec3& p, double fx, double fy) {
    const double iz = 1.0 / p.z();
    Eigen::Matrix<double, 2, 3> j;
    j << fx * iz, 0, -fx * p.x() * iz * iz,  //
        0, fy * iz, -fy * p.y() * iz * iz;
    return j;
}

Vec3 view_direction(const Vec3& position, const Vec3& cam_center) { return (position - cam_center).normalized(); }

Vec3 gaussian_color(const GaussianSet& set, std::size_t i, const Vec3& dir, int sh_degree) {
    return eval_sh_color(std::span<const double, 3>(set.sh_dc.data() + 3 * i, 3),
                         std::span<const double, 9>(set.sh_rest.data() + 9 * i, 9), dir, sh_degree);
}

}  // namespace

std::optional<Splat2D> project(const ActivatedGaussian& g, const Vec3& color, const Camera& cam, int source_index) {
    const Vec3 pc = cam.rotation * g.position + cam.translation;
    if (!(pc.z() > kNearPlane)) return std::nullopt;
    const Mat3 sigma = build_covariance(g.scale, g.rotation);
    const Mat3 sigma_cam = cam.rotation * sigma * cam.rotation.transpose();
    const auto j = projection_jacobian(pc, cam.fx, cam.fy);
    Mat2 cov = j * sigma_cam * j.transpose();
    cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
    cov(0, 0) += kLowPassFloor;
    cov(1, 1) += kLowPassFloor;

    Splat2D s;
    s.mean2d = {cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy};
    s.cov2d = cov;
    s.depth = pc.z();
    s.color = color.cwiseMax(0.0);
    s.opacity = g.opacity;
    s.source_index = source_index;
    return s;
}

std::optional<Splat2D> project(const GaussianSet& set, std::size_t i, const Camera& cam, int sh_degree) {
    const ActivatedGaussian g = activate(set, i);
    const Vec3 dir = view_direction(g.position, cam.center());
    return project(g, gaussian_color(set, i, dir, sh_degree), cam, static_cast<int>(i));
}

std::vector<std::size_t> depth_sort(std::span<const Splat2D> splats) {
    std::vector<std::size_t> order(splats.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (splats[a].depth != splats[b].depth) return splats[a].depth < splats[b].depth;
        return splats[a].source_index < splats[b].source_index;
    });
    return order;
}

RenderResult rasterize(std::vector<Splat2D> splats, const Camera& cam, const Vec3& background,
                       const RenderSettings& settings) {
    RenderResult result;
    RenderAux& aux = result.aux;
    const int w = cam.width, h = cam.height;
    aux.width = w;
    aux.height = h;
    aux.background = background;
    aux.settings = settings;

    // Depth order is applied once; everything downstream indexes sorted splats.
    {
        const auto order = depth_sort(splats);
        std::vector<Splat2D> sorted;
        sorted.reserve(splats.size());
        for (std::size_t k : order) sorted.push_back(splats[k]);
        aux.splats = std::move(sorted);
    }
    const std::size_t n = aux.splats.size();
    aux.packed.resize(n);
    aux.drawn.assign(n, 0);
    aux.radius.assign(n, 0.0);

    const int ts = std::max(1, settings.tile_size);
    aux.tiles_x = (w + ts - 1) / ts;
    aux.tiles_y = (h + ts - 1) / ts;
    const std::size_t num_tiles = static_cast<std::size_t>(aux.tiles_x) * aux.tiles_y;
    std::vector<std::vector<std::int32_t>> tile_lists(num_tiles);

    for (std::size_t k = 0; k < n; ++k) {
        const Splat2D& s = aux.splats[k];
        const double det = s.cov2d.determinant();
        if (!(det > kMinCovDeterminant) || !s.mean2d.allFinite()) {
            ++aux.skipped_singular;
            continue;
        }
        const double inv_det = 1.0 / det;
        auto& p = aux.packed[k];
        p.ux = s.mean2d.x();
        p.uy = s.mean2d.y();
        p.qa = s.cov2d(1, 1) * inv_det;
        p.qb = -s.cov2d(0, 1) * inv_det;
        p.qc = s.cov2d(0, 0) * inv_det;
        p.opacity = s.opacity;
        p.r = s.color.x();
        p.g = s.color.y();
        p.b = s.color.z();
        p.min_power = -std::numeric_limits<double>::infinity();
        if (settings.alpha_min > 0 && s.opacity > settings.alpha_min)
            p.min_power = std::log(settings.alpha_min / s.opacity) - 1e-9;

        const double mid = 0.5 * (s.cov2d(0, 0) + s.cov2d(1, 1));
        const double lambda_max = mid + std::sqrt(std::max(0.1, mid * mid - det));
        aux.radius[k] = std::ceil(3.0 * std::sqrt(lambda_max));

        // Bounding box of the ellipse outside which alpha < alpha_min. The
        // half-widths are sqrt(2 L sigma_xx) and sqrt(2 L sigma_yy) with
        // L = log(opacity / alpha_min), padded slightly against rounding.
        int x0 = 0, x1 = w - 1, y0 = 0, y1 = h - 1;
        if (settings.alpha_min > 0) {
            if (s.opacity <= settings.alpha_min) continue;
            const double two_l = 2.0 * std::log(s.opacity / settings.alpha_min);
            const double ex = std::sqrt(two_l * s.cov2d(0, 0)) * (1 + 1e-9) + 1e-9;
            const double ey = std::sqrt(two_l * s.cov2d(1, 1)) * (1 + 1e-9) + 1e-9;
            x0 = static_cast<int>(std::max<double>(0, std::ceil(p.ux - ex - 0.5)));
            x1 = static_cast<int>(std::min<double>(w - 1, std::floor(p.ux + ex - 0.5)));
            y0 = static_cast<int>(std::max<double>(0, std::ceil(p.uy - ey - 0.5)));
            y1 = static_cast<int>(std::min<double>(h - 1, std::floor(p.uy + ey - 0.5)));
        }
        if (x0 > x1 || y0 > y1) continue;
        p.x0 = x0;
        p.x1 = x1;
        p.y0 = y0;
        p.y1 = y1;
        aux.drawn[k] = 1;
        for (int ty = y0 / ts; ty <= y1 / ts; ++ty)
            for (int tx = x0 / ts; tx <= x1 / ts; ++tx)
                tile_lists[static_cast<std::size_t>(ty) * aux.tiles_x + tx].push_back(static_cast<std::int32_t>(k));
    }

    result.image = ImageBuffer(w, h);
    aux.tile_entries.assign(num_tiles, {});
    aux.pixel_offset.assign(static_cast<std::size_t>(w) * h, 0);
    aux.pixel_count.assign(static_cast<std::size_t>(w) * h, 0);
    aux.final_transmittance.assign(static_cast<std::size_t>(w) * h, 1.0);

    const double alpha_min = settings.alpha_min;
    parallel_for(num_tiles, settings.threads, [&](std::size_t t0, std::size_t t1) {
        for (std::size_t t = t0; t < t1; ++t) {
            const int tx = static_cast<int>(t % aux.tiles_x), ty = static_cast<int>(t / aux.tiles_x);
            const auto& list = tile_lists[t];
            auto& entries = aux.tile_entries[t];
            entries.reserve(list.size() * 8);
            std::vector<std::int32_t> row_list;
            row_list.reserve(list.size());
            for (int py = ty * ts; py < std::min(h, (ty + 1) * ts); ++py) {
                // Splats whose box covers this row, still in depth order.
                row_list.clear();
                for (std::int32_t k : list) {
                    const auto& p = aux.packed[static_cast<std::size_t>(k)];
                    if (py >= p.y0 && py <= p.y1) row_list.push_back(k);
                }
                for (int px = tx * ts; px < std::min(w, (tx + 1) * ts); ++px) {
                    const std::size_t pix = static_cast<std::size_t>(py) * w + px;
                    aux.pixel_offset[pix] = static_cast<std::uint32_t>(entries.size());
                    const double fx = px + 0.5, fy = py + 0.5;
                    double T = 1.0, cr = 0, cg = 0, cb = 0;
                    for (std::int32_t k : row_list) {
                        const auto& p = aux.packed[static_cast<std::size_t>(k)];
                        if (px < p.x0 || px > p.x1) continue;
                        const double dx = fx - p.ux, dy = fy - p.uy;
                        const double power = -0.5 * (p.qa * dx * dx + p.qc * dy * dy) - p.qb * dx * dy;
                        if (power < p.min_power) continue;
                        const double alpha = std::min(kAlphaCap, p.opacity * std::exp(power));
                        if (alpha < alpha_min) continue;
                        const double next_t = T * (1.0 - alpha);
                        if (next_t < kTransmittanceCutoff) break;
                        const double wgt = alpha * T;
                        cr += p.r * wgt;
                        cg += p.g * wgt;
                        cb += p.b * wgt;
                        entries.push_back({k, alpha, T});
                        T = next_t;
                    }
                    aux.pixel_count[pix] = static_cast<std::uint32_t>(entries.size()) - aux.pixel_offset[pix];
                    aux.final_transmittance[pix] = T;
                    double* out = &result.image.values[pix * 3];
                    out[0] = cr + T * background.x();
                    out[1] = cg + T * background.y();
                    out[2] = cb + T * background.z();
                }
            }
        }
    });
    return result;
}

namespace {

/// Per-entry gradient contribution: d mean (2), d conic (a, b, c), d opacity,
/// d color (3).
struct EntryGrad {
    double m[2];
    double q[3];
    double o;
    double c[3];
};

void accumulate(SplatGrads& g, std::size_t k, const EntryGrad& e) {
    g.mean2d[k].x() += e.m[0];
    g.mean2d[k].y() += e.m[1];
    g.conic[k](0, 0) += e.q[0];
    g.conic[k](0, 1) += e.q[1];
    g.conic[k](1, 0) += e.q[1];
    g.conic[k](1, 1) += e.q[2];
    g.opacity[k] += e.o;
    g.color[k].x() += e.c[0];
    g.color[k].y() += e.c[1];
    g.color[k].z() += e.c[2];
}

/// Visits the entries of one pixel back to front, handing each contribution
/// to `sink(entry_index_in_tile, grad)`.
template <typename Sink>
void pixel_backward(const RenderAux& aux, const std::vector<RenderAux::Entry>& entries, std::size_t pix, int px,
                    int py, const double* dc, Sink&& sink) {
    const std::uint32_t off = aux.pixel_offset[pix], cnt = aux.pixel_count[pix];
    const double T_final = aux.final_transmittance[pix];
    double sr = T_final * aux.background.x(), sg = T_final * aux.background.y(), sb = T_final * aux.background.z();
    const double fx = px + 0.5, fy = py + 0.5;
    for (std::uint32_t e = cnt; e-- > 0;) {
        const auto& ent = entries[off + e];
        const auto& p = aux.packed[static_cast<std::size_t>(ent.splat)];
        const double a = ent.alpha, T = ent.transmittance;
        EntryGrad g{};
        const double wgt = a * T;
        g.c[0] = wgt * dc[0];
        g.c[1] = wgt * dc[1];
        g.c[2] = wgt * dc[2];
        const double inv_one_minus = 1.0 / (1.0 - a);
        const double d_alpha = dc[0] * (T * p.r - sr * inv_one_minus) + dc[1] * (T * p.g - sg * inv_one_minus) +
                               dc[2] * (T * p.b - sb * inv_one_minus);
        sr += p.r * wgt;
        sg += p.g * wgt;
        sb += p.b * wgt;

        const double dx = fx - p.ux, dy = fy - p.uy;
        const double power = -0.5 * (p.qa * dx * dx + p.qc * dy * dy) - p.qb * dx * dy;
        const double gauss = std::exp(power);
        if (p.opacity * gauss <= kAlphaCap) {
            g.o = d_alpha * gauss;
            const double d_power = d_alpha * a;
            g.q[0] = -0.5 * d_power * dx * dx;
            g.q[1] = -0.5 * d_power * dx * dy;  // each off-diagonal entry
            g.q[2] = -0.5 * d_power * dy * dy;
            g.m[0] = d_power * (p.qa * dx + p.qb * dy);
            g.m[1] = d_power * (p.qb * dx + p.qc * dy);
        }
        sink(off + e, g);
    }
}

}  // namespace

SplatGrads rasterize_backward_2d(const RenderAux& aux, std::span<const double> d_image,
                                 const TransientMask& pixel_weights) {
    const std::size_t npix = static_cast<std::size_t>(aux.width) * aux.height;
    if (d_image.size() != npix * 3) throw ShapeError("d_image does not match the rendered image size");
    if (pixel_weights.width != aux.width || pixel_weights.height != aux.height)
        throw ShapeError("pixel_weights do not match the rendered image size");

    const std::size_t n = aux.splats.size();
    SplatGrads g;
    g.mean2d.assign(n, Vec2::Zero());
    g.conic.assign(n, Mat2::Zero());
    g.opacity.assign(n, 0.0);
    g.color.assign(n, Vec3::Zero());

    const int ts = std::max(1, aux.settings.tile_size);
    const std::size_t num_tiles = aux.tile_entries.size();
    auto for_tile_pixels = [&](std::size_t t, auto&& body) {
        const int tx = static_cast<int>(t % aux.tiles_x), ty = static_cast<int>(t / aux.tiles_x);
        for (int py = ty * ts; py < std::min(aux.height, (ty + 1) * ts); ++py)
            for (int px = tx * ts; px < std::min(aux.width, (tx + 1) * ts); ++px) {
                const std::size_t pix = static_cast<std::size_t>(py) * aux.width + px;
                const double wgt = pixel_weights.values[pix];
                if (wgt == 0.0) continue;
                const double dc[3] = {wgt * d_image[3 * pix], wgt * d_image[3 * pix + 1], wgt * d_image[3 * pix + 2]};
                body(pix, px, py, dc);
            }
    };

    if (aux.settings.threads <= 1) {
        for (std::size_t t = 0; t < num_tiles; ++t) {
            const auto& entries = aux.tile_entries[t];
            for_tile_pixels(t, [&](std::size_t pix, int px, int py, const double* dc) {
                pixel_backward(aux, entries, pix, px, py, dc, [&](std::uint32_t idx, const EntryGrad& e) {
                    accumulate(g, static_cast<std::size_t>(entries[idx].splat), e);
                });
            });
        }
        return g;
    }

    // Parallel path: per-entry partials first, then a serial reduction in the
    // same (tile, pixel, back-to-front) order as the single-threaded path.
    std::vector<std::vector<EntryGrad>> partials(num_tiles);
    parallel_for(num_tiles, aux.settings.threads, [&](std::size_t t0, std::size_t t1) {
        for (std::size_t t = t0; t < t1; ++t) {
            const auto& entries = aux.tile_entries[t];
            partials[t].assign(entries.size(), EntryGrad{});
            for_tile_pixels(t, [&](std::size_t pix, int px, int py, const double* dc) {
                pixel_backward(aux, entries, pix, px, py, dc,
                               [&](std::uint32_t idx, const EntryGrad& e) { partials[t][idx] = e; });
            });
        }
    });
    for (std::size_t t = 0; t < num_tiles; ++t) {
        const auto& entries = aux.tile_entries[t];
        for_tile_pixels(t, [&](std::size_t pix, int, int, const double*) {
            const std::uint32_t off = aux.pixel_offset[pix], cnt = aux.pixel_count[pix];
            for (std::uint32_t e = cnt; e-- > 0;)
                accumulate(g, static_cast<std::size_t>(entries[off + e].splat), partials[t][off + e]);
        });
    }
    return g;
}

SceneRender render(const GaussianSet& set, const Camera& cam, const Vec3& background,
                   const RenderSettings& settings) {
    SceneRender out;
    out.camera = cam;
    const Vec3 center = cam.center();
    std::vector<Splat2D> splats;
    splats.reserve(set.count());
    for (std::size_t i = 0; i < set.count(); ++i) {
        const ActivatedGaussian g = activate(set, i);
        auto s = project(g, gaussian_color(set, i, view_direction(g.position, center), settings.sh_degree), cam,
                         static_cast<int>(i));
        if (s) {
            splats.push_back(*s);
        } else {
            ++out.culled;
        }
    }
    auto rr = rasterize(std::move(splats), cam, background, settings);
    out.image = std::move(rr.image);
    out.aux = std::move(rr.aux);
    return out;
}

namespace {

/// dR/dq for each quaternion component, contracted with dL/dR.
Vec4 rotation_backward(const Vec4& q, const Mat3& d_r) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 dw, dx, dy, dz;
    dw << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
    dx << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
    dy << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y;
    dz << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0;
    return {d_r.cwiseProduct(dw).sum(), d_r.cwiseProduct(dx).sum(), d_r.cwiseProduct(dy).sum(),
            d_r.cwiseProduct(dz).sum()};
}

}  // namespace

GaussianBackward rasterize_backward(const GaussianSet& set, const SceneRender& rendered,
                                    std::span<const double> d_image, const TransientMask& pixel_weights) {
    const RenderAux& aux = rendered.aux;
    const Camera& cam = rendered.camera;
    const SplatGrads sg = rasterize_backward_2d(aux, d_image, pixel_weights);

    GaussianBackward out;
    const std::size_t n = set.count();
    out.grads = set.zeros_like();
    out.mean2d_grad_norm.assign(n, 0.0);
    out.visible.assign(n, 0);
    out.radius.assign(n, 0.0);
    const int sh_degree = aux.settings.sh_degree;
    const Vec3 cam_center = cam.center();
    const Mat3& W = cam.rotation;

    for (std::size_t k = 0; k < aux.splats.size(); ++k) {
        if (!aux.drawn[k]) continue;
        const auto i = static_cast<std::size_t>(aux.splats[k].source_index);
        out.visible[i] = 1;
        out.radius[i] = aux.radius[k];
        out.mean2d_grad_norm[i] = sg.mean2d[k].norm();

        const ActivatedGaussian g = activate(set, i);
        const Vec3 pc = W * g.position + cam.translation;
        Vec3 d_pos = Vec3::Zero();
        Vec3 d_pc = Vec3::Zero();

        // Color (SH) and its view-direction dependence on position.
        const Vec3 to_gauss = g.position - cam_center;
        const double dist = to_gauss.norm();
        const Vec3 dir = to_gauss / dist;
        const Vec3 raw = gaussian_color(set, i, dir, sh_degree);
        Vec3 d_col = sg.color[k];
        for (int c = 0; c < 3; ++c)
            if (raw[c] < 0) d_col[c] = 0;
        for (int c = 0; c < 3; ++c) out.grads.sh_dc[3 * i + c] = kShC0 * d_col[c];
        if (sh_degree >= 1) {
            const double basis[3] = {-kShC1 * dir.y(), kShC1 * dir.z(), -kShC1 * dir.x()};
            const double* rest = set.sh_rest.data() + 9 * i;
            double d_basis[3] = {0, 0, 0};
            for (int b = 0; b < 3; ++b)
                for (int c = 0; c < 3; ++c) {
                    out.grads.sh_rest[9 * i + 3 * b + c] = basis[b] * d_col[c];
                    d_basis[b] += rest[3 * b + c] * d_col[c];
                }
            const Vec3 d_dir(-kShC1 * d_basis[2], -kShC1 * d_basis[0], kShC1 * d_basis[1]);
            d_pos += (d_dir - dir * dir.dot(d_dir)) / dist;
        }

        out.grads.opacity_logits[i] = sg.opacity[k] * g.opacity * (1.0 - g.opacity);

        // Conic -> 2D covariance -> camera covariance and Jacobian.
        const Mat2& cov2d = aux.splats[k].cov2d;
        const Mat2 conic = cov2d.inverse();
        const Mat2 d_cov2d = -conic * sg.conic[k] * conic;
        const Mat3 sigma = build_covariance(g.scale, g.rotation);
        const Mat3 sigma_cam = W * sigma * W.transpose();
        const auto J = projection_jacobian(pc, cam.fx, cam.fy);
        const Mat3 d_sigma_cam = J.transpose() * d_cov2d * J;
        const Eigen::Matrix<double, 2, 3> d_j = 2.0 * d_cov2d * J * sigma_cam;

        const double iz = 1.0 / pc.z(), iz2 = iz * iz, iz3 = iz2 * iz;
        d_pc.x() += d_j(0, 2) * (-cam.fx * iz2);
        d_pc.y() += d_j(1, 2) * (-cam.fy * iz2);
        d_pc.z() += d_j(0, 0) * (-cam.fx * iz2) + d_j(0, 2) * (2 * cam.fx * pc.x() * iz3) +
                    d_j(1, 1) * (-cam.fy * iz2) + d_j(1, 2) * (2 * cam.fy * pc.y() * iz3);

        // Mean projection.
        const Vec2& dm = sg.mean2d[k];
        d_pc.x() += dm.x() * cam.fx * iz;
        d_pc.y() += dm.y() * cam.fy * iz;
        d_pc.z() += -dm.x() * cam.fx * pc.x() * iz2 - dm.y() * cam.fy * pc.y() * iz2;
        d_pos += W.transpose() * d_pc;
        for (int c = 0; c < 3; ++c) out.grads.positions[3 * i + c] = d_pos[c];

        // Sigma = M M^T, M = R diag(s).
        const Mat3 d_sigma = W.transpose() * d_sigma_cam * W;
        const Mat3 R = quaternion_to_rotation(g.rotation);
        const Mat3 M = R * g.scale.asDiagonal();
        const Mat3 d_m = 2.0 * d_sigma * M;
        for (int c = 0; c < 3; ++c) {
            const double d_s = d_m.col(c).dot(R.col(c));
            out.grads.log_scales[3 * i + c] = d_s * g.scale[c];
        }
        const Mat3 d_r = d_m * g.scale.asDiagonal();
        const Vec4 d_qhat = rotation_backward(g.rotation, d_r);
        const Vec4 raw_q = set.rotation(i);
        const Vec4 d_q = (d_qhat - g.rotation * g.rotation.dot(d_qhat)) / raw_q.norm();
        for (int c = 0; c < 4; ++c) out.grads.rotations[4 * i + c] = d_q[c];
    }
    return out;
}

}  // namespace rsplat
