#include "rsplat/renderer.hpp"
#include "test_helpers.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>

using namespace rsplat;
using rsplat::testing::front_camera;
using rsplat::testing::random_gaussians;

namespace {

Splat2D isotropic_splat(double x, double y, double var, double depth, double opacity, const Vec3& color, int id) {
    Splat2D s;
    s.mean2d = {x, y};
    s.cov2d = Mat2::Identity() * var;
    s.depth = depth;
    s.opacity = opacity;
    s.color = color;
    s.source_index = id;
    return s;
}

/// Independent front-to-back compositor: every splat, every pixel, no tiles.
ImageBuffer naive_composite(std::vector<Splat2D> splats, int w, int h, const Vec3& bg, double alpha_min) {
    std::stable_sort(splats.begin(), splats.end(), [](const Splat2D& a, const Splat2D& b) {
        return a.depth != b.depth ? a.depth < b.depth : a.source_index < b.source_index;
    });
    ImageBuffer img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const Vec2 p(x + 0.5, y + 0.5);
            double T = 1.0;
            Vec3 c = Vec3::Zero();
            for (const auto& s : splats) {
                const Vec2 d = p - s.mean2d;
                const double a = std::min(kAlphaCap, s.opacity * std::exp(-0.5 * d.dot(s.cov2d.inverse() * d)));
                if (a < alpha_min) continue;
                if (T * (1 - a) < kTransmittanceCutoff) break;
                c += a * T * s.color;
                T *= 1 - a;
            }
            c += T * bg;
            for (int k = 0; k < 3; ++k) img.at(x, y, k) = c[k];
        }
    return img;
}

double weighted_loss(const ImageBuffer& img, const std::vector<double>& d) {
    double s = 0;
    for (std::size_t i = 0; i < d.size(); ++i) s += d[i] * img.values[i];
    return s;
}

}  // namespace

TEST(Blending, EmptySceneIsBackground) {
    const Camera cam = front_camera(5, 4, 10);
    const Vec3 bg(0.25, 0.5, 0.75);
    const auto r = rasterize({}, cam, bg);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 5; ++x)
            for (int c = 0; c < 3; ++c) EXPECT_NEAR(r.image.at(x, y, c), bg[c], 1e-12);
}

TEST(Blending, SingleSplatIsCappedAtItsCenter) {
    const Camera cam = front_camera(8, 8, 10);
    const Vec3 bg(0.1, 0.2, 0.3), col(0.9, 0.6, 0.3);
    const auto r = rasterize({isotropic_splat(3.5, 4.5, 2.0, 1.0, 0.999, col, 0)}, cam, bg);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(r.image.at(3, 4, c), 0.99 * col[c] + 0.01 * bg[c], 1e-12);
}

TEST(Blending, TwoHalfAlphaSplatsComposeFrontToBack) {
    const Camera cam = front_camera(8, 8, 10);
    const Vec3 bg(0.2, 0.4, 0.6), near(1.0, 0.0, 0.5), far(0.0, 1.0, 0.25);
    // Inserted back-first to exercise the depth sort.
    const auto r = rasterize({isotropic_splat(2.5, 2.5, 1.0, 5.0, 0.5, far, 1),
                              isotropic_splat(2.5, 2.5, 1.0, 2.0, 0.5, near, 0)},
                             cam, bg);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(r.image.at(2, 2, c), 0.5 * near[c] + 0.25 * far[c] + 0.25 * bg[c], 1e-12);
}

TEST(Blending, TransmittanceCutoffStopsBeforeCrossing) {
    const Camera cam = front_camera(4, 4, 10);
    std::vector<Splat2D> splats;
    for (int i = 0; i < 4; ++i) splats.push_back(isotropic_splat(1.5, 1.5, 1.0, 1.0 + i, 0.98, Vec3(1, 0, 0), i));
    const auto r = rasterize(splats, cam, Vec3::Zero());
    // 0.02^2 = 4e-4 stays above the cutoff; a third splat would reach 8e-6.
    EXPECT_EQ(r.aux.pixel_count[1 * 4 + 1], 2u);
    EXPECT_NEAR(r.aux.final_transmittance[1 * 4 + 1], 0.02 * 0.02, 1e-15);
}

TEST(Blending, SingularCovarianceIsSkipped) {
    const Camera cam = front_camera(4, 4, 10);
    Splat2D s = isotropic_splat(1.5, 1.5, 1.0, 1.0, 0.9, Vec3(1, 1, 1), 0);
    s.cov2d << 1.0, 1.0, 1.0, 1.0;
    const auto r = rasterize({s}, cam, Vec3::Zero());
    EXPECT_EQ(r.aux.skipped_singular, 1u);
    for (double v : r.image.values) EXPECT_EQ(v, 0.0);
}

TEST(Blending, MatchesNaiveCompositor) {
    Rng rng(11);
    for (int t = 0; t < 10; ++t) {
        const int w = 37, h = 29;
        std::vector<Splat2D> splats;
        for (int i = 0; i < 40; ++i) {
            Splat2D s = isotropic_splat(uniform(rng, -5, w + 5), uniform(rng, -5, h + 5), 0, uniform(rng, 1, 3),
                                        uniform(rng, 0.05, 0.99), Vec3(uniform01(rng), uniform01(rng), uniform01(rng)), i);
            const double a = uniform(rng, 0.5, 20), c = uniform(rng, 0.5, 20);
            const double b = uniform(rng, -0.9, 0.9) * std::sqrt(a * c);
            s.cov2d << a, b, b, c;
            splats.push_back(s);
        }
        const Vec3 bg(0.3, 0.1, 0.7);
        for (double amin : {0.0, 1.0 / 255.0}) {
            RenderSettings rs;
            rs.alpha_min = amin;
            const auto r = rasterize(splats, front_camera(w, h, 20), bg, rs);
            const auto ref = naive_composite(splats, w, h, bg, amin);
            for (std::size_t i = 0; i < ref.values.size(); ++i) ASSERT_NEAR(r.image.values[i], ref.values[i], 1e-12);
        }
    }
}

TEST(Tiling, BinnedForwardIsBitwiseEqualToPerPixel) {
    Rng rng(12);
    const GaussianSet g = random_gaussians(60, rng);
    const Camera cam = front_camera(53, 41, 45);
    const Vec3 bg(0.2, 0.3, 0.1);
    RenderSettings per_pixel;
    per_pixel.tile_size = 1;
    RenderSettings whole;
    whole.tile_size = 4096;
    const auto ref = render(g, cam, bg, per_pixel).image;
    for (int ts : {4, 16, 32}) {
        RenderSettings rs;
        rs.tile_size = ts;
        EXPECT_EQ(render(g, cam, bg, rs).image, ref) << "tile size " << ts;
    }
    EXPECT_EQ(render(g, cam, bg, whole).image, ref);
}

TEST(Threads, ForwardAndBackwardAreBitwiseDeterministic) {
    Rng rng(13);
    const GaussianSet g = random_gaussians(50, rng);
    const Camera cam = front_camera(64, 48, 50);
    std::vector<double> d(64 * 48 * 3);
    for (double& v : d) v = uniform(rng, -1, 1);
    const TransientMask w(64, 48, 1.0);
    RenderSettings one;
    const auto r1 = render(g, cam, Vec3::Zero(), one);
    const auto b1 = rasterize_backward(g, r1, d, w);
    for (int threads : {2, 3, 8}) {
        RenderSettings rs;
        rs.threads = threads;
        const auto rn = render(g, cam, Vec3::Zero(), rs);
        EXPECT_EQ(rn.image, r1.image);
        const auto bn = rasterize_backward(g, rn, d, w);
        EXPECT_EQ(bn.grads, b1.grads) << threads << " threads";
        EXPECT_EQ(bn.mean2d_grad_norm, b1.mean2d_grad_norm);
    }
}

TEST(Projection, NearPlaneCullsAndCountsBehindCamera) {
    GaussianSet g;
    g.resize(2);
    g.rotations = {1, 0, 0, 0, 1, 0, 0, 0};
    g.set_position(0, {0, 0, 0.005});
    g.set_position(1, {0, 0, 2});
    const auto r = render(g, front_camera(8, 8, 10), Vec3::Zero());
    EXPECT_EQ(r.culled, 1u);
    EXPECT_FALSE(project(g, 0, front_camera(8, 8, 10), 1).has_value());
    EXPECT_TRUE(project(g, 1, front_camera(8, 8, 10), 1).has_value());
}

TEST(Projection, LowPassFloorIsAddedToTheCovariance) {
    GaussianSet g;
    g.resize(1);
    g.rotations = {1, 0, 0, 0};
    g.set_position(0, {0, 0, 2});
    g.set_log_scale(0, {std::log(0.1), std::log(0.2), std::log(0.3)});
    const auto s = project(g, 0, front_camera(8, 8, 10), 0);
    ASSERT_TRUE(s);
    // J = diag(f/z) on the optical axis.
    EXPECT_NEAR(s->cov2d(0, 0), 25.0 * 0.01 + kLowPassFloor, 1e-12);
    EXPECT_NEAR(s->cov2d(1, 1), 25.0 * 0.04 + kLowPassFloor, 1e-12);
    EXPECT_NEAR(s->mean2d.x(), 4.0, 1e-15);
}

TEST(Resolution, ScaledCameraProjectsToScaledPixelCoordinates) {
    Rng rng(14);
    const GaussianSet g = random_gaussians(10, rng);
    const Camera cam = front_camera(64, 64, 60);
    const Camera half = cam.scaled(0.5);
    for (std::size_t i = 0; i < g.count(); ++i) {
        const auto a = project(g, i, cam, 1), b = project(g, i, half, 1);
        ASSERT_TRUE(a && b);
        EXPECT_NEAR(b->mean2d.x(), 0.5 * a->mean2d.x(), 1e-12);
        EXPECT_NEAR(b->mean2d.y(), 0.5 * a->mean2d.y(), 1e-12);
        EXPECT_EQ(b->depth, a->depth);
    }
}

TEST(Resolution, LowResRenderApproximatesAreaDownsample) {
    Rng rng(15);
    GaussianSet g = random_gaussians(10, rng);
    for (double& s : g.log_scales) s += std::log(2.0);  // smooth content
    const Camera cam = front_camera(64, 64, 60);
    const auto full = render(g, cam, Vec3::Zero()).image;
    const auto low = render(g, cam.scaled(0.5), Vec3::Zero()).image;
    const auto ds = downsample_area(full, 2);
    ASSERT_EQ(low.width, ds.width);
    double err = 0;
    for (std::size_t i = 0; i < ds.values.size(); ++i) err = std::max(err, std::abs(low.values[i] - ds.values[i]));
    EXPECT_LT(err, 0.05);
}

TEST(Backward, ZeroWeightPixelsContributeNothing) {
    Rng rng(16);
    const GaussianSet g = random_gaussians(8, rng);
    const Camera cam = front_camera(16, 16, 14);
    const auto r = render(g, cam, Vec3::Zero());
    std::vector<double> d(16 * 16 * 3);
    for (double& v : d) v = uniform(rng, -1, 1);
    const auto none = rasterize_backward(g, r, d, TransientMask(16, 16, 0.0));
    for (double v : none.grads.positions) EXPECT_EQ(v, 0.0);
    for (double v : none.grads.opacity_logits) EXPECT_EQ(v, 0.0);
    for (double v : none.grads.sh_dc) EXPECT_EQ(v, 0.0);

    // Weighting pixels equals scaling their upstream gradient.
    TransientMask half(16, 16, 1.0);
    std::vector<double> d_scaled = d;
    for (int p = 0; p < 128; ++p) {
        half.values[p] = 0.0;
        for (int c = 0; c < 3; ++c) d_scaled[3 * p + c] = 0.0;
    }
    EXPECT_EQ(rasterize_backward(g, r, d, half).grads, rasterize_backward(g, r, d_scaled, TransientMask(16, 16, 1.0)).grads);
}

TEST(Backward, RejectsMismatchedShapes) {
    Rng rng(17);
    const GaussianSet g = random_gaussians(3, rng);
    const auto r = render(g, front_camera(16, 16, 14), Vec3::Zero());
    EXPECT_THROW(rasterize_backward(g, r, std::vector<double>(10), TransientMask(16, 16)), ShapeError);
    EXPECT_THROW(rasterize_backward(g, r, std::vector<double>(768), TransientMask(8, 16)), ShapeError);
}

// Every analytic gradient against central differences, on 20+ small scenes.
TEST(GradientOracle, MatchesCentralDifferencesOnRandomScenes) {
    const auto start = std::chrono::steady_clock::now();
    constexpr double kStep = 1e-5;
    constexpr int kScenes = 24;
    Rng rng(2024);
    double worst = 0;
    std::size_t checked = 0;
    for (int scene = 0; scene < kScenes; ++scene) {
        const std::size_t n = 1 + uniform_index(rng, 10);
        GaussianSet g = random_gaussians(n, rng);
        const Camera cam = front_camera(16, 16, uniform(rng, 12, 20));
        const Vec3 bg(uniform01(rng), uniform01(rng), uniform01(rng));
        RenderSettings rs;
        rs.alpha_min = 0.0;
        std::vector<double> d(16 * 16 * 3);
        for (double& v : d) v = uniform(rng, -1, 1);

        const auto base = render(g, cam, bg, rs);
        const auto back = rasterize_backward(g, base, d, TransientMask(16, 16, 1.0));
        GaussianSet analytic = back.grads;

        std::vector<std::vector<double>*> params;
        std::vector<const std::vector<double>*> grads;
        g.for_each_group([&](const char*, std::vector<double>& v, std::size_t) { params.push_back(&v); });
        analytic.for_each_group([&](const char*, const std::vector<double>& v, std::size_t) { grads.push_back(&v); });
        for (std::size_t gi = 0; gi < params.size(); ++gi) {
            for (std::size_t j = 0; j < params[gi]->size(); ++j) {
                double& x = (*params[gi])[j];
                const double x0 = x;
                x = x0 + kStep;
                const double lp = weighted_loss(render(g, cam, bg, rs).image, d);
                x = x0 - kStep;
                const double lm = weighted_loss(render(g, cam, bg, rs).image, d);
                x = x0;
                const double numeric = (lp - lm) / (2 * kStep);
                const double a = (*grads[gi])[j];
                const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
                const double rel = std::abs(a - numeric) / denom;
                worst = std::max(worst, rel);
                ++checked;
                EXPECT_LT(rel, 1e-4) << "scene " << scene << " group " << gi << " index " << j << " analytic " << a
                                     << " numeric " << numeric;
            }
        }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    RecordProperty("worst_relative_error", std::to_string(worst));
    EXPECT_GT(checked, 1000u);
    EXPECT_LT(secs, 60.0);
}
