#pragma once

#include "rsplat/core.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace rsplat {

/// Gaussians whose camera-frame depth is at or below this are culled.
inline constexpr double kNearPlane = 0.01;
/// Isotropic screen-space variance added to every projected covariance (px^2).
inline constexpr double kLowPassFloor = 0.3;
inline constexpr double kAlphaCap = 0.99;
/// Blending stops before a splat would push transmittance below this.
inline constexpr double kTransmittanceCutoff = 1e-4;
inline constexpr double kMinCovDeterminant = 1e-12;

struct RenderSettings {
    /// Per-pixel alphas below this are skipped; also sets the screen-space
    /// footprint used for tile binning. 0 renders every splat at every pixel.
    double alpha_min = 1.0 / 255.0;
    int sh_degree = 1;
    int threads = 1;
    int tile_size = 16;
};

/// Screen-space footprint of one Gaussian.
struct Splat2D {
    Vec2 mean2d;
    Mat2 cov2d;
    double depth = 0;
    Vec3 color = Vec3::Zero();
    double opacity = 0;
    int source_index = -1;
};

/// Projects an activated Gaussian with a precomputed color. Returns nullopt
/// when the center lies at or in front of the near plane.
std::optional<Splat2D> project(const ActivatedGaussian& g, const Vec3& color, const Camera& cam,
                               int source_index);

/// Projects Gaussian `i` of `set`, evaluating its color along the ray from the
/// camera center to the Gaussian center.
std::optional<Splat2D> project(const GaussianSet& set, std::size_t i, const Camera& cam, int sh_degree);

/// Stable ascending-depth permutation; equal depths ordered by source_index.
std::vector<std::size_t> depth_sort(std::span<const Splat2D> splats);

/// Replay data of a forward pass: every (pixel, splat) pair that contributed,
/// with the alpha it blended at and the transmittance in front of it.
struct RenderAux {
    struct Entry {
        std::int32_t splat;  // index into `splats`
        double alpha;
        double transmittance;
    };
    struct Packed {
        double ux, uy;
        double qa, qb, qc;  // conic (inverse covariance)
        double opacity;
        double r, g, b;
        // Exponents below this give alpha < alpha_min with margin to spare.
        double min_power;
        int x0, x1, y0, y1;  // pixel box that can reach alpha_min
    };

    int width = 0, height = 0;
    Vec3 background = Vec3::Zero();
    RenderSettings settings;
    std::vector<Splat2D> splats;
    std::vector<Packed> packed;          // parallel to `splats`
    std::vector<std::uint8_t> drawn;     // splat touched at least one tile
    std::vector<double> radius;          // 3-sigma screen radius (px), 0 if skipped
    int tiles_x = 0, tiles_y = 0;
    std::vector<std::vector<Entry>> tile_entries;
    std::vector<std::uint32_t> pixel_offset;  // into the pixel's tile entry list
    std::vector<std::uint32_t> pixel_count;
    std::vector<double> final_transmittance;
    std::size_t skipped_singular = 0;
};

struct RenderResult {
    ImageBuffer image;  // unclamped blend result
    RenderAux aux;
};

/// Alpha-blends `splats` front to back over `background`.
RenderResult rasterize(std::vector<Splat2D> splats, const Camera& cam, const Vec3& background,
                       const RenderSettings& settings = {});

/// Gradients w.r.t. the screen-space splat parameters.
struct SplatGrads {
    std::vector<Vec2> mean2d;
    std::vector<Mat2> conic;  // symmetric matrix-form gradient
    std::vector<double> opacity;
    std::vector<Vec3> color;
};

/// Reverse pass of `rasterize` for the loss sum_p w(p) <d_image(p), C(p)>.
/// Pixels with weight 0 are skipped and contribute exactly nothing.
SplatGrads rasterize_backward_2d(const RenderAux& aux, std::span<const double> d_image,
                                 const TransientMask& pixel_weights);

/// Full scene rendering: per-Gaussian projection followed by rasterization.
struct SceneRender {
    ImageBuffer image;
    RenderAux aux;
    Camera camera;
    std::size_t culled = 0;  // behind the near plane
};

SceneRender render(const GaussianSet& set, const Camera& cam, const Vec3& background,
                   const RenderSettings& settings = {});

struct GaussianBackward {
    GaussianGrads grads;
    /// ||dL/d mean2d|| in pixels, per Gaussian (0 for Gaussians not drawn).
    std::vector<double> mean2d_grad_norm;
    std::vector<std::uint8_t> visible;
    std::vector<double> radius;
};

/// Gradients of the weighted image loss w.r.t. every Gaussian parameter.
/// Throws ShapeError when `d_image` or `pixel_weights` disagree with `rendered`.
GaussianBackward rasterize_backward(const GaussianSet& set, const SceneRender& rendered,
                                    std::span<const double> d_image, const TransientMask& pixel_weights);

}  // namespace rsplat
