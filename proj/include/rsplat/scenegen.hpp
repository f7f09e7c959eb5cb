#pragma once

#include "rsplat/core.hpp"
#include "rsplat/renderer.hpp"

#include <cstdint>
#include <vector>

namespace rsplat {

/// Knobs of the synthetic capture. Defaults give a 32-view 128x128 ring.
struct SceneParams {
    int num_static = 900;
    double box_half_extent = 1.0;
    int train_views = 32;
    int test_views = 8;
    int width = 128, height = 128;
    double fov_deg = 60.0;
    double ring_radius = 2.3;
    double camera_height = 1.3;
    double height_jitter = 0.35;
    Vec3 background = Vec3::Zero();

    /// Target mean fraction of training-view pixels altered by distractors.
    double occlusion = 0.2;
    double occlusion_tolerance = 0.05;
    int min_blob_gaussians = 5, max_blob_gaussians = 20;
    int max_blobs_per_view = 2;
    /// Consecutive ring views a distractor stays in view, drifting by
    /// track_drift (times the box half extent) per view.
    int track_length = 3;
    double track_drift = 0.08;
    /// Fraction of consecutive training views sharing one world-fixed
    /// distractor (0 disables).
    double persistent_fraction = 0.0;

    /// Fraction of static centers used as the initial point set.
    double init_fraction = 0.8;
    /// Fraction of training views whose distractor centers leak into the
    /// initial point set (0 disables).
    double contaminate_fraction = 0.0;

    void validate() const;
};

struct InitPoint {
    Vec3 position;
    Vec3 color;
};

struct SyntheticScene {
    std::uint64_t seed = 0;
    SceneParams params;
    GaussianSet statics;
    std::vector<Camera> train_cameras, test_cameras;
    /// Distractor Gaussians per training view.
    std::vector<GaussianSet> distractors;
    std::vector<InitPoint> init_points;
};

/// One training capture.
struct TrainView {
    int camera_id = 0;
    Camera camera;
    ImageBuffer image;
    TransientMask gt_mask;  // 1 = static
};

struct TestView {
    int camera_id = 0;
    Camera camera;
    ImageBuffer image;
};

struct DatasetBundle {
    std::vector<TrainView> train;
    std::vector<TestView> test;
    std::vector<InitPoint> points;
    Vec3 background = Vec3::Zero();

    /// Radius of the camera centers around their centroid, times 1.1.
    [[nodiscard]] double scene_extent() const;
    /// Mean fraction of training pixels flagged transient by the GT masks.
    [[nodiscard]] double measured_occlusion() const;
};

/// Pixel difference (any channel) above which a pixel counts as transient.
inline constexpr double kTransientDiffThreshold = 2.0 / 255.0;

/// GT mask by diffing a distracted render against the clean one.
TransientMask diff_mask(const ImageBuffer& clean, const ImageBuffer& distracted);

/// Deterministic scene for `seed`. Distractor sizes are searched per view so
/// that the measured occlusion lands within tolerance of the target; throws
/// ConfigError on invalid params or if the target cannot be met.
SyntheticScene generate_scene(std::uint64_t seed, const SceneParams& params);

/// Renders training (distracted + GT mask) and clean test views.
DatasetBundle render_dataset(const SyntheticScene& scene, const RenderSettings& settings = {});

}  // namespace rsplat
