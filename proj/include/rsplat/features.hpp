#pragma once

#include "rsplat/config.hpp"
#include "rsplat/core.hpp"

#include <filesystem>
#include <vector>

namespace rsplat {

enum class FeatureLevel { low, high };
enum class FeatureSource { builtin, external };

const char* to_string(FeatureLevel level);

/// Patch-feature grid, row-major, channel-fastest.
struct FeatureMap {
    int grid_h = 0, grid_w = 0, dim = 0;
    std::vector<double> values;
    FeatureLevel level = FeatureLevel::high;
    FeatureSource source = FeatureSource::builtin;

    [[nodiscard]] std::size_t cells() const { return static_cast<std::size_t>(grid_h) * grid_w; }
    [[nodiscard]] const double* cell(std::size_t i) const { return values.data() + i * dim; }
    double* cell(std::size_t i) { return values.data() + i * dim; }
};

/// Feature-similarity target in [0, 1] on the patch grid.
struct CosineMap {
    int grid_h = 0, grid_w = 0;
    std::vector<double> values;
    /// Patches where either feature vector had zero norm.
    std::size_t zero_norm_patches = 0;
};

/// Channels of the built-in extractor: mean RGB, std RGB, mean |dx lum|,
/// mean |dy lum|, 8-bin luminance histogram.
inline constexpr int kBuiltinFeatureDim = 16;

/// Square edge (px) of the resampled image a level extracts from.
int level_edge(FeatureLevel level, const TrainConfig& cfg);

/// Built-in patch features at `level`: resample to the level's square edge,
/// then describe each patch_size x patch_size patch.
/// Throws ShapeError when the image or level edge holds less than one patch.
FeatureMap extract_features(const ImageBuffer& img, FeatureLevel level, const TrainConfig& cfg);

/// Per patch, max(2 cos(f_gt, f_render) - 1, 0). Zero-norm patches map to 0.
CosineMap cosine_mask(const FeatureMap& f_gt, const FeatureMap& f_render);

/// FMAP file: "FMAP", u32 version (1), u32 grid_h, grid_w, dim, then float32
/// values; all little-endian.
void write_feature_map(const FeatureMap& fmap, const std::filesystem::path& path);
FeatureMap load_feature_map(const std::filesystem::path& path);

}  // namespace rsplat
