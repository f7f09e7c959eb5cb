#pragma once

#include "rsplat/config.hpp"
#include "rsplat/core.hpp"
#include "rsplat/random.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace rsplat {

/// Per-Gaussian statistics gathered between densify events.
struct DensifyStats {
    std::vector<double> grad_sum;      // sum of screen-space positional gradient norms
    std::vector<double> count;         // number of views the Gaussian was visible in
    std::vector<double> max_radius;    // largest projected radius (px)
    std::vector<double> pos_grad_sum;  // 3 per Gaussian: summed world-space position gradient

    explicit DensifyStats(std::size_t n = 0) { reset(n); }
    void reset(std::size_t n);
    [[nodiscard]] std::size_t size() const { return grad_sum.size(); }

    friend bool operator==(const DensifyStats&, const DensifyStats&) = default;
};

/// Adds one view's statistics for visible Gaussians. `position_grads` may be
/// empty. Throws ShapeError on size mismatch.
void accumulate_stats(DensifyStats& stats, std::span<const double> grad_norms, std::span<const std::uint8_t> visible,
                      std::span<const double> radii = {}, std::span<const double> position_grads = {});

struct GrowthSchedule {
    int densify_start_iter = 0;
    int densify_interval = 100;
    int densify_end_iter = 0;
    int prune_start_iter = 0;
    int opacity_reset_start_iter = 0;
    int opacity_reset_interval = 1;
    int opacity_reset_end_iter = 0;

    /// Schedule as configured (delayed growth).
    static GrowthSchedule from_config(const TrainConfig& cfg);
    /// Vanilla timing: growth, pruning and opacity resets start at their
    /// reference-codebase iterations under the config's schedule scale.
    static GrowthSchedule vanilla(const TrainConfig& cfg);
    /// No structural change ever.
    static GrowthSchedule disabled();

    [[nodiscard]] bool is_densify_tick(int i) const;
    [[nodiscard]] bool is_reset_tick(int i) const;

    void validate() const;
};

struct DensifyParams {
    double grad_threshold = 2e-4;
    double percent_dense = 0.01;
    double min_opacity = 0.005;
    double scene_extent = 1.0;
    /// Longest image edge (px); Gaussians projecting wider than 0.8x this are pruned.
    int image_edge = 0;
    double clone_step = 0.01;  // fraction of the scene extent

    static DensifyParams from_config(const TrainConfig& cfg, double scene_extent, int image_edge);
};

struct DensifyReport {
    int iteration = 0;
    bool ran = false;
    std::size_t count_before = 0, count_after = 0;
    std::size_t cloned = 0, split = 0, pruned = 0;
    std::size_t degenerate = 0;  // over-threshold Gaussians with no gradient direction
    /// For each output Gaussian, its index in the input set if it was carried
    /// over unchanged, else -1 (new clone or split child).
    std::vector<std::int64_t> origin;
};

/// Clone/split/prune at densify ticks. Resets `stats` after an event.
DensifyReport densify_and_prune(GaussianSet& gaussians, DensifyStats& stats, int iteration,
                                const GrowthSchedule& sched, const DensifyParams& params, Rng& rng);

/// Clamps every opacity down to `cap` at reset ticks. Returns true if applied.
bool opacity_reset(GaussianSet& gaussians, int iteration, const GrowthSchedule& sched, double cap);

}  // namespace rsplat
