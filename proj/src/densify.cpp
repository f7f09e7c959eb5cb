#include "rsplat/densify.hpp"

#include <algorithm>
#include <cmath>

namespace rsplat {

void DensifyStats::reset(std::size_t n) {
    grad_sum.assign(n, 0.0);
    count.assign(n, 0.0);
    max_radius.assign(n, 0.0);
    pos_grad_sum.assign(3 * n, 0.0);
}

void accumulate_stats(DensifyStats& stats, std::span<const double> grad_norms, std::span<const std::uint8_t> visible,
                      std::span<const double> radii, std::span<const double> position_grads) {
    const std::size_t n = stats.size();
    if (grad_norms.size() != n || visible.size() != n) throw ShapeError("accumulate_stats: size mismatch");
    if (!radii.empty() && radii.size() != n) throw ShapeError("accumulate_stats: radii size mismatch");
    if (!position_grads.empty() && position_grads.size() != 3 * n)
        throw ShapeError("accumulate_stats: position gradient size mismatch");
    for (std::size_t i = 0; i < n; ++i) {
        if (!visible[i]) continue;
        stats.grad_sum[i] += grad_norms[i];
        stats.count[i] += 1.0;
        if (!radii.empty()) stats.max_radius[i] = std::max(stats.max_radius[i], radii[i]);
        if (!position_grads.empty())
            for (int c = 0; c < 3; ++c) stats.pos_grad_sum[3 * i + c] += position_grads[3 * i + c];
    }
}

GrowthSchedule GrowthSchedule::from_config(const TrainConfig& cfg) {
    GrowthSchedule s;
    s.densify_start_iter = cfg.densify_start_iter;
    s.densify_interval = cfg.densify_interval;
    s.densify_end_iter = cfg.densify_end_iter;
    s.prune_start_iter = cfg.prune_start_iter;
    s.opacity_reset_start_iter = cfg.opacity_reset_start_iter;
    s.opacity_reset_interval = cfg.opacity_reset_interval;
    s.opacity_reset_end_iter = cfg.densify_end_iter;
    return s;
}

GrowthSchedule GrowthSchedule::vanilla(const TrainConfig& cfg) {
    GrowthSchedule s = from_config(cfg);
    s.densify_start_iter = cfg.vanilla_densify_start();
    s.prune_start_iter = s.densify_start_iter;
    s.opacity_reset_start_iter = cfg.vanilla_opacity_reset_start();
    return s;
}

GrowthSchedule GrowthSchedule::disabled() {
    GrowthSchedule s;
    s.densify_start_iter = 1;
    s.densify_end_iter = 0;
    s.opacity_reset_start_iter = 1;
    s.opacity_reset_end_iter = 0;
    return s;
}

bool GrowthSchedule::is_densify_tick(int i) const {
    return i >= densify_start_iter && i <= densify_end_iter && i > 0 && i % densify_interval == 0;
}

bool GrowthSchedule::is_reset_tick(int i) const {
    return i >= opacity_reset_start_iter && i <= opacity_reset_end_iter && i > 0 && i % opacity_reset_interval == 0;
}

void GrowthSchedule::validate() const {
    if (densify_interval <= 0 || opacity_reset_interval <= 0) throw ConfigError("schedule intervals must be > 0");
}

DensifyParams DensifyParams::from_config(const TrainConfig& cfg, double scene_extent, int image_edge) {
    DensifyParams p;
    p.grad_threshold = cfg.grad_threshold;
    p.percent_dense = cfg.percent_dense;
    p.min_opacity = cfg.min_opacity;
    p.scene_extent = scene_extent;
    p.image_edge = image_edge;
    return p;
}

DensifyReport densify_and_prune(GaussianSet& g, DensifyStats& stats, int iteration, const GrowthSchedule& sched,
                                const DensifyParams& params, Rng& rng) {
    DensifyReport rep;
    rep.iteration = iteration;
    rep.count_before = g.count();
    rep.count_after = g.count();
    if (!sched.is_densify_tick(iteration)) {
        rep.origin.resize(g.count());
        for (std::size_t i = 0; i < g.count(); ++i) rep.origin[i] = static_cast<std::int64_t>(i);
        return rep;
    }
    if (stats.size() != g.count()) throw ShapeError("densify_and_prune: stats do not match the Gaussian count");
    rep.ran = true;

    const std::size_t n = g.count();
    const double split_scale = params.percent_dense * params.scene_extent;
    std::vector<std::uint8_t> remove(n, 0);
    GaussianSet clones, children;

    for (std::size_t i = 0; i < n; ++i) {
        if (stats.count[i] <= 0) continue;
        const double mean_grad = stats.grad_sum[i] / stats.count[i];
        if (!(mean_grad >= params.grad_threshold)) continue;
        const Vec3 scale = g.log_scale(i).array().exp();
        if (scale.maxCoeff() <= split_scale) {
            clones.append_from(g, i);
            const std::size_t c = clones.count() - 1;
            const Vec3 dir(stats.pos_grad_sum[3 * i], stats.pos_grad_sum[3 * i + 1], stats.pos_grad_sum[3 * i + 2]);
            const double norm = dir.norm();
            if (norm > 0 && std::isfinite(norm)) {
                clones.set_position(c, g.position(i) - params.clone_step * params.scene_extent * dir / norm);
            } else {
                ++rep.degenerate;
            }
            ++rep.cloned;
        } else {
            const Vec4 q = g.rotation(i);
            const Mat3 r = quaternion_to_rotation(q / q.norm());
            for (int child = 0; child < 2; ++child) {
                children.append_from(g, i);
                const std::size_t c = children.count() - 1;
                const Vec3 z(normal(rng), normal(rng), normal(rng));
                children.set_position(c, g.position(i) + r * scale.cwiseProduct(z));
                children.set_log_scale(c, (scale / 1.6).array().log());
            }
            remove[i] = 1;
            ++rep.split;
        }
    }

    const bool prune = iteration >= sched.prune_start_iter;
    GaussianSet out;
    out.reserve(n + clones.count() + children.count());
    auto prune_reason = [&](const GaussianSet& set, std::size_t i, double radius) {
        if (!prune) return false;
        if (sigmoid(set.opacity_logits[i]) < params.min_opacity) return true;
        return params.image_edge > 0 && radius > 0.8 * params.image_edge;
    };
    for (std::size_t i = 0; i < n; ++i) {
        if (remove[i]) continue;
        if (prune_reason(g, i, stats.max_radius[i])) {
            ++rep.pruned;
            continue;
        }
        out.append_from(g, i);
        rep.origin.push_back(static_cast<std::int64_t>(i));
    }
    for (const GaussianSet* added : {&clones, &children}) {
        for (std::size_t i = 0; i < added->count(); ++i) {
            if (prune_reason(*added, i, 0.0)) {
                ++rep.pruned;
                continue;
            }
            out.append_from(*added, i);
            rep.origin.push_back(-1);
        }
    }
    g = std::move(out);
    rep.count_after = g.count();
    stats.reset(g.count());
    return rep;
}

bool opacity_reset(GaussianSet& g, int iteration, const GrowthSchedule& sched, double cap) {
    if (!sched.is_reset_tick(iteration)) return false;
    const double cap_logit = logit(cap);
    for (double& l : g.opacity_logits) l = std::min(l, cap_logit);
    return true;
}

}  // namespace rsplat
