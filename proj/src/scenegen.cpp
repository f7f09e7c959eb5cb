#include "rsplat/scenegen.hpp"

#include "rsplat/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace rsplat {

void SceneParams::validate() const {
    if (train_views < 8) throw ConfigError("scene needs at least 8 training cameras");
    if (test_views < 1) throw ConfigError("scene needs at least 1 test camera");
    if (num_static < 50) throw ConfigError("scene needs at least 50 static Gaussians");
    if (width < 16 || height < 16) throw ConfigError("image size must be at least 16x16");
    if (!(occlusion >= 0 && occlusion <= 1)) throw ConfigError("occlusion must lie in [0, 1]");
    if (!(occlusion <= 0.6)) throw ConfigError("occlusion above 0.6 is not supported");
    if (!(init_fraction > 0 && init_fraction <= 1)) throw ConfigError("init_fraction must lie in (0, 1]");
    if (!(persistent_fraction >= 0 && persistent_fraction <= 1)) throw ConfigError("persistent_fraction must lie in [0, 1]");
    if (!(contaminate_fraction >= 0 && contaminate_fraction <= 1))
        throw ConfigError("contaminate_fraction must lie in [0, 1]");
    if (min_blob_gaussians < 1 || max_blob_gaussians < min_blob_gaussians) throw ConfigError("invalid blob size range");
    if (max_blobs_per_view < 1) throw ConfigError("max_blobs_per_view must be >= 1");
    if (track_length < 1) throw ConfigError("track_length must be >= 1");
    if (!(track_drift >= 0)) throw ConfigError("track_drift must be >= 0");
    if (!(fov_deg > 1 && fov_deg < 170)) throw ConfigError("fov_deg out of range");
}

double DatasetBundle::scene_extent() const {
    std::vector<Vec3> centers;
    for (const auto& v : train) centers.push_back(v.camera.center());
    for (const auto& v : test) centers.push_back(v.camera.center());
    if (centers.empty()) return 1.0;
    Vec3 mean = Vec3::Zero();
    for (const auto& c : centers) mean += c;
    mean /= static_cast<double>(centers.size());
    double r = 0;
    for (const auto& c : centers) r = std::max(r, (c - mean).norm());
    return 1.1 * std::max(r, 1e-6);
}

double DatasetBundle::measured_occlusion() const {
    if (train.empty()) return 0.0;
    double s = 0;
    for (const auto& v : train) s += 1.0 - v.gt_mask.mean();
    return s / static_cast<double>(train.size());
}

TransientMask diff_mask(const ImageBuffer& clean, const ImageBuffer& distracted) {
    if (clean.width != distracted.width || clean.height != distracted.height) throw ShapeError("diff_mask: shapes differ");
    TransientMask m(clean.width, clean.height, 1.0);
    for (std::size_t p = 0; p < clean.pixels(); ++p)
        for (int c = 0; c < 3; ++c)
            if (std::abs(clean.values[3 * p + c] - distracted.values[3 * p + c]) > kTransientDiffThreshold) {
                m.values[p] = 0.0;
                break;
            }
    return m;
}

namespace {

void push_gaussian(GaussianSet& g, const Vec3& pos, const Vec3& scale, const Vec4& quat, double opacity,
                   const Vec3& rgb) {
    const std::size_t i = g.count();
    g.resize(i + 1);
    g.set_position(i, pos);
    g.set_log_scale(i, scale.array().log());
    for (int c = 0; c < 4; ++c) g.rotations[4 * i + c] = quat[c];
    g.opacity_logits[i] = logit(opacity);
    const auto dc = rgb_to_sh_dc(rgb);
    for (int c = 0; c < 3; ++c) g.sh_dc[3 * i + c] = dc[c];
}

/// Quaternion rotating +z onto unit vector `n`.
Vec4 align_z_to(const Vec3& n) {
    const Eigen::Quaterniond q = Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), n);
    return {q.w(), q.x(), q.y(), q.z()};
}

Vec4 random_quaternion(Rng& rng) {
    Vec4 q(normal(rng), normal(rng), normal(rng), normal(rng));
    return q / q.norm();
}

Vec3 hsv_to_rgb(double h, double s, double v) {
    h = std::fmod(h, 1.0) * 6.0;
    const int i = static_cast<int>(std::floor(h)) % 6;
    const double f = h - std::floor(h);
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (i) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

/// Muted earth/green/blue tones with position-dependent texture.
Vec3 static_color(const Vec3& base_hsv, const Vec3& p, double freq, double phase) {
    const double tex = 0.5 + 0.5 * std::sin(freq * p.x() + phase) * std::cos(freq * p.y() - 0.7 * phase) *
                                 std::cos(0.5 * freq * p.z() + phase);
    const double v = std::clamp(base_hsv.z() * (0.55 + 0.6 * tex), 0.05, 0.85);
    return hsv_to_rgb(base_hsv.x() + 0.04 * (tex - 0.5), base_hsv.y(), v);
}

GaussianSet build_statics(const SceneParams& prm, Rng& rng) {
    GaussianSet g;
    const double e = prm.box_half_extent;
    const double floor_z = -0.6 * e;
    const int n_floor = prm.num_static * 45 / 100;
    const int n_objects = prm.num_static - n_floor;

    // Textured floor slab.
    const Vec3 floor_hsv(uniform(rng, 0.08, 0.16), 0.35, 0.7);
    const double floor_freq = uniform(rng, 5.0, 8.0), floor_phase = uniform(rng, 0.0, 6.28);
    const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_floor))));
    const double cell = 2.0 * e / side;
    for (int k = 0; k < n_floor; ++k) {
        const int ix = k % side, iy = k / side;
        const Vec3 pos(-e + (ix + 0.5) * cell + uniform(rng, -0.2, 0.2) * cell,
                       -e + (iy + 0.5) * cell + uniform(rng, -0.2, 0.2) * cell, floor_z + uniform(rng, -0.01, 0.01));
        const Vec3 scale(cell * uniform(rng, 0.45, 0.6), cell * uniform(rng, 0.45, 0.6), 0.01 * e);
        const double yaw = uniform(rng, 0, std::numbers::pi);
        const Vec4 q(std::cos(yaw / 2), 0, 0, std::sin(yaw / 2));
        push_gaussian(g, pos, scale, q, uniform(rng, 0.85, 0.97), static_color(floor_hsv, pos, floor_freq, floor_phase));
    }

    // Objects: ellipsoid shells resting on the floor.
    const int num_objects = 4;
    const double palette_hues[4] = {0.30, 0.55, 0.62, 0.40};  // greens and blues
    int remaining = n_objects;
    for (int o = 0; o < num_objects; ++o) {
        const int count = o == num_objects - 1 ? remaining : n_objects / num_objects;
        remaining -= count;
        const Vec3 radii(uniform(rng, 0.18, 0.32) * e, uniform(rng, 0.18, 0.32) * e, uniform(rng, 0.2, 0.45) * e);
        const double ang = 2 * std::numbers::pi * (o + uniform(rng, -0.2, 0.2)) / num_objects;
        const double dist = uniform(rng, 0.3, 0.6) * e;
        const Vec3 center(dist * std::cos(ang), dist * std::sin(ang), floor_z + radii.z());
        const Vec3 hsv(palette_hues[o] + uniform(rng, -0.04, 0.04), uniform(rng, 0.3, 0.5), uniform(rng, 0.55, 0.8));
        const double freq = uniform(rng, 8.0, 14.0), phase = uniform(rng, 0.0, 6.28);
        const double area = 4 * std::numbers::pi * std::pow(radii.x() * radii.y() * radii.z(), 2.0 / 3.0);
        const double patch = std::sqrt(area / count);
        for (int k = 0; k < count; ++k) {
            // Fibonacci sphere for even coverage.
            const double t = (k + 0.5) / count;
            const double zc = 1 - 2 * t;
            const double rxy = std::sqrt(std::max(0.0, 1 - zc * zc));
            const double phi = k * std::numbers::pi * (3 - std::sqrt(5.0));
            const Vec3 unit(rxy * std::cos(phi), rxy * std::sin(phi), zc);
            Vec3 pos = center + unit.cwiseProduct(radii);
            pos.z() = std::max(pos.z(), floor_z + 0.01);
            const Vec3 normal_dir = unit.cwiseQuotient(radii).normalized();
            const Vec3 scale(patch * uniform(rng, 0.45, 0.6), patch * uniform(rng, 0.45, 0.6), 0.01 * e);
            push_gaussian(g, pos, scale, align_z_to(normal_dir), uniform(rng, 0.85, 0.97),
                          static_color(hsv, pos, freq, phase));
        }
    }
    for (std::size_t i = 0; i < g.count(); ++i) {
        Vec3 p = g.position(i);
        for (int c = 0; c < 3; ++c) p[c] = std::clamp(p[c], -e, e);
        g.set_position(i, p);
    }
    return g;
}

Camera ring_camera(const SceneParams& prm, double angle, double height) {
    const Vec3 eye(prm.ring_radius * std::cos(angle), prm.ring_radius * std::sin(angle), height);
    const double f = 0.5 * prm.width / std::tan(0.5 * prm.fov_deg * std::numbers::pi / 180.0);
    return Camera::look_at(eye, Vec3(0, 0, -0.35 * prm.box_half_extent), Vec3::UnitZ(), f, f, prm.width, prm.height);
}

/// Saturated hues far from the static palette (magenta, orange, yellow, red).
Vec3 distractor_color(Rng& rng) {
    const double hues[4] = {0.83, 0.07, 0.15, 0.97};
    const double h = hues[uniform_index(rng, 4)] + uniform(rng, -0.02, 0.02);
    return hsv_to_rgb(h, uniform(rng, 0.85, 1.0), uniform(rng, 0.85, 1.0));
}

/// A blob template in unit size; `size` scales offsets and scales.
struct Blob {
    Vec3 center;
    std::vector<Vec3> offsets, scales;
    std::vector<Vec4> quats;
    std::vector<Vec3> colors;
};

Blob random_blob(const Camera& cam, const SceneParams& prm, Rng& rng) {
    Blob b;
    // Random ray through the central 70% of the image, 70-95% of the way to the target.
    const double u = uniform(rng, 0.15, 0.85) * prm.width, v = uniform(rng, 0.15, 0.85) * prm.height;
    const Vec3 ray_cam((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
    const Vec3 ray = (cam.rotation.transpose() * ray_cam).normalized();
    const double dist_to_target = cam.center().norm();
    b.center = cam.center() + uniform(rng, 0.7, 0.95) * dist_to_target * ray;
    const int k = prm.min_blob_gaussians +
                  static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(prm.max_blob_gaussians - prm.min_blob_gaussians + 1)));
    const Vec3 base = distractor_color(rng);
    for (int i = 0; i < k; ++i) {
        b.offsets.emplace_back(normal(rng) * 0.6, normal(rng) * 0.6, normal(rng) * 0.9);
        b.scales.emplace_back(uniform(rng, 0.35, 0.7), uniform(rng, 0.35, 0.7), uniform(rng, 0.35, 0.7));
        b.quats.push_back(random_quaternion(rng));
        b.colors.push_back((base + Vec3(uniform(rng, -0.08, 0.08), uniform(rng, -0.08, 0.08), uniform(rng, -0.08, 0.08)))
                               .cwiseMax(0.0)
                               .cwiseMin(1.0));
    }
    return b;
}

void append_blob(GaussianSet& g, const Blob& b, double size) {
    for (std::size_t i = 0; i < b.offsets.size(); ++i)
        push_gaussian(g, b.center + size * b.offsets[i], size * b.scales[i], b.quats[i], 0.98, b.colors[i]);
}

GaussianSet merged(const GaussianSet& a, const GaussianSet& b) {
    GaussianSet out = a;
    for (std::size_t i = 0; i < b.count(); ++i) out.append_from(b, i);
    return out;
}

double coverage(const ImageBuffer& clean, const GaussianSet& statics, const GaussianSet& extra, const Camera& cam,
                const Vec3& bg, const RenderSettings& rs) {
    if (extra.count() == 0) return 0.0;
    const auto img = render(merged(statics, extra), cam, bg, rs).image;
    return 1.0 - diff_mask(clean, img).mean();
}

}  // namespace

SyntheticScene generate_scene(std::uint64_t seed, const SceneParams& params) {
    params.validate();
    SyntheticScene s;
    s.seed = seed;
    s.params = params;
    Rng rng(seed);
    s.statics = build_statics(params, rng);

    const int nt = params.train_views, ne = params.test_views;
    for (int k = 0; k < nt; ++k) {
        const double ang = 2 * std::numbers::pi * (k + uniform(rng, -0.2, 0.2)) / nt;
        const double h = params.camera_height + uniform(rng, -params.height_jitter, params.height_jitter);
        s.train_cameras.push_back(ring_camera(params, ang, h));
    }
    for (int k = 0; k < ne; ++k) {
        const double ang = 2 * std::numbers::pi * (k + 0.5) / ne + uniform(rng, -0.05, 0.05);
        const double h = params.camera_height + uniform(rng, -params.height_jitter, params.height_jitter);
        s.test_cameras.push_back(ring_camera(params, ang, h));
    }

    RenderSettings rs;
    s.distractors.assign(nt, GaussianSet{});

    // Optional world-fixed distractor standing on the floor for a contiguous
    // run of views.
    GaussianSet persistent;
    int persist_begin = 0, persist_end = 0;
    if (params.persistent_fraction > 0 && params.occlusion > 0) {
        Blob b;
        b.center = Vec3(uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3), -0.3) * params.box_half_extent;
        const Vec3 base = distractor_color(rng);
        for (int i = 0; i < 12; ++i) {
            b.offsets.emplace_back(normal(rng) * 0.5, normal(rng) * 0.5, normal(rng) * 1.0);
            b.scales.emplace_back(uniform(rng, 0.35, 0.6), uniform(rng, 0.35, 0.6), uniform(rng, 0.35, 0.6));
            b.quats.push_back(random_quaternion(rng));
            b.colors.push_back(base);
        }
        append_blob(persistent, b, 0.12 * params.box_half_extent);
        const int len = std::max(1, static_cast<int>(std::lround(params.persistent_fraction * nt)));
        persist_begin = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(nt - len + 1)));
        persist_end = persist_begin + len;
    }

    if (params.occlusion > 0) {
        // Distractors move along short tracks over consecutive ring views.
        // Each track gets a target around the requested level; targets are
        // normalized so the mean over views equals it.
        const int tl = params.track_length;
        const int groups = (nt + tl - 1) / tl;
        std::vector<double> targets(groups);
        double weighted = 0;
        for (int g = 0; g < groups; ++g) {
            targets[g] = uniform(rng, 0.6, 1.4);
            weighted += targets[g] * std::min(tl, nt - g * tl);
        }
        for (double& t : targets) t *= params.occlusion * nt / weighted;

        for (int g = 0; g < groups; ++g) {
            const int first = g * tl, last = std::min(nt, first + tl);
            std::vector<ImageBuffer> clean;
            std::vector<GaussianSet> fixed(last - first);
            double base_cov = 0;
            for (int k = first; k < last; ++k) {
                clean.push_back(render(s.statics, s.train_cameras[k], params.background, rs).image);
                if (k >= persist_begin && k < persist_end) fixed[k - first] = persistent;
                base_cov += coverage(clean.back(), s.statics, fixed[k - first], s.train_cameras[k], params.background, rs);
            }
            const double want = std::max(0.0, targets[g] * (last - first) - base_cov);

            bool placed = false;
            for (int attempt = 0; attempt < 8 && !placed; ++attempt) {
                std::vector<Blob> blobs;
                std::vector<Vec3> drift;
                const int nb = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(params.max_blobs_per_view)));
                for (int b = 0; b < nb; ++b) {
                    blobs.push_back(random_blob(s.train_cameras[first], params, rng));
                    const Vec3 d(normal(rng), normal(rng), 0.3 * normal(rng));
                    drift.push_back(params.track_drift * params.box_half_extent * d.normalized());
                }
                auto build = [&](int k, double size) {
                    GaussianSet d = fixed[k - first];
                    for (std::size_t b = 0; b < blobs.size(); ++b) {
                        Blob moved = blobs[b];
                        moved.center += static_cast<double>(k - first) * drift[b];
                        append_blob(d, moved, size);
                    }
                    return d;
                };
                auto added = [&](double size) {
                    double c = 0;
                    for (int k = first; k < last; ++k)
                        c += coverage(clean[k - first], s.statics, build(k, size), s.train_cameras[k], params.background, rs);
                    return c - base_cov;
                };
                double lo = 0.0, hi = 1.0 * params.box_half_extent;
                if (added(hi) < want) continue;
                for (int it = 0; it < 16; ++it) {
                    const double mid = 0.5 * (lo + hi);
                    (added(mid) < want ? lo : hi) = mid;
                }
                for (int k = first; k < last; ++k) s.distractors[k] = build(k, hi);
                placed = true;
            }
            if (!placed) throw ConfigError("could not place distractors reaching the requested occlusion");
        }
    }

    // Initial points: a subsample of the static centers.
    for (std::size_t i = 0; i < s.statics.count(); ++i) {
        if (uniform01(rng) >= params.init_fraction) continue;
        Vec3 rgb;
        for (int c = 0; c < 3; ++c) rgb[c] = std::clamp(kShC0 * s.statics.sh_dc[3 * i + c] + 0.5, 0.0, 1.0);
        s.init_points.push_back({s.statics.position(i), rgb});
    }
    if (params.contaminate_fraction > 0) {
        const int views = static_cast<int>(std::lround(params.contaminate_fraction * nt));
        for (int k = 0; k < views; ++k) {
            const GaussianSet& d = s.distractors[k];
            for (std::size_t i = 0; i < d.count(); ++i) {
                Vec3 rgb;
                for (int c = 0; c < 3; ++c) rgb[c] = std::clamp(kShC0 * d.sh_dc[3 * i + c] + 0.5, 0.0, 1.0);
                s.init_points.push_back({d.position(i), rgb});
            }
        }
    }
    return s;
}

DatasetBundle render_dataset(const SyntheticScene& scene, const RenderSettings& settings) {
    DatasetBundle b;
    b.background = scene.params.background;
    const int nt = static_cast<int>(scene.train_cameras.size());
    for (int k = 0; k < nt; ++k) {
        TrainView v;
        v.camera_id = k;
        v.camera = scene.train_cameras[k];
        const ImageBuffer clean = render(scene.statics, v.camera, b.background, settings).image.clamped();
        if (scene.distractors[k].count() > 0) {
            v.image = render(merged(scene.statics, scene.distractors[k]), v.camera, b.background, settings).image.clamped();
        } else {
            v.image = clean;
        }
        v.gt_mask = diff_mask(clean, v.image);
        b.train.push_back(std::move(v));
    }
    for (std::size_t k = 0; k < scene.test_cameras.size(); ++k) {
        TestView v;
        v.camera_id = nt + static_cast<int>(k);
        v.camera = scene.test_cameras[k];
        v.image = render(scene.statics, v.camera, b.background, settings).image.clamped();
        b.test.push_back(std::move(v));
    }
    b.points = scene.init_points;
    return b;
}

}  // namespace rsplat
