#pragma once

#include "rsplat/core.hpp"
#include "rsplat/random.hpp"
#include "rsplat/renderer.hpp"

#include <cmath>
#include <filesystem>
#include <string>

namespace rsplat::testing {

inline ImageBuffer random_image(int w, int h, Rng& rng) {
    ImageBuffer img(w, h);
    for (double& v : img.values) v = uniform01(rng);
    return img;
}

inline TransientMask random_mask(int w, int h, Rng& rng) {
    TransientMask m(w, h);
    for (double& v : m.values) v = uniform01(rng);
    return m;
}

/// Camera at the origin looking down +z.
inline Camera front_camera(int w, int h, double focal) {
    Camera c;
    c.fx = c.fy = focal;
    c.cx = w / 2.0;
    c.cy = h / 2.0;
    c.width = w;
    c.height = h;
    return c;
}

/// A handful of Gaussians in front of `front_camera`, with well separated
/// depths and moderate opacities so that no splat sits on a clamp boundary.
inline GaussianSet random_gaussians(std::size_t n, Rng& rng) {
    GaussianSet g;
    g.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double depth = 2.0 + 0.25 * static_cast<double>(i) + uniform(rng, -0.05, 0.05);
        g.set_position(i, {uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), depth});
        g.set_log_scale(i, {std::log(uniform(rng, 0.15, 0.4)), std::log(uniform(rng, 0.15, 0.4)),
                            std::log(uniform(rng, 0.15, 0.4))});
        Vec4 q(1.0 + uniform(rng, -0.3, 0.3), uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5),
               uniform(rng, -0.5, 0.5));
        for (int c = 0; c < 4; ++c) g.rotations[4 * i + c] = q[c];
        g.opacity_logits[i] = logit(uniform(rng, 0.1, 0.5));
        for (int c = 0; c < 3; ++c) g.sh_dc[3 * i + c] = uniform(rng, 0.2, 1.2);
        for (int c = 0; c < 9; ++c) g.sh_rest[9 * i + c] = uniform(rng, -0.2, 0.2);
    }
    return g;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("rsplat_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace rsplat::testing
