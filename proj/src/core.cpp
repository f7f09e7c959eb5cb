#include "rsplat/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace rsplat {

void GaussianSet::resize(std::size_t n) {
    positions.resize(3 * n);
    log_scales.resize(3 * n);
    rotations.resize(4 * n);
    opacity_logits.resize(n);
    sh_dc.resize(kShDcSize * n);
    sh_rest.resize(kShRestSize * n);
}

void GaussianSet::reserve(std::size_t n) {
    for_each_group([n](const char*, std::vector<double>& v, std::size_t k) { v.reserve(k * n); });
}

void GaussianSet::append_from(const GaussianSet& src, std::size_t i) {
    auto copy = [i](std::vector<double>& dst, const std::vector<double>& from, std::size_t k) {
        dst.insert(dst.end(), from.begin() + static_cast<std::ptrdiff_t>(k * i),
                   from.begin() + static_cast<std::ptrdiff_t>(k * (i + 1)));
    };
    copy(positions, src.positions, 3);
    copy(log_scales, src.log_scales, 3);
    copy(rotations, src.rotations, 4);
    copy(opacity_logits, src.opacity_logits, 1);
    copy(sh_dc, src.sh_dc, kShDcSize);
    copy(sh_rest, src.sh_rest, kShRestSize);
}

GaussianSet GaussianSet::zeros_like() const {
    GaussianSet z;
    z.resize(count());
    return z;
}

void GaussianSet::validate_shape() const {
    const std::size_t n = count();
    for_each_group([n](const char* name, const std::vector<double>& v, std::size_t k) {
        if (v.size() != k * n) {
            std::ostringstream os;
            os << "GaussianSet group '" << name << "' has " << v.size() << " values, expected " << k * n;
            throw ShapeError(os.str());
        }
    });
}

Mat3 quaternion_to_rotation(const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),  //
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),    //
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

ActivatedGaussian activate(const GaussianSet& g, std::size_t i) {
    const Vec4 q = g.rotation(i);
    const double norm = q.norm();
    if (!(norm > 0.0)) {
        throw DegenerateRotationError("Gaussian " + std::to_string(i) + " has a zero-norm quaternion");
    }
    ActivatedGaussian a;
    a.position = g.position(i);
    a.scale = g.log_scale(i).array().exp();
    a.rotation = q / norm;
    a.opacity = sigmoid(g.opacity_logits[i]);
    return a;
}

std::vector<ActivatedGaussian> activate_parameters(const GaussianSet& g) {
    std::vector<ActivatedGaussian> out;
    out.reserve(g.count());
    for (std::size_t i = 0; i < g.count(); ++i) out.push_back(activate(g, i));
    return out;
}

Mat3 build_covariance(const Vec3& scale, const Vec4& unit_rotation) {
    const Mat3 m = quaternion_to_rotation(unit_rotation) * scale.asDiagonal();
    Mat3 sigma = m * m.transpose();
    // Exact symmetry; the two triangles can differ in the last ulp otherwise.
    sigma = 0.5 * (sigma + sigma.transpose()).eval();
    return sigma;
}

Vec3 eval_sh_color(std::span<const double, 3> dc, std::span<const double, 9> rest, const Vec3& dir,
                   int sh_degree) {
    Vec3 c;
    for (int ch = 0; ch < 3; ++ch) c[ch] = kShC0 * dc[ch] + 0.5;
    if (sh_degree >= 1) {
        const double basis[3] = {-kShC1 * dir.y(), kShC1 * dir.z(), -kShC1 * dir.x()};
        for (int b = 0; b < 3; ++b)
            for (int ch = 0; ch < 3; ++ch) c[ch] += basis[b] * rest[3 * b + ch];
    }
    return c;
}

std::array<double, 3> rgb_to_sh_dc(const Vec3& rgb) {
    return {(rgb.x() - 0.5) / kShC0, (rgb.y() - 0.5) / kShC0, (rgb.z() - 0.5) / kShC0};
}

Camera Camera::scaled(double factor) const {
    Camera c = *this;
    c.fx *= factor;
    c.fy *= factor;
    c.cx *= factor;
    c.cy *= factor;
    c.width = std::max(1, static_cast<int>(std::lround(width * factor)));
    c.height = std::max(1, static_cast<int>(std::lround(height * factor)));
    return c;
}

Camera Camera::resized(int w, int h) const {
    Camera c = *this;
    const double sx = static_cast<double>(w) / width;
    const double sy = static_cast<double>(h) / height;
    c.fx *= sx;
    c.cx *= sx;
    c.fy *= sy;
    c.cy *= sy;
    c.width = w;
    c.height = h;
    return c;
}

void Camera::validate(double ortho_tol) const {
    if (!(fx > 0 && fy > 0)) throw ConfigError("camera focal lengths must be positive");
    if (width <= 0 || height <= 0) throw ConfigError("camera dimensions must be positive");
    const double err = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (!(err <= ortho_tol)) throw ConfigError("camera rotation is not orthonormal");
    if (!translation.allFinite()) throw ConfigError("camera translation is not finite");
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fx, double fy, int width,
                       int height) {
    const Vec3 forward = (target - eye).normalized();
    const Vec3 right = forward.cross(up).normalized();
    const Vec3 down = forward.cross(right);
    Camera c;
    c.rotation.row(0) = right.transpose();
    c.rotation.row(1) = down.transpose();
    c.rotation.row(2) = forward.transpose();
    c.translation = -c.rotation * eye;
    c.fx = fx;
    c.fy = fy;
    c.cx = width / 2.0;
    c.cy = height / 2.0;
    c.width = width;
    c.height = height;
    return c;
}

ImageBuffer ImageBuffer::clamped() const {
    ImageBuffer out = *this;
    for (double& v : out.values) v = std::clamp(v, 0.0, 1.0);
    return out;
}

double TransientMask::mean() const {
    if (values.empty()) return 0.0;
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

ImageBuffer downsample_area(const ImageBuffer& img, int factor) {
    if (factor < 1) throw ConfigError("downsample factor must be >= 1");
    const int w = img.width / factor, h = img.height / factor;
    if (w < 1 || h < 1) throw ShapeError("image too small to downsample by " + std::to_string(factor));
    ImageBuffer out(w, h);
    const double inv = 1.0 / (factor * factor);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                double s = 0;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx) s += img.at(x * factor + dx, y * factor + dy, c);
                out.at(x, y, c) = s * inv;
            }
    return out;
}

namespace {

struct AxisTaps {
    std::vector<int> lo, hi;
    std::vector<double> frac;  // weight of `hi`
};

AxisTaps bilinear_taps(int src, int dst) {
    AxisTaps t;
    t.lo.resize(dst);
    t.hi.resize(dst);
    t.frac.resize(dst);
    const double ratio = static_cast<double>(src) / dst;
    for (int i = 0; i < dst; ++i) {
        double s = (i + 0.5) * ratio - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(src - 1));
        const int lo = std::min(static_cast<int>(std::floor(s)), src - 1);
        t.lo[i] = lo;
        t.hi[i] = std::min(lo + 1, src - 1);
        t.frac[i] = s - lo;
    }
    return t;
}

}  // namespace

ImageBuffer resample_bilinear(const ImageBuffer& img, int w, int h) {
    if (img.width == w && img.height == h) return img;
    const AxisTaps tx = bilinear_taps(img.width, w), ty = bilinear_taps(img.height, h);
    ImageBuffer out(w, h);
    for (int y = 0; y < h; ++y) {
        const double fy = ty.frac[y];
        for (int x = 0; x < w; ++x) {
            const double fx = tx.frac[x];
            for (int c = 0; c < 3; ++c) {
                const double top = (1 - fx) * img.at(tx.lo[x], ty.lo[y], c) + fx * img.at(tx.hi[x], ty.lo[y], c);
                const double bot = (1 - fx) * img.at(tx.lo[x], ty.hi[y], c) + fx * img.at(tx.hi[x], ty.hi[y], c);
                out.at(x, y, c) = (1 - fy) * top + fy * bot;
            }
        }
    }
    return out;
}

TransientMask resample_bilinear(const TransientMask& m, int w, int h) {
    if (m.width == w && m.height == h) return m;
    const AxisTaps tx = bilinear_taps(m.width, w), ty = bilinear_taps(m.height, h);
    TransientMask out(w, h);
    for (int y = 0; y < h; ++y) {
        const double fy = ty.frac[y];
        for (int x = 0; x < w; ++x) {
            const double fx = tx.frac[x];
            const double top = (1 - fx) * m.at(tx.lo[x], ty.lo[y]) + fx * m.at(tx.hi[x], ty.lo[y]);
            const double bot = (1 - fx) * m.at(tx.lo[x], ty.hi[y]) + fx * m.at(tx.hi[x], ty.hi[y]);
            out.at(x, y) = (1 - fy) * top + fy * bot;
        }
    }
    return out;
}

TransientMask resample_bilinear_adjoint(const TransientMask& grad, int src_w, int src_h) {
    if (grad.width == src_w && grad.height == src_h) return grad;
    const AxisTaps tx = bilinear_taps(src_w, grad.width), ty = bilinear_taps(src_h, grad.height);
    TransientMask out(src_w, src_h, 0.0);
    for (int y = 0; y < grad.height; ++y) {
        const double fy = ty.frac[y];
        for (int x = 0; x < grad.width; ++x) {
            const double fx = tx.frac[x];
            const double g = grad.at(x, y);
            out.at(tx.lo[x], ty.lo[y]) += (1 - fy) * (1 - fx) * g;
            out.at(tx.hi[x], ty.lo[y]) += (1 - fy) * fx * g;
            out.at(tx.lo[x], ty.hi[y]) += fy * (1 - fx) * g;
            out.at(tx.hi[x], ty.hi[y]) += fy * fx * g;
        }
    }
    return out;
}

}  // namespace rsplat
