#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rsplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Array extents that do not agree (image sizes, feature dims, weight shapes).
class ShapeError : public Error {
  public:
    using Error::Error;
};

/// A file that parses but carries the wrong magic or structure.
class FormatError : public Error {
  public:
    using Error::Error;
};

/// A binary payload shorter (or longer) than its header declares.
class TruncationError : public FormatError {
  public:
    using FormatError::FormatError;
};

class VersionError : public FormatError {
  public:
    using FormatError::FormatError;
};

/// Invalid configuration value or violated configuration invariant.
class ConfigError : public Error {
  public:
    using Error::Error;
};

class DegenerateRotationError : public Error {
  public:
    using Error::Error;
};

class IoError : public Error {
  public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Scene parameters
// ---------------------------------------------------------------------------

/// Number of color coefficients per Gaussian: 3 for the DC band and 9 for the
/// degree-1 band (3 basis functions x RGB).
inline constexpr std::size_t kShDcSize = 3;
inline constexpr std::size_t kShRestSize = 9;

/// The learnable scene, stored as one flat array per parameter group so that
/// each group maps directly onto an optimizer slot.
///
/// Raw (unconstrained) parameterization: scale = exp(log_scale),
/// rotation = normalize(quaternion w,x,y,z), opacity = sigmoid(logit),
/// color = SH evaluation of (sh_dc, sh_rest) along the view direction.
struct GaussianSet {
    std::vector<double> positions;       // 3 per Gaussian
    std::vector<double> log_scales;      // 3 per Gaussian
    std::vector<double> rotations;       // 4 per Gaussian (w, x, y, z)
    std::vector<double> opacity_logits;  // 1 per Gaussian
    std::vector<double> sh_dc;           // 3 per Gaussian
    std::vector<double> sh_rest;         // 9 per Gaussian, [basis][channel]

    [[nodiscard]] std::size_t count() const { return opacity_logits.size(); }

    void resize(std::size_t n);
    void reserve(std::size_t n);
    /// Appends Gaussian `i` of `src` unchanged.
    void append_from(const GaussianSet& src, std::size_t i);
    /// Zero-filled set with the same layout (used for gradients and moments).
    [[nodiscard]] GaussianSet zeros_like() const;

    [[nodiscard]] Vec3 position(std::size_t i) const {
        return {positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]};
    }
    void set_position(std::size_t i, const Vec3& p) {
        positions[3 * i] = p.x();
        positions[3 * i + 1] = p.y();
        positions[3 * i + 2] = p.z();
    }
    [[nodiscard]] Vec3 log_scale(std::size_t i) const {
        return {log_scales[3 * i], log_scales[3 * i + 1], log_scales[3 * i + 2]};
    }
    void set_log_scale(std::size_t i, const Vec3& s) {
        log_scales[3 * i] = s.x();
        log_scales[3 * i + 1] = s.y();
        log_scales[3 * i + 2] = s.z();
    }
    [[nodiscard]] Vec4 rotation(std::size_t i) const {
        return {rotations[4 * i], rotations[4 * i + 1], rotations[4 * i + 2], rotations[4 * i + 3]};
    }

    /// Throws ShapeError if the group arrays disagree on `count`.
    void validate_shape() const;

    /// Visits every parameter group as (name, values, values-per-Gaussian).
    template <typename Fn>
    void for_each_group(Fn&& fn) {
        fn("positions", positions, 3);
        fn("log_scales", log_scales, 3);
        fn("rotations", rotations, 4);
        fn("opacity_logits", opacity_logits, 1);
        fn("sh_dc", sh_dc, kShDcSize);
        fn("sh_rest", sh_rest, kShRestSize);
    }
    template <typename Fn>
    void for_each_group(Fn&& fn) const {
        fn("positions", positions, 3);
        fn("log_scales", log_scales, 3);
        fn("rotations", rotations, 4);
        fn("opacity_logits", opacity_logits, 1);
        fn("sh_dc", sh_dc, kShDcSize);
        fn("sh_rest", sh_rest, kShRestSize);
    }

    friend bool operator==(const GaussianSet&, const GaussianSet&) = default;
};

/// Gradients share the parameter layout.
using GaussianGrads = GaussianSet;

/// One Gaussian after the activation functions have been applied.
struct ActivatedGaussian {
    Vec3 position;
    Vec3 scale;       // > 0
    Vec4 rotation;    // unit quaternion (w, x, y, z)
    double opacity;   // (0, 1)
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Activates Gaussian `i`. Throws DegenerateRotationError for a zero quaternion.
ActivatedGaussian activate(const GaussianSet& g, std::size_t i);
/// Activates every Gaussian.
std::vector<ActivatedGaussian> activate_parameters(const GaussianSet& g);

/// Rotation matrix of a unit quaternion (w, x, y, z).
Mat3 quaternion_to_rotation(const Vec4& q);

/// Sigma = R diag(s^2) R^T.
Mat3 build_covariance(const Vec3& scale, const Vec4& unit_rotation);

// ---------------------------------------------------------------------------
// Color model (SH degree <= 1)
// ---------------------------------------------------------------------------

inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kShC1 = 0.4886025119029199;

/// Degree-0/1 spherical-harmonics color along unit direction `dir`, with the
/// conventional +0.5 offset. Not clamped.
Vec3 eval_sh_color(std::span<const double, 3> dc, std::span<const double, 9> rest, const Vec3& dir,
                   int sh_degree);

/// Color for an RGB value with zero view dependence.
std::array<double, 3> rgb_to_sh_dc(const Vec3& rgb);

// ---------------------------------------------------------------------------
// Cameras and images
// ---------------------------------------------------------------------------

/// Pinhole camera. `rotation`/`translation` map world to camera:
/// x_cam = rotation * x_world + translation. Camera looks down +z, image
/// x right, image y down; pixel (px, py) is sampled at (px + 0.5, py + 0.5).
struct Camera {
    double fx = 1, fy = 1, cx = 0, cy = 0;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    int width = 1, height = 1;

    [[nodiscard]] Vec3 center() const { return -rotation.transpose() * translation; }

    /// Same pose, intrinsics and resolution multiplied by `factor`.
    [[nodiscard]] Camera scaled(double factor) const;
    /// Same pose, rendered at `w` x `h` with intrinsics scaled per axis.
    [[nodiscard]] Camera resized(int w, int h) const;

    /// Throws ConfigError when intrinsics or rotation are invalid.
    void validate(double ortho_tol = 1e-9) const;

    static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fx, double fy,
                          int width, int height);

    friend bool operator==(const Camera&, const Camera&) = default;
};

/// RGB image, row-major, channel-fastest.
struct ImageBuffer {
    int width = 0, height = 0;
    std::vector<double> values;

    ImageBuffer() = default;
    ImageBuffer(int w, int h, double fill = 0.0)
        : width(w), height(h), values(static_cast<std::size_t>(w) * h * 3, fill) {}

    [[nodiscard]] std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
    double& at(int x, int y, int c) { return values[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    [[nodiscard]] double at(int x, int y, int c) const {
        return values[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    [[nodiscard]] ImageBuffer clamped() const;

    friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;
};

/// Single-channel map in [0, 1]. As a transient mask: 1 = static, 0 = transient.
struct TransientMask {
    int width = 0, height = 0;
    std::vector<double> values;

    TransientMask() = default;
    TransientMask(int w, int h, double fill = 1.0)
        : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

    [[nodiscard]] std::size_t pixels() const { return values.size(); }
    double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
    [[nodiscard]] double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
    [[nodiscard]] double mean() const;

    friend bool operator==(const TransientMask&, const TransientMask&) = default;
};

/// Area-average downsample by an integer factor (dimensions floor-divided).
ImageBuffer downsample_area(const ImageBuffer& img, int factor);
/// Bilinear resample (pixel-center aligned, edge clamped).
ImageBuffer resample_bilinear(const ImageBuffer& img, int w, int h);
TransientMask resample_bilinear(const TransientMask& m, int w, int h);
/// Adjoint of resample_bilinear for masks: maps a gradient w.r.t. the resampled
/// map back onto a `src_w` x `src_h` source.
TransientMask resample_bilinear_adjoint(const TransientMask& grad, int src_w, int src_h);

}  // namespace rsplat
