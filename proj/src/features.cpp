#include "rsplat/features.hpp"

#include "rsplat/binary.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

namespace rsplat {

const char* to_string(FeatureLevel level) { return level == FeatureLevel::low ? "low" : "high"; }

int level_edge(FeatureLevel level, const TrainConfig& cfg) {
    return level == FeatureLevel::low ? cfg.low_res_edge : cfg.high_res_edge;
}

FeatureMap extract_features(const ImageBuffer& img, FeatureLevel level, const TrainConfig& cfg) {
    const int ps = cfg.patch_size;
    if (img.width < ps || img.height < ps) {
        throw ShapeError("image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                         " is smaller than one " + std::to_string(ps) + "px patch");
    }
    const int edge = level_edge(level, cfg);
    if (edge < ps) throw ShapeError("feature level edge is smaller than one patch");
    const ImageBuffer sq = resample_bilinear(img, edge, edge);

    std::vector<double> lum(static_cast<std::size_t>(edge) * edge);
    for (int y = 0; y < edge; ++y)
        for (int x = 0; x < edge; ++x)
            lum[static_cast<std::size_t>(y) * edge + x] =
                0.299 * sq.at(x, y, 0) + 0.587 * sq.at(x, y, 1) + 0.114 * sq.at(x, y, 2);

    FeatureMap f;
    f.grid_h = edge / ps;
    f.grid_w = edge / ps;
    f.dim = kBuiltinFeatureDim;
    f.level = level;
    f.source = FeatureSource::builtin;
    f.values.assign(f.cells() * f.dim, 0.0);

    const double inv_n = 1.0 / (ps * ps);
    const double inv_grad = 1.0 / (ps * (ps - 1) > 0 ? ps * (ps - 1) : 1);
    for (int gy = 0; gy < f.grid_h; ++gy) {
        for (int gx = 0; gx < f.grid_w; ++gx) {
            double* out = f.cell(static_cast<std::size_t>(gy) * f.grid_w + gx);
            const int x0 = gx * ps, y0 = gy * ps;
            double sum[3] = {0, 0, 0}, sq_sum[3] = {0, 0, 0};
            double gxs = 0, gys = 0;
            double hist[8] = {0, 0, 0, 0, 0, 0, 0, 0};
            for (int y = y0; y < y0 + ps; ++y) {
                for (int x = x0; x < x0 + ps; ++x) {
                    for (int c = 0; c < 3; ++c) {
                        const double v = sq.at(x, y, c);
                        sum[c] += v;
                        sq_sum[c] += v * v;
                    }
                    const double l = lum[static_cast<std::size_t>(y) * edge + x];
                    const int bin = std::clamp(static_cast<int>(std::floor(l * 8.0)), 0, 7);
                    hist[bin] += 1.0;
                    if (x + 1 < x0 + ps) gxs += std::abs(lum[static_cast<std::size_t>(y) * edge + x + 1] - l);
                    if (y + 1 < y0 + ps) gys += std::abs(lum[static_cast<std::size_t>(y + 1) * edge + x] - l);
                }
            }
            for (int c = 0; c < 3; ++c) {
                const double mean = sum[c] * inv_n;
                out[c] = mean;
                out[3 + c] = std::sqrt(std::max(0.0, sq_sum[c] * inv_n - mean * mean));
            }
            out[6] = gxs * inv_grad;
            out[7] = gys * inv_grad;
            for (int b = 0; b < 8; ++b) out[8 + b] = hist[b] * inv_n;
        }
    }
    return f;
}

CosineMap cosine_mask(const FeatureMap& f_gt, const FeatureMap& f_render) {
    if (f_gt.grid_h != f_render.grid_h || f_gt.grid_w != f_render.grid_w || f_gt.dim != f_render.dim) {
        throw ShapeError("feature maps differ in grid or dim");
    }
    CosineMap m;
    m.grid_h = f_gt.grid_h;
    m.grid_w = f_gt.grid_w;
    m.values.assign(f_gt.cells(), 0.0);
    for (std::size_t i = 0; i < f_gt.cells(); ++i) {
        const double* a = f_gt.cell(i);
        const double* b = f_render.cell(i);
        double dot = 0, na = 0, nb = 0;
        for (int k = 0; k < f_gt.dim; ++k) {
            dot += a[k] * b[k];
            na += a[k] * a[k];
            nb += b[k] * b[k];
        }
        if (na == 0.0 || nb == 0.0) {
            ++m.zero_norm_patches;
            continue;
        }
        const double cosine = std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
        m.values[i] = std::max(2.0 * cosine - 1.0, 0.0);
    }
    return m;
}

namespace {
constexpr char kFmapMagic[4] = {'F', 'M', 'A', 'P'};
constexpr std::uint32_t kFmapVersion = 1;
}  // namespace

void write_feature_map(const FeatureMap& fmap, const std::filesystem::path& path) {
    binary::Writer w;
    w.bytes(kFmapMagic, 4);
    w.u32(kFmapVersion);
    w.u32(static_cast<std::uint32_t>(fmap.grid_h));
    w.u32(static_cast<std::uint32_t>(fmap.grid_w));
    w.u32(static_cast<std::uint32_t>(fmap.dim));
    for (double v : fmap.values) w.f32(static_cast<float>(v));
    binary::write_file(path.string(), w.data());
}

FeatureMap load_feature_map(const std::filesystem::path& path) {
    const auto bytes = binary::read_file(path.string());
    binary::Reader r(bytes.data(), bytes.size(), path.string());
    char magic[4];
    r.bytes(magic, 4);
    if (!std::equal(magic, magic + 4, kFmapMagic)) throw FormatError(path.string() + ": bad FMAP magic");
    const std::uint32_t version = r.u32();
    if (version != kFmapVersion) {
        throw VersionError(path.string() + ": unsupported FMAP version " + std::to_string(version));
    }
    FeatureMap f;
    f.grid_h = static_cast<int>(r.u32());
    f.grid_w = static_cast<int>(r.u32());
    f.dim = static_cast<int>(r.u32());
    f.source = FeatureSource::external;
    const std::uint64_t expected = static_cast<std::uint64_t>(f.grid_h) * f.grid_w * f.dim;
    if (r.remaining() != expected * 4) {
        throw TruncationError(path.string() + ": header declares " + std::to_string(expected) +
                              " floats but payload holds " + std::to_string(r.remaining() / 4.0));
    }
    f.values.resize(expected);
    for (auto& v : f.values) v = r.f32();
    return f;
}

}  // namespace rsplat
