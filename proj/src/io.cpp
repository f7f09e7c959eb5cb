#include "rsplat/io.hpp"

#include "rsplat/binary.hpp"

#include <png.h>

#include <Eigen/SVD>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace rsplat {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- images

namespace {

std::vector<std::uint8_t> png_read_raw(const std::string& path, png_uint_32 format, int& w, int& h) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!fs::exists(path)) throw IoError(path + ": file not found");
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw FormatError(path + ": not a readable PNG (" + image.message + ")");
    image.format = format;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw FormatError(path + ": PNG decode failed (" + msg + ")");
    }
    w = static_cast<int>(image.width);
    h = static_cast<int>(image.height);
    return buf;
}

void png_write_raw(const std::string& path, png_uint_32 format, int w, int h, const std::vector<std::uint8_t>& buf) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = format;
    if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr))
        throw IoError(path + ": cannot write PNG (" + image.message + ")");
}

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

void write_png(const std::string& path, const ImageBuffer& img) {
    std::vector<std::uint8_t> buf(img.values.size());
    std::transform(img.values.begin(), img.values.end(), buf.begin(), quantize);
    png_write_raw(path, PNG_FORMAT_RGB, img.width, img.height, buf);
}

ImageBuffer read_png(const std::string& path) {
    int w = 0, h = 0;
    const auto buf = png_read_raw(path, PNG_FORMAT_RGB, w, h);
    ImageBuffer img(w, h);
    for (std::size_t i = 0; i < buf.size(); ++i) img.values[i] = buf[i] / 255.0;
    return img;
}

void write_mask_png(const std::string& path, const TransientMask& mask) {
    std::vector<std::uint8_t> buf(mask.values.size());
    std::transform(mask.values.begin(), mask.values.end(), buf.begin(), quantize);
    png_write_raw(path, PNG_FORMAT_GRAY, mask.width, mask.height, buf);
}

TransientMask read_mask_png(const std::string& path) {
    int w = 0, h = 0;
    const auto buf = png_read_raw(path, PNG_FORMAT_GRAY, w, h);
    TransientMask m(w, h);
    for (std::size_t i = 0; i < buf.size(); ++i) m.values[i] = buf[i] / 255.0;
    return m;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError(path + ": cannot open for writing");
    f << text;
    if (!f) throw IoError(path + ": write failed");
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError(path + ": cannot open for reading");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// --------------------------------------------------------------- dataset

namespace {

std::string view_name(int id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d.png", id);
    return buf;
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

thread_local std::size_t g_reorthonormalized = 0;

std::vector<std::string> split_ws(const std::string& line) {
    std::istringstream ss(line);
    std::vector<std::string> out;
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

bool parse_double(const std::string& s, double& out) {
    const char* b = s.data();
    const char* e = b + s.size();
    auto [p, ec] = std::from_chars(b, e, out);
    return ec == std::errc() && p == e && std::isfinite(out);
}

bool parse_int(const std::string& s, long long& out) {
    const char* b = s.data();
    const char* e = b + s.size();
    auto [p, ec] = std::from_chars(b, e, out);
    return ec == std::errc() && p == e;
}

}  // namespace

std::size_t last_reorthonormalized_count() { return g_reorthonormalized; }

void write_dataset(const std::string& dir, const DatasetBundle& data) {
    std::error_code ec;
    for (const char* sub : {"", "train", "train_mask", "test"}) {
        fs::create_directories(fs::path(dir) / sub, ec);
        if (ec) throw IoError((fs::path(dir) / sub).string() + ": cannot create directory: " + ec.message());
    }
    std::string cams;
    auto cam_line = [&](int id, const Camera& c) {
        cams += std::to_string(id) + ' ' + fmt17(c.fx) + ' ' + fmt17(c.fy) + ' ' + fmt17(c.cx) + ' ' + fmt17(c.cy) + ' ' +
                std::to_string(c.width) + ' ' + std::to_string(c.height);
        for (int r = 0; r < 3; ++r)
            for (int k = 0; k < 3; ++k) cams += ' ' + fmt17(c.rotation(r, k));
        for (int k = 0; k < 3; ++k) cams += ' ' + fmt17(c.translation[k]);
        cams += '\n';
    };
    for (const auto& v : data.train) {
        cam_line(v.camera_id, v.camera);
        write_png((fs::path(dir) / "train" / view_name(v.camera_id)).string(), v.image);
        write_mask_png((fs::path(dir) / "train_mask" / view_name(v.camera_id)).string(), v.gt_mask);
    }
    for (const auto& v : data.test) {
        cam_line(v.camera_id, v.camera);
        write_png((fs::path(dir) / "test" / view_name(v.camera_id)).string(), v.image);
    }
    write_text_file((fs::path(dir) / "cameras.txt").string(), cams);
    std::string pts;
    for (const auto& p : data.points) {
        pts += fmt17(p.position.x()) + ' ' + fmt17(p.position.y()) + ' ' + fmt17(p.position.z()) + ' ' +
               fmt17(p.color.x()) + ' ' + fmt17(p.color.y()) + ' ' + fmt17(p.color.z()) + '\n';
    }
    write_text_file((fs::path(dir) / "points.txt").string(), pts);
}

DatasetBundle read_dataset(const std::string& dir) {
    g_reorthonormalized = 0;
    const fs::path root(dir);
    const std::string cam_path = (root / "cameras.txt").string();
    if (!fs::exists(cam_path)) throw IoError(cam_path + ": missing cameras.txt");
    const std::string pts_path = (root / "points.txt").string();
    if (!fs::exists(pts_path)) throw IoError(pts_path + ": missing points.txt");

    DatasetBundle data;
    std::istringstream cams(read_text_file(cam_path));
    std::string line;
    int lineno = 0;
    std::map<int, Camera> cameras;
    while (std::getline(cams, line)) {
        ++lineno;
        const auto tok = split_ws(line);
        if (tok.empty()) continue;
        const std::string where = cam_path + ":" + std::to_string(lineno);
        if (tok.size() != 19)
            throw FormatError(where + ": expected 19 fields (id fx fy cx cy w h R[9] t[3]), got " +
                              std::to_string(tok.size()));
        long long id = 0, w = 0, h = 0;
        if (!parse_int(tok[0], id) || id < 0 || id > 9999) throw FormatError(where + ": invalid view id '" + tok[0] + "'");
        if (!parse_int(tok[5], w) || !parse_int(tok[6], h) || w <= 0 || h <= 0)
            throw FormatError(where + ": invalid image size");
        double v[19];
        for (int k : {1, 2, 3, 4})
            if (!parse_double(tok[k], v[k])) throw FormatError(where + ": invalid number '" + tok[k] + "'");
        for (int k = 7; k < 19; ++k)
            if (!parse_double(tok[k], v[k])) throw FormatError(where + ": invalid number '" + tok[k] + "'");
        Camera c;
        c.fx = v[1];
        c.fy = v[2];
        c.cx = v[3];
        c.cy = v[4];
        c.width = static_cast<int>(w);
        c.height = static_cast<int>(h);
        for (int r = 0; r < 3; ++r)
            for (int k = 0; k < 3; ++k) c.rotation(r, k) = v[7 + 3 * r + k];
        for (int k = 0; k < 3; ++k) c.translation[k] = v[16 + k];
        const double drift = (c.rotation.transpose() * c.rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
        if (drift > 1e-6) {
            Eigen::JacobiSVD<Mat3> svd(c.rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
            Mat3 r = svd.matrixU() * svd.matrixV().transpose();
            if (r.determinant() < 0) throw FormatError(where + ": rotation is a reflection");
            c.rotation = r;
            ++g_reorthonormalized;
            std::fprintf(stderr, "warning: %s: rotation re-orthonormalized (drift %.3g)\n", where.c_str(), drift);
        }
        try {
            c.validate(1e-6);
        } catch (const ConfigError& e) {
            throw FormatError(where + ": " + e.what());
        }
        if (!cameras.emplace(static_cast<int>(id), c).second)
            throw FormatError(where + ": duplicate view id " + std::to_string(id));
    }
    if (cameras.empty()) throw FormatError(cam_path + ": no cameras");

    for (const auto& [id, cam] : cameras) {
        const fs::path train_img = root / "train" / view_name(id);
        const fs::path test_img = root / "test" / view_name(id);
        auto check_size = [&](int w, int h, const std::string& what) {
            if (w != cam.width || h != cam.height)
                throw ShapeError("view " + std::to_string(id) + ": " + what + " is " + std::to_string(w) + "x" +
                                 std::to_string(h) + " but cameras.txt says " + std::to_string(cam.width) + "x" +
                                 std::to_string(cam.height));
        };
        if (fs::exists(train_img)) {
            TrainView v;
            v.camera_id = id;
            v.camera = cam;
            v.image = read_png(train_img.string());
            check_size(v.image.width, v.image.height, "image " + train_img.string());
            const fs::path mask = root / "train_mask" / view_name(id);
            if (!fs::exists(mask)) throw IoError(mask.string() + ": missing mask for view " + std::to_string(id));
            v.gt_mask = read_mask_png(mask.string());
            check_size(v.gt_mask.width, v.gt_mask.height, "mask " + mask.string());
            data.train.push_back(std::move(v));
        } else if (fs::exists(test_img)) {
            TestView v;
            v.camera_id = id;
            v.camera = cam;
            v.image = read_png(test_img.string());
            check_size(v.image.width, v.image.height, "image " + test_img.string());
            data.test.push_back(std::move(v));
        } else {
            throw IoError("view " + std::to_string(id) + ": no image in train/ or test/");
        }
    }

    std::istringstream pts(read_text_file(pts_path));
    lineno = 0;
    while (std::getline(pts, line)) {
        ++lineno;
        const auto tok = split_ws(line);
        if (tok.empty()) continue;
        const std::string where = pts_path + ":" + std::to_string(lineno);
        if (tok.size() != 6) throw FormatError(where + ": expected 6 fields (x y z r g b)");
        double v[6];
        for (int k = 0; k < 6; ++k)
            if (!parse_double(tok[k], v[k])) throw FormatError(where + ": invalid number '" + tok[k] + "'");
        data.points.push_back({Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5])});
    }
    if (data.points.empty()) throw FormatError(pts_path + ": no points");
    return data;
}

// ------------------------------------------------------------ checkpoint

namespace {

constexpr char kMagic[4] = {'R', 'S', 'P', 'L'};

void put_set(binary::Writer& w, const GaussianSet& g) {
    g.for_each_group([&](const char*, const std::vector<double>& v, int) { w.f64_array(v); });
}

GaussianSet get_set(binary::Reader& r) {
    GaussianSet g;
    g.for_each_group([&](const char*, std::vector<double>& v, int) { v = r.f64_array(); });
    try {
        g.validate_shape();
    } catch (const ShapeError& e) {
        throw FormatError(r.context() + ": " + e.what());
    }
    return g;
}

void put_camera(binary::Writer& w, const Camera& c) {
    w.f64(c.fx);
    w.f64(c.fy);
    w.f64(c.cx);
    w.f64(c.cy);
    w.u32(static_cast<std::uint32_t>(c.width));
    w.u32(static_cast<std::uint32_t>(c.height));
    for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k) w.f64(c.rotation(r, k));
    for (int k = 0; k < 3; ++k) w.f64(c.translation[k]);
}

Camera get_camera(binary::Reader& r) {
    Camera c;
    c.fx = r.f64();
    c.fy = r.f64();
    c.cx = r.f64();
    c.cy = r.f64();
    c.width = static_cast<int>(r.u32());
    c.height = static_cast<int>(r.u32());
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) c.rotation(i, k) = r.f64();
    for (int k = 0; k < 3; ++k) c.translation[k] = r.f64();
    return c;
}

std::uint32_t flag_bits(const AblationFlags& f) {
    return (f.enable_mask ? 1u : 0u) | (f.enable_delayed_growth ? 2u : 0u) | (f.enable_bootstrapping ? 4u : 0u) |
           (f.enable_reg ? 8u : 0u) | (f.enable_densification ? 16u : 0u);
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const TrainState& st) {
    binary::Writer w;
    w.bytes(kMagic, 4);
    w.u32(kCheckpointVersion);
    w.string(format_config(st.config));
    w.u64(st.config.seed);
    w.u32(flag_bits(st.flags));
    put_set(w, st.gaussians);
    put_set(w, st.adam_m);
    put_set(w, st.adam_v);
    w.u64(st.adam_step);

    const MaskMLP& m = st.mlp;
    w.u32(static_cast<std::uint32_t>(m.dim_in));
    w.u32(static_cast<std::uint32_t>(m.hidden));
    for (const auto* v : {&m.w1, &m.b1, &m.w2, &m.m_w1, &m.v_w1, &m.m_b1, &m.v_b1, &m.m_w2, &m.v_w2}) w.f64_array(*v);
    w.f64(m.b2);
    w.f64(m.m_b2);
    w.f64(m.v_b2);
    w.u64(m.step);
    w.u64(m.skipped_steps);

    for (const auto* v : {&st.stats.grad_sum, &st.stats.count, &st.stats.max_radius, &st.stats.pos_grad_sum})
        w.f64_array(*v);

    w.u32(static_cast<std::uint32_t>(st.iteration));
    w.string(serialize_rng(st.rng));
    w.u32_array(st.view_order);
    w.u32(st.view_cursor);
    w.f64(st.scene_extent);
    for (int c = 0; c < 3; ++c) w.f64(st.background[c]);

    w.u64(st.cameras.size());
    for (const auto& c : st.cameras) put_camera(w, c);

    w.u64(st.history.size());
    for (const auto& row : st.history) {
        w.u32(static_cast<std::uint32_t>(row.iter));
        w.f64(row.psnr);
        w.f64(row.ssim);
        w.u64(row.gauss_count);
        w.f64(row.mask_mean);
        w.f64(row.loss_photo);
        w.f64(row.loss_mlp);
    }
    w.u64(st.events.size());
    for (const auto& e : st.events) {
        w.u32(static_cast<std::uint32_t>(e.iter));
        w.string(e.event);
        w.u64(e.count_before);
        w.u64(e.count_after);
    }
    w.u64(st.rollbacks);
    return w.data();
}

TrainState deserialize_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& context) {
    binary::Reader r(bytes.data(), bytes.size(), context);
    char magic[4];
    if (bytes.size() < 4) throw TruncationError(context + ": file too short for a checkpoint header");
    r.bytes(magic, 4);
    if (!std::equal(magic, magic + 4, kMagic)) throw FormatError(context + ": not a checkpoint (bad magic)");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw VersionError(context + ": checkpoint version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(kCheckpointVersion) + ")");
    TrainState st;
    st.config = parse_config_text(r.string(), context + " (embedded config)");
    const std::uint64_t seed = r.u64();
    if (seed != st.config.seed) throw FormatError(context + ": seed field disagrees with the embedded config");
    const std::uint32_t bits = r.u32();
    st.flags = {(bits & 1u) != 0, (bits & 2u) != 0, (bits & 4u) != 0, (bits & 8u) != 0, (bits & 16u) != 0};
    st.gaussians = get_set(r);
    st.adam_m = get_set(r);
    st.adam_v = get_set(r);
    if (st.adam_m.count() != st.gaussians.count() || st.adam_v.count() != st.gaussians.count())
        throw FormatError(context + ": optimizer moments do not match the Gaussian count");
    st.adam_step = r.u64();

    MaskMLP& m = st.mlp;
    m.dim_in = static_cast<int>(r.u32());
    m.hidden = static_cast<int>(r.u32());
    for (auto* v : {&m.w1, &m.b1, &m.w2, &m.m_w1, &m.v_w1, &m.m_b1, &m.v_b1, &m.m_w2, &m.v_w2}) *v = r.f64_array();
    m.b2 = r.f64();
    m.m_b2 = r.f64();
    m.v_b2 = r.f64();
    m.step = r.u64();
    m.skipped_steps = r.u64();
    const std::size_t hw = static_cast<std::size_t>(m.hidden) * m.dim_in;
    const std::size_t hd = static_cast<std::size_t>(m.hidden);
    if (m.w1.size() != hw || m.m_w1.size() != hw || m.v_w1.size() != hw || m.b1.size() != hd || m.m_b1.size() != hd ||
        m.v_b1.size() != hd || m.w2.size() != hd || m.m_w2.size() != hd || m.v_w2.size() != hd)
        throw FormatError(context + ": mask MLP arrays do not match its declared shape");

    for (auto* v : {&st.stats.grad_sum, &st.stats.count, &st.stats.max_radius, &st.stats.pos_grad_sum})
        *v = r.f64_array();
    const std::size_t n = st.gaussians.count();
    if (st.stats.grad_sum.size() != n || st.stats.count.size() != n || st.stats.max_radius.size() != n ||
        st.stats.pos_grad_sum.size() != 3 * n)
        throw FormatError(context + ": densification statistics do not match the Gaussian count");

    st.iteration = static_cast<int>(r.u32());
    try {
        st.rng = deserialize_rng(r.string());
    } catch (const std::exception&) {
        throw FormatError(context + ": corrupt random generator state");
    }
    st.view_order = r.u32_array();
    st.view_cursor = r.u32();
    st.scene_extent = r.f64();
    for (int c = 0; c < 3; ++c) st.background[c] = r.f64();

    const std::uint64_t ncam = r.u64();
    if (ncam > r.remaining()) throw TruncationError(context + ": camera count exceeds payload");
    for (std::uint64_t i = 0; i < ncam; ++i) st.cameras.push_back(get_camera(r));

    const std::uint64_t nrows = r.u64();
    if (nrows > r.remaining()) throw TruncationError(context + ": history length exceeds payload");
    for (std::uint64_t i = 0; i < nrows; ++i) {
        MetricRow row;
        row.iter = static_cast<int>(r.u32());
        row.psnr = r.f64();
        row.ssim = r.f64();
        row.gauss_count = r.u64();
        row.mask_mean = r.f64();
        row.loss_photo = r.f64();
        row.loss_mlp = r.f64();
        st.history.push_back(row);
    }
    const std::uint64_t nev = r.u64();
    if (nev > r.remaining()) throw TruncationError(context + ": event count exceeds payload");
    for (std::uint64_t i = 0; i < nev; ++i) {
        DensifyEvent e;
        e.iter = static_cast<int>(r.u32());
        e.event = r.string();
        e.count_before = r.u64();
        e.count_after = r.u64();
        st.events.push_back(std::move(e));
    }
    st.rollbacks = r.u64();
    if (r.remaining() != 0) throw FormatError(context + ": " + std::to_string(r.remaining()) + " trailing bytes");
    return st;
}

void save_checkpoint(const TrainState& state, const std::string& path) {
    binary::write_file(path, serialize_checkpoint(state));
}

TrainState load_checkpoint(const std::string& path) { return deserialize_checkpoint(binary::read_file(path), path); }

// ---------------------------------------------------------------- config

namespace {

struct ConfigKey {
    const char* name;
    std::function<bool(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
ConfigKey key_of(const char* name, T TrainConfig::*member) {
    ConfigKey k;
    k.name = name;
    k.set = [member](TrainConfig& c, const std::string& s) {
        if constexpr (std::is_same_v<T, double>) {
            return parse_double(s, c.*member);
        } else {
            long long v = 0;
            if (!parse_int(s, v)) return false;
            if constexpr (std::is_same_v<T, int>) {
                if (v < INT32_MIN || v > INT32_MAX) return false;
            } else {
                if (v < 0) return false;
            }
            c.*member = static_cast<T>(v);
            return true;
        }
    };
    k.get = [member](const TrainConfig& c) {
        if constexpr (std::is_same_v<T, double>)
            return fmt17(c.*member);
        else
            return std::to_string(c.*member);
    };
    return k;
}

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k = {
            key_of("schedule_scale", &TrainConfig::schedule_scale),
            key_of("total_iters", &TrainConfig::total_iters),
            key_of("densify_start_iter", &TrainConfig::densify_start_iter),
            key_of("densify_interval", &TrainConfig::densify_interval),
            key_of("densify_end_iter", &TrainConfig::densify_end_iter),
            key_of("prune_start_iter", &TrainConfig::prune_start_iter),
            key_of("opacity_reset_start_iter", &TrainConfig::opacity_reset_start_iter),
            key_of("opacity_reset_interval", &TrainConfig::opacity_reset_interval),
            key_of("opacity_reset_cap", &TrainConfig::opacity_reset_cap),
            key_of("grad_threshold", &TrainConfig::grad_threshold),
            key_of("percent_dense", &TrainConfig::percent_dense),
            key_of("min_opacity", &TrainConfig::min_opacity),
            key_of("lambda_dssim", &TrainConfig::lambda_dssim),
            key_of("lambda_residual", &TrainConfig::lambda_residual),
            key_of("lambda_cos", &TrainConfig::lambda_cos),
            key_of("lambda_reg", &TrainConfig::lambda_reg),
            key_of("beta_reg", &TrainConfig::beta_reg),
            key_of("tau_u", &TrainConfig::tau_u),
            key_of("tau_l", &TrainConfig::tau_l),
            key_of("mlp_lr", &TrainConfig::mlp_lr),
            key_of("mlp_hidden_dim", &TrainConfig::mlp_hidden_dim),
            key_of("feature_dim", &TrainConfig::feature_dim),
            key_of("patch_size", &TrainConfig::patch_size),
            key_of("low_res_edge", &TrainConfig::low_res_edge),
            key_of("high_res_edge", &TrainConfig::high_res_edge),
            key_of("residual_extra_downsample", &TrainConfig::residual_extra_downsample),
            key_of("dilation_kernel", &TrainConfig::dilation_kernel),
            key_of("position_lr_init", &TrainConfig::position_lr_init),
            key_of("position_lr_final", &TrainConfig::position_lr_final),
            key_of("color_lr", &TrainConfig::color_lr),
            key_of("opacity_lr", &TrainConfig::opacity_lr),
            key_of("scaling_lr", &TrainConfig::scaling_lr),
            key_of("rotation_lr", &TrainConfig::rotation_lr),
            key_of("sh_degree", &TrainConfig::sh_degree),
            key_of("eval_interval", &TrainConfig::eval_interval),
            key_of("alpha_min", &TrainConfig::alpha_min),
            key_of("seed", &TrainConfig::seed),
        };
        ConfigKey bg;
        bg.name = "background_color";
        bg.set = [](TrainConfig& c, const std::string& s) {
            const auto tok = split_ws(s);
            if (tok.size() != 3) return false;
            for (int i = 0; i < 3; ++i)
                if (!parse_double(tok[i], c.background_color[i])) return false;
            return true;
        };
        bg.get = [](const TrainConfig& c) {
            return fmt17(c.background_color[0]) + ' ' + fmt17(c.background_color[1]) + ' ' + fmt17(c.background_color[2]);
        };
        k.push_back(std::move(bg));
        return k;
    }();
    return keys;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

TrainConfig parse_config_text(const std::string& text, const std::string& source) {
    struct Entry {
        std::string value;
        int line;
    };
    std::map<std::string, Entry> entries;
    std::vector<std::string> order;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const auto hash = raw.find('#');
        const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = source + ":" + std::to_string(lineno);
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(where + ": missing key");
        const auto& keys = config_keys();
        if (std::none_of(keys.begin(), keys.end(), [&](const ConfigKey& k) { return key == k.name; }))
            throw ConfigError(where + ": unknown key '" + key + "'");
        if (auto it = entries.find(key); it != entries.end())
            throw ConfigError(source + ": duplicate key '" + key + "' on lines " + std::to_string(it->second.line) +
                              " and " + std::to_string(lineno));
        entries.emplace(key, Entry{value, lineno});
        order.push_back(key);
    }

    TrainConfig cfg;
    if (auto it = entries.find("schedule_scale"); it != entries.end()) {
        double s = 0;
        if (!parse_double(it->second.value, s) || !(s > 0))
            throw ConfigError(source + ":" + std::to_string(it->second.line) + ": invalid value '" + it->second.value +
                              "' for schedule_scale");
        cfg = TrainConfig::defaults(s);
    }
    for (const auto& k : config_keys()) {
        auto it = entries.find(k.name);
        if (it == entries.end()) continue;
        if (!k.set(cfg, it->second.value))
            throw ConfigError(source + ":" + std::to_string(it->second.line) + ": invalid value '" + it->second.value +
                              "' for " + k.name);
    }
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
    }
    return cfg;
}

TrainConfig parse_config(const std::string& path) {
    if (!fs::exists(path)) throw IoError(path + ": config file not found");
    return parse_config_text(read_text_file(path), path);
}

std::string format_config(const TrainConfig& cfg) {
    std::string out;
    for (const auto& k : config_keys()) out += std::string(k.name) + " = " + k.get(cfg) + "\n";
    return out;
}

}  // namespace rsplat
