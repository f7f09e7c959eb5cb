#include "rsplat/trainer.hpp"

#include "rsplat/io.hpp"
#include "rsplat/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

namespace rsplat {

AblationFlags AblationFlags::full() { return {true, true, true, true, true}; }

AblationFlags AblationFlags::parse(const std::string& list) {
    AblationFlags f;
    std::stringstream ss(list);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok.erase(0, tok.find_first_not_of(" \t"));
        tok.erase(tok.find_last_not_of(" \t") + 1);
        if (tok.empty()) continue;
        if (tok == "mask") f.enable_mask = true;
        else if (tok == "dg") f.enable_delayed_growth = true;
        else if (tok == "mb") f.enable_bootstrapping = true;
        else if (tok == "reg") f.enable_reg = true;
        else if (tok == "densify") f.enable_densification = true;
        else throw ConfigError("unknown flag '" + tok + "' (expected mask, dg, mb, reg, densify)");
    }
    return f;
}

std::string AblationFlags::to_string() const {
    std::string s;
    auto add = [&](bool on, const char* name) {
        if (!on) return;
        if (!s.empty()) s += ',';
        s += name;
    };
    add(enable_mask, "mask");
    add(enable_delayed_growth, "dg");
    add(enable_bootstrapping, "mb");
    add(enable_reg, "reg");
    add(enable_densification, "densify");
    return s;
}

GrowthSchedule effective_schedule(const TrainConfig& cfg, const AblationFlags& flags) {
    if (!flags.enable_densification) return GrowthSchedule::disabled();
    return flags.enable_delayed_growth ? GrowthSchedule::from_config(cfg) : GrowthSchedule::vanilla(cfg);
}

FeatureLevel supervision_scale(int iteration, const TrainConfig& cfg, const AblationFlags& flags) {
    if (!flags.enable_bootstrapping) return FeatureLevel::high;
    const int start = flags.enable_delayed_growth ? cfg.densify_start_iter : cfg.vanilla_densify_start();
    return iteration < start ? FeatureLevel::low : FeatureLevel::high;
}

namespace {

RenderSettings render_settings(const TrainConfig& cfg, const RuntimeOptions& rt) {
    RenderSettings rs;
    rs.alpha_min = cfg.alpha_min;
    rs.sh_degree = cfg.sh_degree;
    rs.threads = rt.threads;
    return rs;
}

std::pair<int, int> low_size(int w, int h, int edge) {
    const double s = static_cast<double>(edge) / std::max(w, h);
    return {std::max(1, static_cast<int>(std::lround(w * s))), std::max(1, static_cast<int>(std::lround(h * s)))};
}

bool all_finite(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

bool grads_finite(const GaussianGrads& g) {
    bool ok = true;
    g.for_each_group([&](const char*, const std::vector<double>& v, int) { ok = ok && all_finite(v); });
    return ok;
}

bool mlp_grads_finite(const MaskMLPGrads& g) {
    return all_finite(g.w1) && all_finite(g.b1) && all_finite(g.w2) && std::isfinite(g.b2);
}

double position_lr(const TrainConfig& cfg, int step, double extent) {
    const double t = cfg.total_iters > 0 ? std::clamp(static_cast<double>(step) / cfg.total_iters, 0.0, 1.0) : 1.0;
    return extent * std::exp((1 - t) * std::log(cfg.position_lr_init) + t * std::log(cfg.position_lr_final));
}

/// Adam over Gaussians that received any gradient this step.
void gaussian_adam_step(TrainState& st, const GaussianGrads& grads, int step) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-15;
    const TrainConfig& c = st.config;
    const std::size_t n = st.gaussians.count();
    std::vector<std::uint8_t> touched(n, 0);
    grads.for_each_group([&](const char*, const std::vector<double>& v, int k) {
        for (std::size_t i = 0; i < n; ++i)
            for (int j = 0; j < k; ++j)
                if (v[i * k + j] != 0.0) touched[i] = 1;
    });
    ++st.adam_step;
    const double t = static_cast<double>(st.adam_step);
    const double bc1 = 1 - std::pow(b1, t), bc2 = 1 - std::pow(b2, t);
    const double lrs[6] = {position_lr(c, step, st.scene_extent), c.scaling_lr, c.rotation_lr, c.opacity_lr,
                           c.color_lr, c.color_lr / 20.0};

    std::vector<double>* params[6];
    std::vector<double>* ms[6];
    std::vector<double>* vs[6];
    const std::vector<double>* gs[6];
    int widths[6];
    int g = 0;
    st.gaussians.for_each_group([&](const char*, std::vector<double>& v, int k) {
        params[g] = &v;
        widths[g++] = k;
    });
    g = 0;
    st.adam_m.for_each_group([&](const char*, std::vector<double>& v, int) { ms[g++] = &v; });
    g = 0;
    st.adam_v.for_each_group([&](const char*, std::vector<double>& v, int) { vs[g++] = &v; });
    g = 0;
    grads.for_each_group([&](const char*, const std::vector<double>& v, int) { gs[g++] = &v; });

    for (int grp = 0; grp < 6; ++grp) {
        const int k = widths[grp];
        for (std::size_t i = 0; i < n; ++i) {
            if (!touched[i]) continue;
            for (int j = 0; j < k; ++j) {
                const std::size_t idx = i * k + j;
                const double gv = (*gs[grp])[idx];
                double& m = (*ms[grp])[idx];
                double& v = (*vs[grp])[idx];
                m = b1 * m + (1 - b1) * gv;
                v = b2 * v + (1 - b2) * gv * gv;
                (*params[grp])[idx] -= lrs[grp] * (m / bc1) / (std::sqrt(v / bc2) + eps);
            }
        }
    }
}

/// Carries moments over for surviving Gaussians; new ones start at zero.
GaussianSet remap_moments(const GaussianSet& old, const std::vector<std::int64_t>& origin) {
    GaussianSet out;
    out.reserve(origin.size());
    const GaussianSet zero = [] {
        GaussianSet z;
        z.resize(1);
        return z.zeros_like();
    }();
    for (const auto o : origin) {
        if (o >= 0)
            out.append_from(old, static_cast<std::size_t>(o));
        else
            out.append_from(zero, 0);
    }
    return out;
}

std::size_t next_view(TrainState& st) {
    if (st.view_cursor >= st.view_order.size()) {
        shuffle(st.view_order, st.rng);
        st.view_cursor = 0;
    }
    return st.view_order[st.view_cursor++];
}

}  // namespace

std::vector<PreparedView> prepare_views(const DatasetBundle& data, const TrainConfig& cfg) {
    if (data.train.empty()) throw ConfigError("dataset has no training views");
    if (cfg.feature_dim != kBuiltinFeatureDim)
        throw ConfigError("feature_dim must be " + std::to_string(kBuiltinFeatureDim) + " for the built-in extractor");
    std::vector<PreparedView> out;
    out.reserve(data.train.size());
    for (const auto& v : data.train) {
        PreparedView p;
        p.camera_id = v.camera_id;
        p.camera = v.camera;
        p.image = v.image;
        p.gt_mask = v.gt_mask;
        const auto [lw, lh] = low_size(v.image.width, v.image.height, cfg.low_res_edge);
        p.low_camera = v.camera.resized(lw, lh);
        p.low_image = resample_bilinear(v.image, lw, lh);
        p.features_low = extract_features(p.low_image, FeatureLevel::low, cfg);
        p.features_high = extract_features(v.image, FeatureLevel::high, cfg);
        out.push_back(std::move(p));
    }
    return out;
}

GaussianSet init_gaussians(const std::vector<InitPoint>& points) {
    if (points.empty()) throw ConfigError("initial point set is empty");
    GaussianSet g;
    const std::size_t n = points.size();
    g.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double best[3] = {INFINITY, INFINITY, INFINITY};
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double d = (points[i].position - points[j].position).squaredNorm();
            for (double& b : best)
                if (d < b) std::swap(d, b);
        }
        double mean = 0;
        int cnt = 0;
        for (double b : best)
            if (std::isfinite(b)) {
                mean += b;
                ++cnt;
            }
        mean = cnt ? mean / cnt : 1e-2;
        const double log_s = std::log(std::sqrt(std::max(mean, 1e-7)));
        g.set_position(i, points[i].position);
        g.set_log_scale(i, Vec3::Constant(log_s));
        g.rotations[4 * i] = 1.0;
        g.opacity_logits[i] = logit(0.1);
        const auto dc = rgb_to_sh_dc(points[i].color);
        for (int c = 0; c < 3; ++c) g.sh_dc[3 * i + c] = dc[c];
    }
    return g;
}

TrainState init_state(const DatasetBundle& data, const TrainConfig& cfg, const AblationFlags& flags) {
    cfg.validate();
    if (data.train.empty()) throw ConfigError("dataset has no training views");
    TrainState st;
    st.config = cfg;
    st.flags = flags;
    st.gaussians = init_gaussians(data.points);
    st.adam_m = st.gaussians.zeros_like();
    st.adam_v = st.gaussians.zeros_like();
    st.mlp = MaskMLP::create(cfg.feature_dim, cfg.mlp_hidden_dim, cfg.seed ^ 0x6d61736bULL);
    st.stats.reset(st.gaussians.count());
    st.rng = Rng(cfg.seed);
    st.view_order.resize(data.train.size());
    for (std::size_t i = 0; i < data.train.size(); ++i) st.view_order[i] = static_cast<std::uint32_t>(i);
    shuffle(st.view_order, st.rng);
    st.scene_extent = data.scene_extent();
    st.background = cfg.background_color;
    for (const auto& v : data.train) st.cameras.push_back(v.camera);
    for (const auto& v : data.test) st.cameras.push_back(v.camera);
    return st;
}

MaskStep compute_mask_step(const TrainState& st, const PreparedView& view, const ImageBuffer& full_render,
                           int iteration, const RuntimeOptions& rt) {
    const TrainConfig& c = st.config;
    MaskStep out;
    const FeatureLevel level = supervision_scale(iteration, c, st.flags);

    ImageBuffer render_level, gt_level, res_render, res_gt;
    const FeatureMap* f_gt = nullptr;
    if (level == FeatureLevel::low) {
        render_level = render(st.gaussians, view.low_camera, st.background, render_settings(c, rt)).image.clamped();
        gt_level = view.low_image;
        const int k = c.residual_extra_downsample;
        res_render = k > 1 ? downsample_area(render_level, k) : render_level;
        res_gt = k > 1 ? downsample_area(gt_level, k) : gt_level;
        f_gt = &view.features_low;
    } else {
        render_level = full_render.clamped();
        gt_level = view.image;
        res_render = render_level;
        res_gt = gt_level;
        f_gt = &view.features_high;
    }

    const MaskForward fwd = predict_mask(st.mlp, *f_gt);
    const TransientMask& m = fwd.mask;

    const ResidualBounds bounds = residual_bounds(residual_map(res_render, res_gt), c.tau_u, c.tau_l);
    const TransientMask m_up = resample_bilinear(m, res_render.width, res_render.height);
    const MaskLoss lr = loss_residual(m_up, bounds);
    const TransientMask d_res = resample_bilinear_adjoint(lr.grad, m.width, m.height);

    const FeatureMap f_render = extract_features(render_level, level, c);
    const MaskLoss lc = loss_cos(m, cosine_mask(*f_gt, f_render));

    TransientMask d_m(m.width, m.height, 0.0);
    double reg_value = 0;
    MaskLoss lg;
    if (st.flags.enable_reg) {
        lg = loss_reg(m, iteration, c.beta_reg);
        reg_value = lg.value;
    }
    for (std::size_t p = 0; p < d_m.values.size(); ++p) {
        d_m.values[p] = c.lambda_residual * d_res.values[p] + c.lambda_cos * lc.grad.values[p];
        if (st.flags.enable_reg) d_m.values[p] += c.lambda_reg * lg.grad.values[p];
    }
    out.loss = c.lambda_residual * lr.value + c.lambda_cos * lc.value + (st.flags.enable_reg ? c.lambda_reg * reg_value : 0.0);
    out.grads = predict_mask_backward(st.mlp, *f_gt, fwd, d_m);
    out.finite = std::isfinite(out.loss) && mlp_grads_finite(out.grads);
    out.pixel_mask = refine_mask(m, view.image.width, view.image.height, c.dilation_kernel);
    return out;
}

StepLog train_step(TrainState& st, const PreparedView& view, const RuntimeOptions& rt) {
    const TrainConfig& c = st.config;
    const int step = st.iteration + 1;
    StepLog log;
    log.iter = step;
    log.camera_id = view.camera_id;
    log.level = supervision_scale(step, c, st.flags);

    const RenderSettings rs = render_settings(c, rt);
    const SceneRender full = render(st.gaussians, view.camera, st.background, rs);

    MaskStep ms;
    if (st.flags.enable_mask) {
        ms = compute_mask_step(st, view, full.image, step, rt);
    } else {
        ms.pixel_mask = TransientMask(view.image.width, view.image.height, 1.0);
    }

    const PhotometricLoss pl = photometric_loss(full.image, view.image, ms.pixel_mask, c.lambda_dssim);
    TransientMask active(ms.pixel_mask.width, ms.pixel_mask.height, 1.0);
    for (std::size_t p = 0; p < active.values.size(); ++p) active.values[p] = ms.pixel_mask.values[p] > 0 ? 1.0 : 0.0;
    const GaussianBackward bw = rasterize_backward(st.gaussians, full, pl.d_render, active);

    log.loss_photo = pl.value;
    log.loss_mlp = ms.loss;
    log.mask_mean = ms.pixel_mask.mean();

    const bool finite = std::isfinite(pl.value) && grads_finite(bw.grads) && ms.finite;
    if (!finite) {
        ++st.rollbacks;
        log.rolled_back = true;
        st.iteration = step;
        return log;
    }

    if (st.flags.enable_mask) {
        AdamParams ap;
        ap.lr = c.mlp_lr;
        mlp_adam_step(st.mlp, ms.grads, ap);
    }
    gaussian_adam_step(st, bw.grads, step);

    const double ndc = 0.5 * std::max(view.image.width, view.image.height);
    std::vector<double> norms(bw.mean2d_grad_norm.size());
    for (std::size_t i = 0; i < norms.size(); ++i) norms[i] = bw.mean2d_grad_norm[i] * ndc;
    accumulate_stats(st.stats, norms, bw.visible, bw.radius, bw.grads.positions);

    const GrowthSchedule sched = effective_schedule(c, st.flags);
    DensifyParams dp = DensifyParams::from_config(c, st.scene_extent, std::max(view.image.width, view.image.height));
    log.densify = densify_and_prune(st.gaussians, st.stats, step, sched, dp, st.rng);
    if (log.densify.ran) {
        st.adam_m = remap_moments(st.adam_m, log.densify.origin);
        st.adam_v = remap_moments(st.adam_v, log.densify.origin);
        st.events.push_back({step, "densify", log.densify.count_before, log.densify.count_after});
    }
    if (opacity_reset(st.gaussians, step, sched, c.opacity_reset_cap)) {
        std::fill(st.adam_m.opacity_logits.begin(), st.adam_m.opacity_logits.end(), 0.0);
        std::fill(st.adam_v.opacity_logits.begin(), st.adam_v.opacity_logits.end(), 0.0);
        log.opacity_reset = true;
        st.events.push_back({step, "opacity_reset", st.gaussians.count(), st.gaussians.count()});
    }
    st.iteration = step;
    return log;
}

std::pair<double, double> evaluate_test(const TrainState& st, const DatasetBundle& data, const RuntimeOptions& rt) {
    if (data.test.empty()) return {0.0, 0.0};
    const RenderSettings rs = render_settings(st.config, rt);
    double p = 0, s = 0;
    for (const auto& v : data.test) {
        const ImageBuffer img = render(st.gaussians, v.camera, st.background, rs).image.clamped();
        p += psnr(img, v.image);
        s += ssim(img, v.image).value;
    }
    const double n = static_cast<double>(data.test.size());
    return {p / n, s / n};
}

void run_training(TrainState& st, const DatasetBundle& data, const std::vector<PreparedView>& views,
                  const RuntimeOptions& rt, const std::function<void(const MetricRow&)>& on_row, int stop_at) {
    if (views.size() != st.view_order.size()) throw ShapeError("prepared views do not match the training state");
    auto log_row = [&](const StepLog* s) {
        MetricRow row;
        row.iter = st.iteration;
        std::tie(row.psnr, row.ssim) = evaluate_test(st, data, rt);
        row.gauss_count = st.gaussians.count();
        if (s) {
            row.mask_mean = s->mask_mean;
            row.loss_photo = s->loss_photo;
            row.loss_mlp = s->loss_mlp;
        }
        st.history.push_back(row);
        if (on_row) on_row(row);
    };
    if (st.iteration == 0 && st.history.empty()) log_row(nullptr);
    const int end = stop_at >= 0 ? std::min(stop_at, st.config.total_iters) : st.config.total_iters;
    while (st.iteration < end) {
        const std::size_t vi = next_view(st);
        const StepLog s = train_step(st, views[vi], rt);
        if (st.iteration % st.config.eval_interval == 0 || st.iteration == st.config.total_iters) log_row(&s);
    }
}

std::string format_metrics_csv(const std::vector<MetricRow>& rows) {
    std::string out = "iter,psnr,ssim,gauss_count,mask_mean,loss_photo,loss_mlp\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%zu,%.6f,%.8f,%.8f\n", r.iter, r.psnr, r.ssim, r.gauss_count,
                      r.mask_mean, r.loss_photo, r.loss_mlp);
        out += buf;
    }
    return out;
}

std::string format_events_csv(const std::vector<DensifyEvent>& events) {
    std::string out = "iter,event,count_before,count_after\n";
    char buf[128];
    for (const auto& e : events) {
        std::snprintf(buf, sizeof buf, "%d,%s,%zu,%zu\n", e.iter, e.event.c_str(), e.count_before, e.count_after);
        out += buf;
    }
    return out;
}

TrainState train(const DatasetBundle& data, const TrainConfig& cfg, const AblationFlags& flags,
                 const std::string& out_dir, const RuntimeOptions& rt) {
    TrainState st = init_state(data, cfg, flags);
    const auto views = prepare_views(data, cfg);
    run_training(st, data, views, rt);
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError(out_dir + ": cannot create output directory: " + ec.message());
    write_text_file((fs::path(out_dir) / "train.csv").string(), format_metrics_csv(st.history));
    write_text_file((fs::path(out_dir) / "events.csv").string(), format_events_csv(st.events));
    save_checkpoint(st, (fs::path(out_dir) / "checkpoint.rspl").string());
    return st;
}

}  // namespace rsplat
