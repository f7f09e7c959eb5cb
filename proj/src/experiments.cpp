#include "rsplat/experiments.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

namespace rsplat {

std::vector<NamedFlags> ablation_configs() {
    auto f = AblationFlags::parse;
    return {
        {"3DGS", f("densify")},
        {"3DGS+Mask", f("mask,reg,densify")},
        {"3DGS+Mask+DG", f("mask,reg,dg,densify")},
        {"3DGS+Mask+MB", f("mask,reg,mb,densify")},
        {"Full", f("mask,reg,dg,mb,densify")},
        {"3DGS w/o densification", f("")},
    };
}

const ConfigSummary& AblationReport::get(const std::string& config) const {
    for (const auto& s : summary)
        if (s.config == config) return s;
    throw ConfigError("no ablation summary for '" + config + "'");
}

std::vector<AblationRun> run_ablation_runs(const DatasetBundle& data, const TrainConfig& cfg,
                                           const std::vector<std::uint64_t>& seeds, const RuntimeOptions& rt,
                                           const ProgressFn& progress) {
    if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
    std::vector<AblationRun> runs;
    const auto views = prepare_views(data, cfg);
    for (const auto seed : seeds) {
        for (const auto& nf : ablation_configs()) {
            if (progress) progress(nf.name, seed);
            TrainConfig c = cfg;
            c.seed = seed;
            TrainState st = init_state(data, c, nf.flags);
            run_training(st, data, views, rt);
            AblationRun run;
            run.config = nf.name;
            run.seed = seed;
            EvalOptions eo;
            eo.runtime = rt;
            run.metrics = evaluate_state(st, data, eo);
            run.metrics.config = nf.name;
            run.history = st.history;
            runs.push_back(std::move(run));
        }
    }
    return runs;
}

namespace {

std::string fmt(const char* f, double a, double b) {
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

}  // namespace

AblationReport summarize_ablation(std::vector<AblationRun> runs) {
    AblationReport rep;
    rep.runs = std::move(runs);
    for (const auto& nf : ablation_configs()) {
        std::vector<const AblationRun*> mine;
        for (const auto& r : rep.runs)
            if (r.config == nf.name) mine.push_back(&r);
        if (mine.empty()) continue;
        ConfigSummary s;
        s.config = nf.name;
        auto stat = [&](auto get, double& mean, double& lo, double& hi) {
            mean = 0;
            lo = get(*mine.front());
            hi = lo;
            for (const auto* r : mine) {
                const double v = get(*r);
                mean += v;
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            mean /= static_cast<double>(mine.size());
        };
        stat([](const AblationRun& r) { return r.metrics.psnr; }, s.psnr_mean, s.psnr_min, s.psnr_max);
        stat([](const AblationRun& r) { return r.metrics.ssim; }, s.ssim_mean, s.ssim_min, s.ssim_max);
        stat([](const AblationRun& r) { return r.metrics.mask_iou; }, s.iou_mean, s.iou_min, s.iou_max);
        rep.summary.push_back(s);
    }

    auto has = [&](const char* n) {
        return std::any_of(rep.summary.begin(), rep.summary.end(), [&](const ConfigSummary& s) { return s.config == n; });
    };
    auto ge = [&](const char* name, const char* a, const char* b, double margin) {
        if (!has(a) || !has(b)) return;
        const double pa = rep.get(a).psnr_mean, pb = rep.get(b).psnr_mean;
        rep.checks.push_back({name, pa >= pb + margin, fmt("%.3f dB vs %.3f dB", pa, pb)});
    };
    ge("Full >= 3DGS+Mask+DG", "Full", "3DGS+Mask+DG", 0.0);
    ge("Full >= 3DGS+Mask+MB", "Full", "3DGS+Mask+MB", 0.0);
    for (const char* v : {"3DGS+Mask", "3DGS+Mask+DG", "3DGS+Mask+MB", "Full"}) {
        const std::string name = std::string(v) + " >= 3DGS + 1.5 dB";
        if (!has(v) || !has("3DGS")) continue;
        const double pa = rep.get(v).psnr_mean, pb = rep.get("3DGS").psnr_mean;
        rep.checks.push_back({name, pa >= pb + 1.5, fmt("%.3f dB vs %.3f dB", pa, pb)});
    }
    if (has("Full") && has("3DGS+Mask+DG")) {
        const double a = rep.get("Full").iou_mean, b = rep.get("3DGS+Mask+DG").iou_mean;
        rep.checks.push_back({"Full mask IoU >= 3DGS+Mask+DG mask IoU", a >= b, fmt("%.4f vs %.4f", a, b)});
    }
    ge("3DGS w/o densification >= 3DGS + 1.0 dB", "3DGS w/o densification", "3DGS", 1.0);
    return rep;
}

AblationReport run_ablation_suite(const DatasetBundle& data, const TrainConfig& cfg,
                                  const std::vector<std::uint64_t>& seeds, const RuntimeOptions& rt,
                                  const ProgressFn& progress) {
    return summarize_ablation(run_ablation_runs(data, cfg, seeds, rt, progress));
}

std::string format_ablation_csv(const AblationReport& rep) {
    std::string out = metrics_csv_header();
    for (const auto& r : rep.runs) out += metrics_csv_row(r.metrics);
    char buf[256];
    for (const auto& s : rep.summary) {
        std::snprintf(buf, sizeof buf, "%s,mean,%.6f,%.6f,%.6f\n", s.config.c_str(), s.psnr_mean, s.ssim_mean,
                      s.iou_mean);
        out += buf;
        std::snprintf(buf, sizeof buf, "%s,range,%.6f,%.6f,%.6f\n", s.config.c_str(), s.psnr_max - s.psnr_min,
                      s.ssim_max - s.ssim_min, s.iou_max - s.iou_min);
        out += buf;
    }
    for (const auto& c : rep.checks) out += "# check " + c.name + ": " + (c.pass ? "PASS" : "FAIL") + " (" + c.detail + ")\n";
    return out;
}

TrainConfig config_for_start(const TrainConfig& cfg, int start) {
    TrainConfig c = cfg;
    const int growth = cfg.densify_end_iter - cfg.densify_start_iter;
    const int reset_offset = cfg.opacity_reset_start_iter - cfg.densify_start_iter;
    c.densify_start_iter = start;
    c.densify_end_iter = std::min(cfg.total_iters, start + growth);
    c.prune_start_iter = start;
    c.opacity_reset_start_iter = std::min(cfg.total_iters, start + reset_offset);
    c.validate();
    return c;
}

std::vector<SweepTrace> sweep_densify_start(const DatasetBundle& data, const TrainConfig& cfg,
                                            const std::vector<int>& starts, bool with_mask, const RuntimeOptions& rt,
                                            const ProgressFn& progress) {
    if (starts.empty()) throw ConfigError("sweep needs at least one start iteration");
    const AblationFlags flags = AblationFlags::parse(with_mask ? "mask,reg,dg,densify" : "dg,densify");
    const auto views = prepare_views(data, cfg);
    std::vector<SweepTrace> traces;
    for (const int start : starts) {
        if (progress) progress("start=" + std::to_string(start) + (with_mask ? " mask" : " nomask"), cfg.seed);
        TrainState st = init_state(data, config_for_start(cfg, start), flags);
        run_training(st, data, views, rt);
        SweepTrace t;
        t.start = start;
        t.with_mask = with_mask;
        for (const auto& row : st.history) t.psnr.emplace_back(row.iter, row.psnr);
        traces.push_back(std::move(t));
    }
    return traces;
}

std::string format_sweep_csv(const std::vector<SweepTrace>& traces) {
    std::string out = "iter,start,psnr,mask\n";
    char buf[128];
    for (const auto& t : traces)
        for (const auto& [it, p] : t.psnr) {
            std::snprintf(buf, sizeof buf, "%d,%d,%.6f,%d\n", it, t.start, p, t.with_mask ? 1 : 0);
            out += buf;
        }
    return out;
}

}  // namespace rsplat
