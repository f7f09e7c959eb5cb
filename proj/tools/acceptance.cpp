// Acceptance runner: one PASS/FAIL line per headline criterion.
//
// Without --full the three end-to-end experiments (hours of CPU time) are
// reported as SKIP and everything else runs in well under a minute.

#include "rsplat/eval.hpp"
#include "rsplat/experiments.hpp"
#include "rsplat/features.hpp"
#include "rsplat/io.hpp"
#include "rsplat/losses.hpp"
#include "rsplat/random.hpp"
#include "rsplat/renderer.hpp"
#include "rsplat/scenegen.hpp"
#include "rsplat/trainer.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace rsplat;

namespace {

enum class Status { pass, fail, skip };

struct Outcome {
    Status status = Status::fail;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string format(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Outcome verdict(bool ok, std::string detail) { return {ok ? Status::pass : Status::fail, std::move(detail)}; }

Camera front_camera(int w, int h, double focal) {
    Camera c;
    c.fx = c.fy = focal;
    c.cx = w / 2.0;
    c.cy = h / 2.0;
    c.width = w;
    c.height = h;
    return c;
}

// ---------------------------------------------------------------- gradients

GaussianSet random_gaussians(std::size_t n, Rng& rng) {
    GaussianSet g;
    g.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double depth = 2.0 + 0.25 * static_cast<double>(i) + uniform(rng, -0.05, 0.05);
        g.set_position(i, {uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), depth});
        g.set_log_scale(i, {std::log(uniform(rng, 0.15, 0.4)), std::log(uniform(rng, 0.15, 0.4)),
                            std::log(uniform(rng, 0.15, 0.4))});
        const Vec4 q(1.0 + uniform(rng, -0.3, 0.3), uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5),
                     uniform(rng, -0.5, 0.5));
        for (int c = 0; c < 4; ++c) g.rotations[4 * i + c] = q[c];
        g.opacity_logits[i] = logit(uniform(rng, 0.1, 0.5));
        for (int c = 0; c < 3; ++c) g.sh_dc[3 * i + c] = uniform(rng, 0.2, 1.2);
        for (int c = 0; c < 9; ++c) g.sh_rest[9 * i + c] = uniform(rng, -0.2, 0.2);
    }
    return g;
}

Outcome gradient_oracle() {
    const auto t0 = Clock::now();
    constexpr double kStep = 1e-5;
    constexpr int kScenes = 24, kSize = 16;
    Rng rng(2024);
    double worst = 0;
    std::size_t checked = 0;
    for (int scene = 0; scene < kScenes; ++scene) {
        GaussianSet g = random_gaussians(1 + uniform_index(rng, 10), rng);
        const Camera cam = front_camera(kSize, kSize, uniform(rng, 12, 20));
        const Vec3 bg(uniform01(rng), uniform01(rng), uniform01(rng));
        RenderSettings rs;
        rs.alpha_min = 0.0;
        std::vector<double> d(kSize * kSize * 3);
        for (double& v : d) v = uniform(rng, -1, 1);
        auto loss = [&] {
            const auto img = render(g, cam, bg, rs).image;
            double s = 0;
            for (std::size_t i = 0; i < d.size(); ++i) s += d[i] * img.values[i];
            return s;
        };
        const auto back = rasterize_backward(g, render(g, cam, bg, rs), d, TransientMask(kSize, kSize, 1.0));
        GaussianSet analytic = back.grads;
        std::vector<std::vector<double>*> params;
        std::vector<const std::vector<double>*> grads;
        g.for_each_group([&](const char*, std::vector<double>& v, std::size_t) { params.push_back(&v); });
        analytic.for_each_group([&](const char*, const std::vector<double>& v, std::size_t) { grads.push_back(&v); });
        for (std::size_t gi = 0; gi < params.size(); ++gi)
            for (std::size_t j = 0; j < params[gi]->size(); ++j) {
                double& x = (*params[gi])[j];
                const double x0 = x;
                x = x0 + kStep;
                const double lp = loss();
                x = x0 - kStep;
                const double lm = loss();
                x = x0;
                const double numeric = (lp - lm) / (2 * kStep), a = (*grads[gi])[j];
                worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6}));
                ++checked;
            }
    }
    const double secs = seconds_since(t0);
    return verdict(worst < 1e-4 && secs < 60.0,
                   format("%d scenes, %zu gradients, worst relative error %.2e, %.1f s", kScenes, checked, worst, secs));
}

// ----------------------------------------------------------------- blending

Splat2D splat(double x, double y, double var, double depth, double opacity, const Vec3& color, int id) {
    Splat2D s;
    s.mean2d = {x, y};
    s.cov2d = Mat2::Identity() * var;
    s.depth = depth;
    s.opacity = opacity;
    s.color = color;
    s.source_index = id;
    return s;
}

Outcome blending() {
    double worst = 0;
    auto track = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };

    const Vec3 bg0(0.25, 0.5, 0.75);
    const auto empty = rasterize({}, front_camera(5, 4, 10), bg0);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 5; ++x)
            for (int c = 0; c < 3; ++c) track(empty.image.at(x, y, c), bg0[c]);

    const Vec3 bg1(0.1, 0.2, 0.3), col(0.9, 0.6, 0.3);
    const auto single = rasterize({splat(3.5, 4.5, 2.0, 1.0, 0.999, col, 0)}, front_camera(8, 8, 10), bg1);
    for (int c = 0; c < 3; ++c) track(single.image.at(3, 4, c), kAlphaCap * col[c] + (1 - kAlphaCap) * bg1[c]);

    const Vec3 bg2(0.2, 0.4, 0.6), near(1.0, 0.0, 0.5), far(0.0, 1.0, 0.25);
    const auto two = rasterize({splat(2.5, 2.5, 1.0, 5.0, 0.5, far, 1), splat(2.5, 2.5, 1.0, 2.0, 0.5, near, 0)},
                               front_camera(8, 8, 10), bg2);
    for (int c = 0; c < 3; ++c) track(two.image.at(2, 2, c), 0.5 * near[c] + 0.25 * far[c] + 0.25 * bg2[c]);

    return verdict(worst <= 1e-12, format("empty / capped single / two half-alpha, max error %.1e", worst));
}

// ------------------------------------------------------------------- losses

double naive_ssim(const ImageBuffer& a, const ImageBuffer& b) {
    double win[11][11], total = 0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
            win[i][j] = std::exp(-((i - 5.0) * (i - 5.0) + (j - 5.0) * (j - 5.0)) / (2 * 1.5 * 1.5));
            total += win[i][j];
        }
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double sum = 0;
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double ma = 0, mb = 0, eaa = 0, ebb = 0, eab = 0;
                for (int i = 0; i < 11; ++i)
                    for (int j = 0; j < 11; ++j) {
                        const int yy = y + i - 5, xx = x + j - 5;
                        if (yy < 0 || xx < 0 || yy >= a.height || xx >= a.width) continue;
                        const double w = win[i][j] / total, va = a.at(xx, yy, c), vb = b.at(xx, yy, c);
                        ma += w * va;
                        mb += w * vb;
                        eaa += w * va * va;
                        ebb += w * vb * vb;
                        eab += w * va * vb;
                    }
                const double saa = eaa - ma * ma, sbb = ebb - mb * mb, sab = eab - ma * mb;
                sum += ((2 * ma * mb + c1) * (2 * sab + c2)) / ((ma * ma + mb * mb + c1) * (saa + sbb + c2));
            }
    return sum / (3.0 * a.width * a.height);
}

Outcome loss_suite() {
    std::vector<std::string> failures;

    // Cosine similarities 1, 0.5 and 0.75 against a fixed unit direction.
    FeatureMap gt, rd;
    gt.grid_h = rd.grid_h = 1;
    gt.grid_w = rd.grid_w = 3;
    gt.dim = rd.dim = 2;
    gt.values = {1, 0, 1, 0, 1, 0};
    rd.values = {2, 0, 0.5, std::sqrt(0.75), 0.75, std::sqrt(1 - 0.5625)};
    const CosineMap cm = cosine_mask(gt, rd);
    const double want_cos[3] = {1.0, 0.0, 0.5};
    for (int i = 0; i < 3; ++i)
        if (std::abs(cm.values[i] - want_cos[i]) > 1e-12) failures.push_back(format("M_cos[%d]=%.15g", i, cm.values[i]));

    Rng rng(7);
    TransientMask m(9, 7);
    for (double& v : m.values) v = uniform01(rng);
    double mean_abs = 0;
    for (double v : m.values) mean_abs += std::abs(1 - v);
    mean_abs /= static_cast<double>(m.values.size());
    const double beta = 400;
    if (std::abs(loss_reg(m, 0, beta).value - mean_abs) > 1e-12) failures.push_back("L_reg(0)");
    if (std::abs(loss_reg(m, 400, beta).value - std::exp(-1.0) * mean_abs) > 1e-12) failures.push_back("L_reg(beta)");

    int band_cases = 0, band_mismatch = 0;
    const double grid[] = {0.0, 0.25, 0.5, 1.0};
    for (; band_cases < 10000; ++band_cases) {
        const int n = 1 + static_cast<int>(uniform_index(rng, 4));
        TransientMask mm(n, 1);
        ResidualBounds b;
        b.low = TransientMask(n, 1, 0.0);
        b.high = TransientMask(n, 1, 0.0);
        bool inside = true;
        for (int i = 0; i < n; ++i) {
            mm.values[i] = uniform_index(rng, 2) ? grid[uniform_index(rng, 4)] : uniform01(rng);
            const double lo = static_cast<double>(uniform_index(rng, 2));
            const double hi = lo > 0 ? 1.0 : static_cast<double>(uniform_index(rng, 2));
            b.low.values[i] = lo;
            b.high.values[i] = hi;
            inside = inside && lo <= mm.values[i] && mm.values[i] <= hi;
        }
        if ((loss_residual(mm, b).value == 0.0) != inside) ++band_mismatch;
    }
    if (band_mismatch) failures.push_back(format("zero band: %d of %d cases wrong", band_mismatch, band_cases));

    double ssim_err = 0;
    for (const auto& [w, h] : {std::pair{16, 16}, std::pair{23, 17}, std::pair{40, 31}}) {
        ImageBuffer a(w, h), b(w, h);
        for (double& v : a.values) v = uniform01(rng);
        for (std::size_t i = 0; i < a.values.size(); ++i)
            b.values[i] = std::clamp(a.values[i] + uniform(rng, -0.3, 0.3), 0.0, 1.0);
        ssim_err = std::max(ssim_err, std::abs(ssim(a, b).value - naive_ssim(a, b)));
    }
    if (ssim_err > 1e-10) failures.push_back(format("SSIM error %.1e", ssim_err));

    std::string detail = format("M_cos 1/0.5/0.75 -> 1/0/0.5, L_reg at 0 and beta, %d band cases, SSIM error %.1e",
                                band_cases, ssim_err);
    for (const auto& f : failures) detail += "; " + f;
    return verdict(failures.empty(), detail);
}

// ----------------------------------------------------------- training runs

SceneParams small_scene() {
    SceneParams sp;
    sp.num_static = 300;
    sp.train_views = 10;
    sp.test_views = 2;
    sp.width = sp.height = 64;
    return sp;
}

/// Every logged row before the growth start must carry the initial count.
std::string growth_violation(const std::vector<MetricRow>& history, int densify_start) {
    for (const auto& r : history)
        if (r.iter < densify_start && r.gauss_count != history.front().gauss_count)
            return format("iter %d has %zu Gaussians, iter 0 had %zu", r.iter, r.gauss_count,
                          history.front().gauss_count);
    return {};
}

Outcome delayed_growth_quick(const DatasetBundle& data) {
    TrainConfig cfg = TrainConfig::defaults(0.02);
    cfg.eval_interval = 20;
    TrainState st = init_state(data, cfg, AblationFlags::full());
    run_training(st, data, prepare_views(data, cfg));
    const std::string bad = growth_violation(st.history, cfg.densify_start_iter);
    int before = 0;
    for (const auto& r : st.history) before += r.iter < cfg.densify_start_iter;
    const std::size_t initial = st.history.front().gauss_count, final_count = st.history.back().gauss_count;
    const bool grew = final_count != initial;
    return verdict(bad.empty() && grew,
                   bad.empty() ? format("%d-step Full run: %d rows before step %d at %zu Gaussians, %zu at the end", cfg.total_iters,
                                        before, cfg.densify_start_iter, initial, final_count)
                               : bad);
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

Outcome determinism(const DatasetBundle& data, const fs::path& work) {
    TrainConfig cfg = TrainConfig::defaults(0.01);
    cfg.eval_interval = 20;
    const AblationFlags flags = AblationFlags::full();
    train(data, cfg, flags, (work / "run_a").string());
    train(data, cfg, flags, (work / "run_b").string());
    bool same = true;
    std::size_t bytes = 0;
    for (const char* name : {"train.csv", "events.csv", "checkpoint.rspl"}) {
        const std::string a = read_file(work / "run_a" / name), b = read_file(work / "run_b" / name);
        same = same && !a.empty() && a == b;
        bytes += a.size();
    }
    return verdict(same, format("two %d-step runs, train.csv / events.csv / checkpoint %s (%zu bytes)", cfg.total_iters,
                                same ? "byte-identical" : "differ", bytes));
}

// ------------------------------------------------------ full experiments

struct FullResults {
    std::vector<AblationRun> runs;
    std::map<std::pair<std::string, std::uint64_t>, double> seconds;
    std::vector<SweepTrace> sweep;
};

FullResults run_full(const std::vector<std::uint64_t>& seeds, const RuntimeOptions& rt, const fs::path& out) {
    FullResults res;
    const TrainConfig base = TrainConfig::defaults();
    for (const auto seed : seeds) {
        auto t_gen = Clock::now();
        const auto data = render_dataset(generate_scene(seed, SceneParams{}));
        std::fprintf(stderr, "[scene %llu] generated in %.1f s, occlusion %.4f\n",
                     static_cast<unsigned long long>(seed), seconds_since(t_gen), data.measured_occlusion());
        TrainConfig cfg = base;
        cfg.seed = seed;
        std::string current;
        Clock::time_point started;
        auto close_run = [&] {
            if (current.empty()) return;
            const double s = seconds_since(started);
            res.seconds[{current, seed}] = s;
            std::fprintf(stderr, "[scene %llu] %s finished in %.1f s\n", static_cast<unsigned long long>(seed),
                         current.c_str(), s);
        };
        auto runs = run_ablation_runs(data, cfg, {seed}, rt, [&](const std::string& name, std::uint64_t) {
            close_run();
            current = name;
            started = Clock::now();
        });
        close_run();
        for (auto& r : runs) {
            std::fprintf(stderr, "[scene %llu] %s: psnr %.3f iou %.4f\n", static_cast<unsigned long long>(seed),
                         r.config.c_str(), r.metrics.psnr, r.metrics.mask_iou);
            res.runs.push_back(std::move(r));
        }
        write_text_file((out / "ablation_runs.csv").string(), format_ablation_csv(summarize_ablation(res.runs)));

        if (seed == seeds.front()) {
            for (const bool with_mask : {false, true}) {
                auto traces = sweep_densify_start(data, cfg, {500, 2000, 4000}, with_mask, rt,
                                                  [](const std::string& what, std::uint64_t) {
                                                      std::fprintf(stderr, "[sweep] %s\n", what.c_str());
                                                  });
                res.sweep.insert(res.sweep.end(), traces.begin(), traces.end());
            }
            write_text_file((out / "sweep.csv").string(), format_sweep_csv(res.sweep));
        }
    }
    return res;
}

Outcome fig2(const FullResults& res, const std::vector<std::uint64_t>& seeds) {
    double with = 0, without = 0, slowest = 0;
    for (const auto& r : res.runs) {
        if (r.config == "3DGS") with += r.metrics.psnr;
        if (r.config == "3DGS w/o densification") without += r.metrics.psnr;
    }
    for (const auto& [key, s] : res.seconds)
        if (key.first == "3DGS" || key.first == "3DGS w/o densification") slowest = std::max(slowest, s);
    const double n = static_cast<double>(seeds.size());
    with /= n;
    without /= n;
    return verdict(without >= with + 1.0 && slowest <= 900.0,
                   format("no growth %.3f dB vs growth %.3f dB (diff %+.3f, need >= +1.0) over %zu seeds; slowest run %.0f s",
                          without, with, without - with, seeds.size(), slowest));
}

Outcome fig4(const FullResults& res) {
    std::map<int, double> off, on;
    for (const auto& t : res.sweep) (t.with_mask ? on : off)[t.start] = t.final_psnr();
    bool ok = off.size() == 3 && on.size() == 3;
    std::string detail = "final PSNR by start (no mask / mask):";
    double prev = -1e9;
    for (const auto& [start, p] : off) {
        ok = ok && p >= prev - 0.2 && on[start] > p;
        prev = std::max(prev, p);
        detail += format(" %d: %.3f / %.3f;", start, p, on[start]);
    }
    return verdict(ok, detail);
}

Outcome table3(const FullResults& res) {
    const AblationReport rep = summarize_ablation(res.runs);
    bool ok = true;
    std::string detail;
    for (const auto& c : rep.checks) {
        if (c.name.rfind("3DGS w/o densification", 0) == 0) continue;
        ok = ok && c.pass;
        detail += (detail.empty() ? "" : "; ") + c.name + (c.pass ? " ok" : " FAILED") + " (" + c.detail + ")";
    }
    return verdict(ok, detail);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks for the rsplat trainer"};
    bool full = false;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::string out_dir = (fs::temp_directory_path() / "rsplat_acceptance").string();
    int threads = 1;
    app.add_flag("--full", full, "Also run the end-to-end experiments (several hours on one core)");
    app.add_option("--seeds", seeds, "Scene and training seeds for the experiments")->delimiter(',');
    app.add_option("--out", out_dir, "Directory for run outputs and experiment CSVs");
    app.add_option("--threads", threads, "Render threads")->check(CLI::Range(1, 256));
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    std::vector<std::pair<std::string, Outcome>> lines;
    auto report = [&](const std::string& name, const Outcome& o) {
        const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::fail ? "FAIL" : "SKIP";
        std::printf("%s  %s: %s\n", tag, name.c_str(), o.detail.c_str());
        std::fflush(stdout);
        lines.emplace_back(name, o);
    };

    try {
        const fs::path work(out_dir);
        fs::remove_all(work / "determinism");
        fs::create_directories(work / "determinism");
        RuntimeOptions rt;
        rt.threads = threads;

        report("Gradient oracle", gradient_oracle());
        report("Blending exactness", blending());
        report("Loss unit suite", loss_suite());
        const auto small = render_dataset(generate_scene(11, small_scene()));

        FullResults res;
        if (full) res = run_full(seeds, rt, work);

        if (full) {
            std::string bad;
            int checked = 0;
            const TrainConfig cfg = TrainConfig::defaults();
            const auto configs = ablation_configs();
            for (const auto& r : res.runs) {
                const auto it = std::find_if(configs.begin(), configs.end(),
                                             [&](const NamedFlags& nf) { return nf.name == r.config; });
                if (!it->flags.enable_delayed_growth) continue;
                ++checked;
                const std::string v = growth_violation(r.history, cfg.densify_start_iter);
                if (!v.empty() && bad.empty()) bad = r.config + " seed " + std::to_string(r.seed) + ": " + v;
            }
            const Outcome quick = delayed_growth_quick(small);
            report("Delayed-growth invariant",
                   verdict(bad.empty() && quick.status == Status::pass,
                           bad.empty() ? format("%d full-length runs clean; ", checked) + quick.detail : bad));
        } else {
            report("Delayed-growth invariant", delayed_growth_quick(small));
        }

        if (full) {
            report("Growth hurts under distractors", fig2(res, seeds));
            report("Densification start sweep", fig4(res));
            report("Component ablation", table3(res));
        } else {
            for (const char* name : {"Growth hurts under distractors", "Densification start sweep", "Component ablation"})
                report(name, {Status::skip, "end-to-end experiment, run with --full"});
        }
        report("Determinism", determinism(small, work / "determinism"));
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }

    const bool any_fail = std::any_of(lines.begin(), lines.end(),
                                      [](const auto& l) { return l.second.status == Status::fail; });
    return any_fail ? 1 : 0;
}
