// Command-line front end: gen, train, render, eval, ablate, sweep.

#include "rsplat/eval.hpp"
#include "rsplat/experiments.hpp"
#include "rsplat/io.hpp"
#include "rsplat/scenegen.hpp"
#include "rsplat/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace rsplat;

namespace {

int default_threads() {
    if (const char* env = std::getenv("RSPL_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1 && v <= 256) return static_cast<int>(v);
        std::fprintf(stderr, "warning: ignoring invalid RSPL_THREADS='%s'\n", env);
    }
    return 1;
}

void progress(const std::string& what, std::uint64_t seed) {
    std::fprintf(stderr, "[run] %s seed=%llu\n", what.c_str(), static_cast<unsigned long long>(seed));
}

TrainConfig load_config_or_default(const std::string& path) {
    return path.empty() ? TrainConfig::defaults() : parse_config(path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rsplat: robust Gaussian-splatting trainer on synthetic captures"};
    app.require_subcommand(1);
    int threads = default_threads();
    app.add_option("--threads", threads, "Worker threads for rendering (env RSPL_THREADS)")
        ->check(CLI::Range(1, 256));

    // gen
    auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
    std::uint64_t gen_seed = 0;
    double occlusion = 0.2;
    int views = 32, test_views = 8, width = 128, height = 128;
    double persistent = 0.0, contaminate = 0.0;
    std::string gen_out;
    gen->add_option("--seed", gen_seed, "Scene seed")->required();
    gen->add_option("--occlusion", occlusion, "Mean fraction of training pixels covered by distractors")
        ->check(CLI::Range(0.0, 0.6));
    gen->add_option("--views", views, "Training views")->check(CLI::Range(8, 9000));
    gen->add_option("--test-views", test_views, "Held-out clean views")->check(CLI::Range(1, 999));
    gen->add_option("--width", width, "Image width")->check(CLI::Range(16, 4096));
    gen->add_option("--height", height, "Image height")->check(CLI::Range(16, 4096));
    gen->add_option("--persistent", persistent, "Fraction of consecutive views sharing a fixed distractor")
        ->check(CLI::Range(0.0, 1.0));
    gen->add_option("--contaminate", contaminate, "Fraction of views whose distractors leak into the point cloud")
        ->check(CLI::Range(0.0, 1.0));
    gen->add_option("--out", gen_out, "Output directory")->required();

    // train
    auto* tr = app.add_subcommand("train", "Train on a dataset directory");
    std::string tr_data, tr_config, tr_out, tr_flags = "mask,dg,mb,reg,densify";
    std::uint64_t tr_seed = 0;
    auto* tr_seed_opt = tr->add_option("--seed", tr_seed, "Training seed (overrides the config)");
    tr->add_option("--data", tr_data, "Dataset directory")->required();
    tr->add_option("--config", tr_config, "Config file (key = value)");
    tr->add_option("--out", tr_out, "Output directory")->required();
    tr->add_option("--flags", tr_flags, "Subset of mask,dg,mb,reg,densify (empty = all off)");

    // render
    auto* rd = app.add_subcommand("render", "Render a checkpoint from a dataset camera");
    std::string rd_ckpt, rd_out;
    int rd_index = 0;
    rd->add_option("--checkpoint", rd_ckpt, "Checkpoint file")->required();
    rd->add_option("--camera-index", rd_index, "Global camera id")->required()->check(CLI::NonNegativeNumber);
    rd->add_option("--out", rd_out, "Output PNG")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    std::string ev_ckpt, ev_data, ev_out, ev_renders;
    bool masked = false, ev_train = false;
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
    ev->add_option("--data", ev_data, "Dataset directory")->required();
    ev->add_flag("--masked-metrics", masked, "Exclude GT-transient pixels from PSNR");
    ev->add_flag("--train-views", ev_train, "Score training views instead of test views");
    ev->add_option("--out", ev_out, "Write the metrics CSV here (default stdout)");
    ev->add_option("--renders", ev_renders, "Directory for rendered evaluation images");

    // ablate
    auto* ab = app.add_subcommand("ablate", "Train and compare the six pipeline variants");
    std::string ab_data, ab_out, ab_config;
    std::vector<std::uint64_t> ab_seeds;
    ab->add_option("--data", ab_data, "Dataset directory")->required();
    ab->add_option("--seeds", ab_seeds, "Training seeds")->required()->delimiter(',');
    ab->add_option("--out", ab_out, "Report CSV")->required();
    ab->add_option("--config", ab_config, "Config file");

    // sweep
    auto* sw = app.add_subcommand("sweep", "Sweep the densification start iteration");
    std::string sw_data, sw_out, sw_config, sw_mask = "both";
    std::vector<int> sw_starts;
    std::uint64_t sw_seed = 0;
    auto* sw_seed_opt = sw->add_option("--seed", sw_seed, "Training seed (overrides the config)");
    sw->add_option("--data", sw_data, "Dataset directory")->required();
    sw->add_option("--starts", sw_starts, "Start iterations")->required()->delimiter(',')->check(CLI::NonNegativeNumber);
    sw->add_option("--out", sw_out, "Curves CSV")->required();
    sw->add_option("--config", sw_config, "Config file");
    sw->add_option("--mask", sw_mask, "Arms to run")->check(CLI::IsMember({"both", "on", "off"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    RuntimeOptions rt;
    rt.threads = threads;
    try {
        if (*gen) {
            SceneParams sp;
            sp.occlusion = occlusion;
            sp.train_views = views;
            sp.test_views = test_views;
            sp.width = width;
            sp.height = height;
            sp.persistent_fraction = persistent;
            sp.contaminate_fraction = contaminate;
            const auto scene = generate_scene(gen_seed, sp);
            RenderSettings rs;
            rs.threads = threads;
            const auto data = render_dataset(scene, rs);
            write_dataset(gen_out, data);
            std::printf("wrote %zu train / %zu test views to %s (measured occlusion %.4f)\n", data.train.size(),
                        data.test.size(), gen_out.c_str(), data.measured_occlusion());
        } else if (*tr) {
            TrainConfig cfg = load_config_or_default(tr_config);
            if (*tr_seed_opt) cfg.seed = tr_seed;
            const AblationFlags flags = AblationFlags::parse(tr_flags);
            const auto data = read_dataset(tr_data);
            const auto st = train(data, cfg, flags, tr_out, rt);
            const auto& last = st.history.back();
            std::printf("iter %d psnr %.4f ssim %.4f gaussians %zu rollbacks %llu\n", last.iter, last.psnr, last.ssim,
                        last.gauss_count, static_cast<unsigned long long>(st.rollbacks));
        } else if (*rd) {
            const TrainState st = load_checkpoint(rd_ckpt);
            if (rd_index >= static_cast<int>(st.cameras.size()))
                throw ConfigError("camera index " + std::to_string(rd_index) + " out of range (checkpoint holds " +
                                  std::to_string(st.cameras.size()) + " cameras)");
            RenderSettings rs;
            rs.alpha_min = st.config.alpha_min;
            rs.sh_degree = st.config.sh_degree;
            rs.threads = threads;
            write_png(rd_out, render(st.gaussians, st.cameras[rd_index], st.background, rs).image);
        } else if (*ev) {
            const auto data = read_dataset(ev_data);
            EvalOptions eo;
            eo.masked_metrics = masked;
            eo.on_train_views = ev_train;
            eo.runtime = rt;
            std::vector<ImageBuffer> renders;
            const auto rec = evaluate_checkpoint(ev_ckpt, data, eo, ev_renders.empty() ? nullptr : &renders);
            const std::string csv = metrics_csv_header() + metrics_csv_row(rec);
            if (ev_out.empty())
                std::fputs(csv.c_str(), stdout);
            else
                write_text_file(ev_out, csv);
            if (!ev_renders.empty()) {
                fs::create_directories(ev_renders);
                for (std::size_t i = 0; i < renders.size(); ++i) {
                    const int id = ev_train ? data.train[i].camera_id : data.test[i].camera_id;
                    char name[32];
                    std::snprintf(name, sizeof name, "%04d.png", id);
                    write_png((fs::path(ev_renders) / name).string(), renders[i]);
                }
            }
        } else if (*ab) {
            const TrainConfig cfg = load_config_or_default(ab_config);
            const auto data = read_dataset(ab_data);
            const auto rep = run_ablation_suite(data, cfg, ab_seeds, rt, progress);
            write_text_file(ab_out, format_ablation_csv(rep));
            for (const auto& c : rep.checks)
                std::printf("%s: %s (%s)\n", c.name.c_str(), c.pass ? "PASS" : "FAIL", c.detail.c_str());
        } else if (*sw) {
            TrainConfig cfg = load_config_or_default(sw_config);
            if (*sw_seed_opt) cfg.seed = sw_seed;
            const auto data = read_dataset(sw_data);
            std::vector<SweepTrace> traces;
            for (const bool with_mask : {false, true}) {
                if ((with_mask && sw_mask == "off") || (!with_mask && sw_mask == "on")) continue;
                auto t = sweep_densify_start(data, cfg, sw_starts, with_mask, rt, progress);
                traces.insert(traces.end(), t.begin(), t.end());
            }
            write_text_file(sw_out, format_sweep_csv(traces));
            for (const auto& t : traces)
                std::printf("start %d mask %d final psnr %.4f\n", t.start, t.with_mask ? 1 : 0, t.final_psnr());
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
