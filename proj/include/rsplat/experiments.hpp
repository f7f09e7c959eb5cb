#pragma once

#include "rsplat/config.hpp"
#include "rsplat/eval.hpp"
#include "rsplat/scenegen.hpp"
#include "rsplat/trainer.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace rsplat {

struct NamedFlags {
    std::string name;
    AblationFlags flags;
};

/// The six compared pipelines, in report order: 3DGS, 3DGS+Mask,
/// 3DGS+Mask+DG, 3DGS+Mask+MB, Full, 3DGS w/o densification.
std::vector<NamedFlags> ablation_configs();

struct AblationRun {
    std::string config;
    std::uint64_t seed = 0;
    EvalRecord metrics;
    std::vector<MetricRow> history;
};

struct ConfigSummary {
    std::string config;
    double psnr_mean = 0, psnr_min = 0, psnr_max = 0;
    double ssim_mean = 0, ssim_min = 0, ssim_max = 0;
    double iou_mean = 0, iou_min = 0, iou_max = 0;
};

struct AblationCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct AblationReport {
    std::vector<AblationRun> runs;
    std::vector<ConfigSummary> summary;
    std::vector<AblationCheck> checks;

    [[nodiscard]] const ConfigSummary& get(const std::string& config) const;
};

/// Optional progress hook: (config, seed) before each run.
using ProgressFn = std::function<void(const std::string&, std::uint64_t)>;

/// Trains every configuration for every seed on `data`.
std::vector<AblationRun> run_ablation_runs(const DatasetBundle& data, const TrainConfig& cfg,
                                           const std::vector<std::uint64_t>& seeds, const RuntimeOptions& rt = {},
                                           const ProgressFn& progress = {});

/// Per-config mean/min/max and the directional checks (Full against the
/// single-component variants, mask variants against 3DGS, IoU of Full
/// against the variant without bootstrapping, growth against no growth).
AblationReport summarize_ablation(std::vector<AblationRun> runs);

AblationReport run_ablation_suite(const DatasetBundle& data, const TrainConfig& cfg,
                                  const std::vector<std::uint64_t>& seeds, const RuntimeOptions& rt = {},
                                  const ProgressFn& progress = {});

/// Per-run rows, then `mean` and `range` rows per config, then one
/// `# check` comment line per directional check.
std::string format_ablation_csv(const AblationReport& report);

struct SweepTrace {
    int start = 0;
    bool with_mask = false;
    std::vector<std::pair<int, double>> psnr;  // (iter, test PSNR)
    [[nodiscard]] double final_psnr() const { return psnr.empty() ? 0.0 : psnr.back().second; }
};

/// Config for a densification start: growth runs for the same number of
/// iterations as in `cfg` after `start`, pruning starts with growth and the
/// opacity reset keeps its offset from the growth start.
TrainConfig config_for_start(const TrainConfig& cfg, int start);

std::vector<SweepTrace> sweep_densify_start(const DatasetBundle& data, const TrainConfig& cfg,
                                            const std::vector<int>& starts, bool with_mask,
                                            const RuntimeOptions& rt = {}, const ProgressFn& progress = {});

/// Columns iter,start,psnr plus a mask column distinguishing the two arms.
std::string format_sweep_csv(const std::vector<SweepTrace>& traces);

}  // namespace rsplat
