#pragma once

#include "rsplat/scenegen.hpp"
#include "rsplat/trainer.hpp"

namespace rsplat::testing {

/// Small synthetic capture shared by the trainer, io and eval suites.
inline const DatasetBundle& tiny_dataset() {
    static const DatasetBundle data = [] {
        SceneParams p;
        p.num_static = 250;
        p.train_views = 8;
        p.test_views = 2;
        p.width = 64;
        p.height = 64;
        p.occlusion = 0.2;
        return render_dataset(generate_scene(21, p));
    }();
    return data;
}

/// Short schedule: growth from step 40 to 80, resets every 30 from step 60.
inline TrainConfig tiny_config() {
    TrainConfig cfg = TrainConfig::defaults(0.02);
    cfg.total_iters = 120;
    cfg.densify_start_iter = 40;
    cfg.prune_start_iter = 40;
    cfg.densify_interval = 20;
    cfg.densify_end_iter = 80;
    cfg.opacity_reset_start_iter = 60;
    cfg.opacity_reset_interval = 30;
    cfg.eval_interval = 40;
    cfg.grad_threshold = 5e-5;
    cfg.seed = 5;
    cfg.validate();
    return cfg;
}

}  // namespace rsplat::testing
