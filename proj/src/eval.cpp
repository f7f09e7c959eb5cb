#include "rsplat/eval.hpp"

#include "rsplat/io.hpp"
#include "rsplat/losses.hpp"

#include <algorithm>
#include <cstdio>

namespace rsplat {

double mask_iou(const TransientMask& pred, const TransientMask& gt, double threshold) {
    if (pred.width != gt.width || pred.height != gt.height)
        throw ShapeError("mask_iou: " + std::to_string(pred.width) + "x" + std::to_string(pred.height) + " vs " +
                         std::to_string(gt.width) + "x" + std::to_string(gt.height));
    std::size_t inter = 0, uni = 0;
    for (std::size_t p = 0; p < pred.values.size(); ++p) {
        const bool a = pred.values[p] < threshold;
        const bool b = gt.values[p] < threshold;
        inter += (a && b) ? 1 : 0;
        uni += (a || b) ? 1 : 0;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

TransientMask predicted_mask(const TrainState& st, const PreparedView& view) {
    if (!st.flags.enable_mask) return TransientMask(view.image.width, view.image.height, 1.0);
    const auto fwd = predict_mask(st.mlp, view.features_high);
    return refine_mask(fwd.mask, view.image.width, view.image.height, st.config.dilation_kernel);
}

EvalRecord evaluate_state(const TrainState& st, const DatasetBundle& data, const EvalOptions& opts,
                          std::vector<ImageBuffer>* renders) {
    EvalRecord rec;
    rec.config = st.flags.to_string();
    std::replace(rec.config.begin(), rec.config.end(), ',', '+');
    if (rec.config.empty()) rec.config = "none";
    rec.seed = st.config.seed;
    RenderSettings rs;
    rs.alpha_min = st.config.alpha_min;
    rs.sh_degree = st.config.sh_degree;
    rs.threads = opts.runtime.threads;

    double p = 0, s = 0;
    std::size_t n = 0;
    auto score = [&](const Camera& cam, const ImageBuffer& gt, const TransientMask* keep) {
        const ImageBuffer img = render(st.gaussians, cam, st.background, rs).image.clamped();
        p += (opts.masked_metrics && keep) ? psnr_masked(img, gt, *keep) : psnr(img, gt);
        s += ssim(img, gt).value;
        ++n;
        if (renders) renders->push_back(img);
    };
    if (opts.on_train_views) {
        for (const auto& v : data.train) score(v.camera, v.image, &v.gt_mask);
    } else {
        for (const auto& v : data.test) score(v.camera, v.image, nullptr);
    }
    if (n) {
        rec.psnr = p / n;
        rec.ssim = s / n;
    }

    const auto views = prepare_views(data, st.config);
    double iou = 0;
    for (const auto& v : views) iou += mask_iou(predicted_mask(st, v), v.gt_mask);
    rec.mask_iou = views.empty() ? 0.0 : iou / views.size();
    return rec;
}

EvalRecord evaluate_checkpoint(const std::string& path, const DatasetBundle& data, const EvalOptions& opts,
                               std::vector<ImageBuffer>* renders) {
    const TrainState st = load_checkpoint(path);
    return evaluate_state(st, data, opts, renders);
}

std::string metrics_csv_header() { return "config,seed,psnr,ssim,mask_iou\n"; }

std::string metrics_csv_row(const EvalRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%llu,%.6f,%.6f,%.6f\n", r.config.c_str(),
                  static_cast<unsigned long long>(r.seed), r.psnr, r.ssim, r.mask_iou);
    return buf;
}

}  // namespace rsplat
