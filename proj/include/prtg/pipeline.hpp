// SPDX-License-Identifier: Apache-2.0
//
// Two-stage reconstruction from an OLAT dataset: geometry initialization from
// light-averaged views, then transfer fitting on the training split.
#pragma once

#include "prtg/fit.hpp"
#include "prtg/metrics.hpp"
#include "prtg/prt_oracle.hpp"

namespace prtg {

struct PipelineResult {
    GaussianModel model;
    FitReport report;
    RefineStats init_stats;
};

[[nodiscard]] inline PipelineResult run_pipeline(const OlatDataset& ds, InitConfig init, const FitConfig& fit) {
    ds.validate();
    const DataSplit split =
        make_split(static_cast<int>(ds.cameras.size()), static_cast<int>(ds.lights.size()), fit.heldout_fraction, fit.seed);
    init.sh_order = fit.sh_order;
    init.seed = fit.seed;
    const LightSH uniform = average_light(ds.lights, split.train_lights, fit.sh_order);
    const auto views = average_uniform(ds, split.train_cameras, split.train_lights);
    PipelineResult out;
    const GaussianModel start =
        init_geometry(views, uniform, init, ds.scene ? &*ds.scene : nullptr, &out.init_stats);
    FitResult r = fit_transfer(start, ds, fit, split);
    out.model = std::move(r.model);
    out.report = std::move(r.report);
    return out;
}

/// Mean PSNR of the SH-truncated reference renderer over the selected pairs:
/// the ceiling for any order-n transfer model of the scene.
[[nodiscard]] inline EvalResult reference_ceiling(const SceneSpec& scene, const OlatDataset& ds,
                                                  const std::vector<int>& cameras, const std::vector<int>& lights,
                                                  int order, int samples = 4096) {
    EvalResult r;
    if (cameras.empty() || lights.empty()) return r;
    const auto light_sh = project_lights(ds.lights, order);
    double p = 0.0, s = 0.0;
    for (int c : cameras) {
        const BakedView view = bake_view(scene, ds.cameras.at(static_cast<std::size_t>(c)), order, samples);
        for (int l : lights) {
            const Image img = shade_baked(view, light_sh.at(static_cast<std::size_t>(l)));
            const Image& target = ds.image(static_cast<std::size_t>(c), static_cast<std::size_t>(l));
            p += std::min(psnr(img, target), 100.0);
            s += ssim(img, target);
            ++r.pairs;
        }
    }
    r.psnr = p / r.pairs;
    r.ssim = s / r.pairs;
    return r;
}

}  // namespace prtg
