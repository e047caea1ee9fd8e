#include "nvs/pipeline.hpp"

#include <cmath>
#include <iostream>
#include <string>

#include "nvs/lr_schedule.hpp"

namespace nvs {

DensifyActive densify_schedule_active(std::int64_t iteration, std::int64_t start,
                                      std::int64_t every, std::int64_t grow_until) {
    DensifyActive a;
    if (iteration < start || iteration % every != 0) return a;
    a.prune = true;
    a.grow = iteration <= grow_until;
    return a;
}

ViewRender render_view(const Model& model, const Cameraf& camera, float time, bool deform) {
    ViewRender vr;
    const auto visible = cull_visible(model.anchors, camera);
    vr.spawn = spawn_gaussians(model.anchors, visible, model.heads, camera);
    vr.deformed = deform;
    if (deform)
        vr.deform = deform_gaussians(vr.spawn.gaussians, model.field, model.decoders, time,
                                     model.config.scale_floor);

    const auto& gaussians = vr.rendered_gaussians();
    vr.splats.reserve(gaussians.size());
    vr.splat_to_gaussian.reserve(gaussians.size());
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        const auto& g = gaussians[i];
        const Mat3f cov = covariance_from_scale_rotation(g.scale, g.rotation);
        auto splat = project_gaussian(g.position, cov, camera, int(i));
        if (!splat) continue;
        splat->color = g.color;
        splat->opacity = g.opacity;
        vr.splats.push_back(*splat);
        vr.splat_to_gaussian.push_back(int(i));
    }
    const Vec3<float> bg{model.config.background[0], model.config.background[1],
                         model.config.background[2]};
    vr.render = rasterize(vr.splats, camera.height, camera.width, bg);
    return vr;
}

namespace {

struct StageSetup {
    bool use_deform = false;
    bool use_tv = false;
    bool detectors = false;
    float tau_g = 0;
    float tau_alpha = 0;
    bool hold_final_lr = false;
};

StageSetup stage_setup(const Model& model, int stage) {
    const TrainConfig& c = model.config;
    StageSetup s;
    s.use_deform = stage >= 2;
    s.use_tv = stage >= 2;
    s.detectors = stage == 2;
    s.tau_g = stage == 3 ? c.tau_grad_refine : c.tau_grad;
    s.tau_alpha = stage == 3 ? c.tau_opacity_refine : c.tau_opacity;
    s.hold_final_lr = stage == 3;
    return s;
}

struct GroupRates {
    float feature, offsets, anchor_scale, opacity, color, cov, grid, decoders;
};

GroupRates learning_rates(const TrainConfig& c, int stage, std::int64_t step) {
    // Stages 1 and 2 follow the decay schedule at their local step; stage 3
    // holds the final rates.
    const std::int64_t s = stage == 3 ? c.lr_decay_steps : step;
    const auto rate = [&](float initial, float final_value) {
        return float(LrSchedule(initial, final_value, c.lr_decay_steps).value(s));
    };
    GroupRates r;
    r.feature = rate(c.lr_feature, c.lr_feature_final);
    r.offsets = rate(c.lr_offsets, c.lr_offsets_final);
    r.anchor_scale = rate(c.lr_anchor_scale, c.lr_anchor_scale_final);
    r.opacity = rate(c.lr_opacity_head, c.lr_opacity_head_final);
    r.color = rate(c.lr_color_head, c.lr_color_head_final);
    r.cov = rate(c.lr_cov_heads, c.lr_cov_heads_final);
    r.grid = rate(c.lr_grid, c.lr_grid_final);
    r.decoders = rate(c.lr_decoders, c.lr_decoders_final);
    return r;
}

// One optimization step: sample, render, differentiate, update, densify,
// detect. Advances model.step.
void train_iteration(Model& model, const Dataset& dataset, const MetricsSink& sink) {
    const TrainConfig& config = model.config;
    const int stage = model.stage;
    const std::int64_t step = model.step;
    const StageSetup setup = stage_setup(model, stage);
    const GroupRates rates = learning_rates(config, stage, step);

    // View selection: uniform over (camera, frame) pairs; stage 3 samples the
    // refinement stack proportional to priority.
    int view;
    if (stage == 3)
        view = model.stack.sample(model.rng);
    else
        view = int(model.rng.uniform_index(dataset.entries.size()));
    const DatasetEntry& entry = dataset.entries[std::size_t(view)];

    ViewRender vr = render_view(model, entry.camera, entry.time, setup.use_deform);
    const auto& rendered_gaussians = vr.rendered_gaussians();

    // Opacity window for pruning.
    for (const auto& g : vr.spawn.gaussians) {
        model.stats.opacity_sum[g.anchor_index] += g.opacity;
        model.stats.opacity_count[g.anchor_index] += 1;
    }

    // Loss and image gradient.
    std::vector<Vec3<float>> scales(rendered_gaussians.size());
    for (std::size_t i = 0; i < rendered_gaussians.size(); ++i)
        scales[i] = rendered_gaussians[i].scale;

    FieldGrads<float> field_grads(model.field);
    LossWeights<float> weights{config.lambda_ssim, config.lambda_tv, config.lambda_vol};
    TotalLoss<float> loss = total_loss<float>(
        vr.render.image, entry.image.rgb, entry.camera.height, entry.camera.width,
        setup.use_tv ? &model.field : nullptr, setup.use_tv ? &field_grads : nullptr,
        std::span<const Vec3<float>>(scales), weights);
    if (!is_finite(loss.total))
        throw NumericError("stage " + std::to_string(stage) + " iteration " +
                           std::to_string(step) + ": non-finite loss");

    // Backward through the rasterizer, then projection/covariance, assembling
    // per-Gaussian gradients of the rendered (deformed) attributes.
    const auto splat_grads =
        rasterize_backward(vr.splats, vr.render, std::span<const float>(loss.d_image));

    std::vector<GaussianGrad<float>> upstream(rendered_gaussians.size());
    for (std::size_t i = 0; i < rendered_gaussians.size(); ++i)
        upstream[i].d_scale = loss.d_scales[i];

    float grad_norm_sum = 0.f;
    for (std::size_t si = 0; si < vr.splats.size(); ++si) {
        const int gi = vr.splat_to_gaussian[si];
        const auto& g = rendered_gaussians[gi];
        const auto& sg = splat_grads[si];
        GaussianGrad<float>& up = upstream[gi];

        Vec3<float> d_mu;
        Mat3<float> d_cov3;
        project_gaussian_backward(g.position, covariance_from_scale_rotation(g.scale, g.rotation),
                                  entry.camera, sg.d_mean, sg.d_cov_xx, sg.d_cov_xy, sg.d_cov_yy,
                                  d_mu, d_cov3);
        Vec3<float> d_scale;
        Quat<float> d_quat;
        covariance_from_scale_rotation_backward(g.scale, g.rotation, d_cov3, d_scale, d_quat);

        up.d_position += d_mu;
        up.d_scale += d_scale;
        up.d_rotation = up.d_rotation + d_quat;
        up.d_color += sg.d_color;
        up.d_opacity += sg.d_opacity;

        // Image-space position-gradient statistics.
        const float norm = sg.d_mean.norm();
        grad_norm_sum += norm;
        const std::size_t slot_index =
            std::size_t(g.anchor_index) * config.gaussians_per_anchor + g.slot;
        model.stats.grad_sum[slot_index] += norm;
        model.stats.grad_count[slot_index] += 1;
    }
    const float mean_grad_norm =
        vr.splats.empty() ? 0.f : grad_norm_sum / float(vr.splats.size());

    // Deformation backward (stage >= 2), then spawning backward.
    AnchorGrads<float> anchor_grads;
    anchor_grads.resize(model.anchors.size(), config.feature_dim, config.gaussians_per_anchor);
    HeadsGrads<float> head_grads(model.heads);
    DecoderGrads<float> decoder_grads(model.decoders);

    if (setup.use_deform) {
        std::vector<GaussianGrad<float>> d_canonical;
        deform_backward(vr.spawn.gaussians, model.field, model.decoders, vr.deform,
                        std::span<const GaussianGrad<float>>(upstream), d_canonical, field_grads,
                        decoder_grads, config.scale_floor);
        spawn_backward(model.anchors, model.heads, vr.spawn,
                       std::span<const GaussianGrad<float>>(d_canonical), anchor_grads,
                       head_grads);
    } else {
        spawn_backward(model.anchors, model.heads, vr.spawn,
                       std::span<const GaussianGrad<float>>(upstream), anchor_grads, head_grads);
    }

    // Optimizer updates. Stage 1 leaves the deformation module untouched.
    model.step_anchor_groups(anchor_grads, rates.feature, rates.offsets, rates.anchor_scale);
    model.step_heads(head_grads, rates.opacity, rates.color, rates.cov);
    if (setup.use_deform) {
        model.step_field(field_grads, rates.grid);
        model.step_decoders(decoder_grads, rates.decoders);
    }

    // Density control on the per-stage schedule.
    const DensifyActive densify = densify_schedule_active(step, config.densify_start,
                                                          config.densify_every, config.grow_until);
    if (densify.grow || densify.prune)
        model.densify(densify.grow, densify.prune, setup.tau_g, setup.tau_alpha, step);

    // Crude-view detection, one invocation per training render.
    const float view_psnr = psnr<float>(vr.render.image, entry.image.rgb);
    int flags = 0;
    if (setup.detectors) {
        const float gamma =
            gamma_value(step, config.stage2_iters, config.gamma_start, config.gamma_end);
        const float psnr_threshold =
            model.psnr_tracker.initialized ? (1.f + gamma) * model.psnr_tracker.value : 0.f;
        const float grad_threshold =
            model.grad_tracker.initialized ? (1.f + gamma) * model.grad_tracker.value : 0.f;
        const bool quality_flag =
            detect_crude_psnr(model.psnr_tracker, view_psnr, gamma, config.ema_momentum);
        const bool gradient_flag =
            detect_crude_gradient(model.grad_tracker, mean_grad_norm, gamma, config.ema_momentum);
        if (step >= config.flag_warmup) {
            if (quality_flag && psnr_threshold > 0.f) {
                model.stack.update(view, FailureType::Quality,
                                   (psnr_threshold - view_psnr) / psnr_threshold, step);
                ++flags;
            }
            if (gradient_flag && grad_threshold > 0.f) {
                model.stack.update(view, FailureType::Gradient,
                                   mean_grad_norm / grad_threshold - 1.f, step);
                ++flags;
            }
        }
    }

    if (sink) {
        IterationMetrics m;
        m.iteration = step;
        m.stage = stage;
        m.view = view;
        m.total = loss.total;
        m.color = loss.color;
        m.l1 = loss.l1;
        m.ssim = loss.ssim_value;
        m.tv = loss.tv;
        m.vol = loss.vol;
        m.psnr = view_psnr;
        m.anchor_count = model.anchors.size();
        m.gaussian_count = rendered_gaussians.size();
        m.flags = flags;
        sink(m);
    }
    model.step += 1;
}

void finish_stage(Model& model) {
    model.stage += 1;
    model.step = 0;
    model.stats.resize(model.anchors.size(), model.config.gaussians_per_anchor);
    model.stats.window_start = 0;
}

}  // namespace

void run_stage1_coarse(Model& model, const Dataset& dataset, const MetricsSink& sink) {
    if (model.stage != 1) return;
    if (dataset.entries.empty()) throw DataError("training requires a non-empty dataset");
    while (model.step < model.config.stage1_iters) train_iteration(model, dataset, sink);
    finish_stage(model);
}

void train_steps(Model& model, const Dataset& dataset, std::int64_t count,
                 const MetricsSink& sink) {
    if (model.stage != 1 && model.stage != 2) return;
    if (dataset.entries.empty()) throw DataError("training requires a non-empty dataset");
    const int stage = model.stage;
    const std::int64_t limit =
        stage == 1 ? model.config.stage1_iters : model.config.stage2_iters;
    for (std::int64_t i = 0; i < count && model.step < limit; ++i)
        train_iteration(model, dataset, sink);
    if (model.step >= limit) finish_stage(model);
}

void run_stage2_fine(Model& model, const Dataset& dataset, const MetricsSink& sink) {
    if (model.stage != 2) return;
    if (dataset.entries.empty()) throw DataError("training requires a non-empty dataset");
    while (model.step < model.config.stage2_iters) train_iteration(model, dataset, sink);
    finish_stage(model);
}

StageThreeReport run_stage3_refine(Model& model, const Dataset& dataset, const MetricsSink& sink) {
    StageThreeReport report;
    if (model.stage != 3) return report;

    for (const auto& e : model.stack.ranked()) report.flagged_views.push_back(e.camera_id);
    if (model.stack.empty()) {
        // Nothing flagged: the stage is skipped and the model left untouched.
        report.skipped = true;
        std::cout << "stage 3: refinement stack empty, skipping\n";
        finish_stage(model);
        return report;
    }

    report.psnr_before = evaluate_views(model, dataset, report.flagged_views);
    while (model.step < model.config.stage3_iters) train_iteration(model, dataset, sink);
    report.psnr_after = evaluate_views(model, dataset, report.flagged_views);
    finish_stage(model);
    return report;
}

void train(Model& model, const Dataset& dataset, const MetricsSink& sink,
           const std::function<void(int)>& on_stage_end) {
    if (model.stage == 1) {
        run_stage1_coarse(model, dataset, sink);
        if (on_stage_end) on_stage_end(1);
    }
    if (model.stage == 2) {
        run_stage2_fine(model, dataset, sink);
        if (on_stage_end) on_stage_end(2);
    }
    if (model.stage == 3) {
        run_stage3_refine(model, dataset, sink);
        if (on_stage_end) on_stage_end(3);
    }
}

float evaluate_view(const Model& model, const DatasetEntry& entry) {
    const ViewRender vr = render_view(model, entry.camera, entry.time, true);
    return psnr<float>(vr.render.image, entry.image.rgb);
}

std::vector<float> evaluate_views(const Model& model, const Dataset& dataset,
                                  const std::vector<int>& views) {
    std::vector<float> out;
    out.reserve(views.size());
    for (int v : views) out.push_back(evaluate_view(model, dataset.entries[std::size_t(v)]));
    return out;
}

}  // namespace nvs
