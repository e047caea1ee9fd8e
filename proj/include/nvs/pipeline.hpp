#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "nvs/dataset.hpp"
#include "nvs/losses.hpp"
#include "nvs/model.hpp"
#include "nvs/render.hpp"

namespace nvs {

struct IterationMetrics {
    std::int64_t iteration = 0;  // step within the stage
    int stage = 0;
    int view = -1;
    float total = 0, color = 0, l1 = 0, ssim = 0, tv = 0, vol = 0;
    float psnr = 0;
    std::size_t anchor_count = 0;
    std::size_t gaussian_count = 0;
    int flags = 0;  // crude-view detections recorded this iteration
};

using MetricsSink = std::function<void(const IterationMetrics&)>;

// Whether the densification schedule fires at this per-stage iteration:
// growth every 100 iterations in [500, 12000], pruning every 100 from 500 on.
struct DensifyActive {
    bool grow = false;
    bool prune = false;
};
DensifyActive densify_schedule_active(std::int64_t iteration,
                                      std::int64_t start = 500, std::int64_t every = 100,
                                      std::int64_t grow_until = 12000);

// One forward render of the model from a camera: spawn (optionally deform),
// project, rasterize. Keeps every trace needed for the backward pass.
struct ViewRender {
    SpawnResult<float> spawn;
    DeformResult<float> deform;
    bool deformed = false;
    std::vector<Splat2D<float>> splats;
    std::vector<int> splat_to_gaussian;
    RenderOutput<float> render;

    const std::vector<NeuralGaussian<float>>& rendered_gaussians() const {
        return deformed ? deform.gaussians : spawn.gaussians;
    }
};

ViewRender render_view(const Model& model, const Cameraf& camera, float time, bool deform);

// Stage runners per the three-stage schedule. Each advances the model cursor
// and is resumable mid-stage from a checkpoint.
void run_stage1_coarse(Model& model, const Dataset& dataset, const MetricsSink& sink = {});
void run_stage2_fine(Model& model, const Dataset& dataset, const MetricsSink& sink = {});

// Runs up to `count` iterations of the current stage (1 or 2), advancing the
// cursor past the stage boundary when it completes. Supports mid-stage
// checkpoint/resume.
void train_steps(Model& model, const Dataset& dataset, std::int64_t count,
                 const MetricsSink& sink = {});

struct StageThreeReport {
    bool skipped = false;  // empty refinement stack
    std::vector<int> flagged_views;
    std::vector<float> psnr_before;
    std::vector<float> psnr_after;
};
StageThreeReport run_stage3_refine(Model& model, const Dataset& dataset,
                                   const MetricsSink& sink = {});

// Runs every remaining stage from the cursor; `on_stage_end(stage)` fires at
// each boundary (checkpointing hook).
void train(Model& model, const Dataset& dataset, const MetricsSink& sink = {},
           const std::function<void(int)>& on_stage_end = {});

// Full-model render of one dataset view (deformation active), returning PSNR.
float evaluate_view(const Model& model, const DatasetEntry& entry);
std::vector<float> evaluate_views(const Model& model, const Dataset& dataset,
                                  const std::vector<int>& views);

}  // namespace nvs
