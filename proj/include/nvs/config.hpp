#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace nvs {

// Training configuration. Defaults follow the published schedule; desk-scale
// runs override the iteration counts and field resolution.
struct TrainConfig {
    // Three-stage schedule.
    std::int64_t stage1_iters = 3000;
    std::int64_t stage2_iters = 14000;
    std::int64_t stage3_iters = 14000;

    // Learning rates (initial -> final, log-linear decay over lr_decay_steps;
    // stage 3 holds the final values).
    float lr_offsets = 0.01f;
    float lr_offsets_final = 1e-5f;
    float lr_feature = 0.0075f;
    float lr_feature_final = 0.0075f;
    float lr_anchor_scale = 0.007f;
    float lr_anchor_scale_final = 0.007f;
    float lr_opacity_head = 0.002f;
    float lr_opacity_head_final = 2e-6f;
    float lr_color_head = 0.008f;
    float lr_color_head_final = 5e-7f;
    float lr_cov_heads = 0.004f;  // rotation + scale heads
    float lr_cov_heads_final = 4e-6f;
    float lr_grid = 0.0016f;
    float lr_grid_final = 1.6e-4f;
    float lr_decoders = 0.00016f;
    float lr_decoders_final = 1.6e-5f;
    std::int64_t lr_decay_steps = 14000;

    // Density control.
    float tau_grad = 0.0002f;
    float tau_grad_refine = 0.0001f;
    float tau_opacity = 0.05f;
    float tau_opacity_refine = 0.03f;
    std::int64_t densify_start = 500;
    std::int64_t densify_every = 100;
    std::int64_t grow_until = 12000;

    // Loss weights.
    float lambda_ssim = 0.2f;
    float lambda_tv = 0.0002f;
    float lambda_vol = 0.015f;

    // Crude-view detection.
    float gamma_start = 0.05f;
    float gamma_end = 0.02f;
    float ema_momentum = 0.4f;
    std::int64_t flag_warmup = 500;

    // Model shape.
    float voxel_size = 0.1f;
    int gaussians_per_anchor = 10;
    int feature_dim = 32;
    int head_hidden = 32;
    std::array<int, 4> field_resolution = {64, 64, 64, 25};
    std::vector<int> field_multipliers = {1, 2};
    int field_feature_dim = 16;
    int decoder_hidden = 64;
    int decoder_feature_dim = 64;
    float scale_floor = 1e-6f;
    float field_padding = 0.25f;  // bounding-box expansion fraction

    std::array<float, 3> background = {0.f, 0.f, 0.f};
    std::uint64_t seed = 0;
};

TrainConfig load_config(const std::filesystem::path& path);
void save_config(const TrainConfig& config, const std::filesystem::path& path);
std::string config_to_json(const TrainConfig& config);
TrainConfig config_from_json(const std::string& text);

}  // namespace nvs
