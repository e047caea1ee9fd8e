#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nvs/adam.hpp"
#include "nvs/anchors.hpp"
#include "nvs/config.hpp"
#include "nvs/ema.hpp"
#include "nvs/hexplane.hpp"
#include "nvs/rng.hpp"

namespace nvs {

// Full trainable state plus everything needed to resume a run bit-exactly:
// optimizer moments, densification window, detector EMAs, the refinement
// stack, the stage/step cursor and the RNG stream.
struct Model {
    TrainConfig config;

    std::vector<Anchor<float>> anchors;
    GaussianHeads<float> heads;
    HexPlaneField<float> field;
    DeformationDecoders<float> decoders;

    AdamState<float> opt_feature;       // rows of feature_dim
    AdamState<float> opt_offsets;       // rows of k * 3
    AdamState<float> opt_anchor_scale;  // rows of 3
    AdamState<float> opt_opacity_head;
    AdamState<float> opt_color_head;
    AdamState<float> opt_scale_head;
    AdamState<float> opt_rotation_head;
    AdamState<float> opt_grid;
    AdamState<float> opt_decoders;

    DensifyStats stats;
    EmaTracker psnr_tracker;
    EmaTracker grad_tracker;
    RefinementStack stack;

    int stage = 1;             // next stage to run (4 = finished)
    std::int64_t step = 0;     // next step within that stage
    std::int64_t next_anchor_id = 0;
    Rng rng;

    static Model initialize(const TrainConfig& config, std::span<const Vec3f> points,
                            const Vec3f& bb_min, const Vec3f& bb_max);

    std::size_t trainable_parameter_count() const;

    // Grow/prune between optimization steps, keeping optimizer rows and the
    // stats window in sync with the anchor list.
    void densify(bool grow, bool prune, float tau_g, float tau_alpha, std::int64_t iteration);

    // Optimizer steps per parameter group.
    void step_anchor_groups(const AnchorGrads<float>& grads, float lr_feature, float lr_offsets,
                            float lr_scale);
    void step_heads(const HeadsGrads<float>& grads, float lr_opacity, float lr_color,
                    float lr_cov);
    void step_field(const FieldGrads<float>& grads, float lr);
    void step_decoders(const DecoderGrads<float>& grads, float lr);
};

// Shared helper: one Adam step over an MLP's layers against a single state.
void adam_step_mlp(Mlp<float>& net, const MlpGrads<float>& grads, AdamState<float>& state,
                   float lr);

}  // namespace nvs
