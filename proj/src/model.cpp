#include "nvs/model.hpp"

#include <stdexcept>

namespace nvs {

void adam_step_mlp(Mlp<float>& net, const MlpGrads<float>& grads, AdamState<float>& state,
                   float lr) {
    const std::int64_t t = state.begin_step();
    std::size_t off = 0;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        auto& layer = net.layers[l];
        adam_update<float>(std::span<float>(layer.w), std::span<const float>(grads.w[l]),
                           std::span<float>(state.m.data() + off, layer.w.size()),
                           std::span<float>(state.v.data() + off, layer.w.size()), t, state.beta1,
                           state.beta2, state.eps, lr);
        off += layer.w.size();
        adam_update<float>(std::span<float>(layer.b), std::span<const float>(grads.b[l]),
                           std::span<float>(state.m.data() + off, layer.b.size()),
                           std::span<float>(state.v.data() + off, layer.b.size()), t, state.beta1,
                           state.beta2, state.eps, lr);
        off += layer.b.size();
    }
}

Model Model::initialize(const TrainConfig& config, std::span<const Vec3f> points,
                        const Vec3f& bb_min, const Vec3f& bb_max) {
    Model m;
    m.config = config;
    m.rng = Rng(config.seed);

    const auto centers = voxelize(points, config.voxel_size);
    const int k = config.gaussians_per_anchor;
    m.anchors.reserve(centers.size());
    for (const auto& c : centers) {
        Anchor<float> a;
        a.center = c;
        a.feature.assign(config.feature_dim, 0.f);
        a.scale = {config.voxel_size, config.voxel_size, config.voxel_size};
        a.offsets.resize(k);
        for (auto& o : a.offsets)
            o = {m.rng.uniform_float(-0.5f, 0.5f), m.rng.uniform_float(-0.5f, 0.5f),
                 m.rng.uniform_float(-0.5f, 0.5f)};
        a.id = m.next_anchor_id++;
        m.anchors.push_back(std::move(a));
    }

    m.heads = GaussianHeads<float>::make(config.feature_dim, k, config.head_hidden, m.rng);

    // Field box: scene bounds padded so deformed positions stay in range.
    Vec3f lo = bb_min, hi = bb_max;
    for (int i = 0; i < 3; ++i) {
        float extent = hi[i] - lo[i];
        if (extent <= 0.f) extent = 1.f;
        const float pad = std::max(extent * config.field_padding, config.voxel_size);
        lo[i] -= pad;
        hi[i] += pad;
    }
    m.field = HexPlaneField<float>::make(lo, hi, config.field_resolution,
                                         config.field_multipliers, config.field_feature_dim,
                                         m.rng);
    m.decoders = DeformationDecoders<float>::make(m.field.feature_size(), config.decoder_hidden,
                                                  config.decoder_feature_dim, m.rng);

    const std::size_t n = m.anchors.size();
    m.opt_feature = AdamState<float>::zeros(n * config.feature_dim);
    m.opt_offsets = AdamState<float>::zeros(n * std::size_t(k) * 3);
    m.opt_anchor_scale = AdamState<float>::zeros(n * 3);
    m.opt_opacity_head = AdamState<float>::zeros(m.heads.opacity.parameter_count());
    m.opt_color_head = AdamState<float>::zeros(m.heads.color.parameter_count());
    m.opt_scale_head = AdamState<float>::zeros(m.heads.scale.parameter_count());
    m.opt_rotation_head = AdamState<float>::zeros(m.heads.rotation.parameter_count());
    m.opt_grid = AdamState<float>::zeros(m.field.parameter_count());
    m.opt_decoders = AdamState<float>::zeros(m.decoders.parameter_count());

    m.stats.resize(n, k);
    return m;
}

std::size_t Model::trainable_parameter_count() const {
    const std::size_t per_anchor =
        std::size_t(config.feature_dim) + std::size_t(config.gaussians_per_anchor) * 3 + 3;
    return anchors.size() * per_anchor + heads.parameter_count() + field.parameter_count() +
           decoders.parameter_count();
}

void Model::densify(bool grow, bool prune, float tau_g, float tau_alpha, std::int64_t iteration) {
    const int k = config.gaussians_per_anchor;
    if (grow) {
        const std::size_t before = anchors.size();
        anchors = grow_anchors(anchors, stats, config.voxel_size, tau_g, next_anchor_id);
        const std::size_t added = anchors.size() - before;
        if (added) {
            opt_feature.append_rows(config.feature_dim, added);
            opt_offsets.append_rows(std::size_t(k) * 3, added);
            opt_anchor_scale.append_rows(3, added);
        }
    }
    if (prune) {
        // The keep mask covers the (possibly just grown) list; anchors outside
        // the stats window are always kept, so mask and optimizer rows agree.
        std::vector<char> keep;
        anchors = prune_anchors(anchors, stats, tau_alpha, &keep);
        opt_feature.keep_rows(config.feature_dim, keep);
        opt_offsets.keep_rows(std::size_t(k) * 3, keep);
        opt_anchor_scale.keep_rows(3, keep);
    }
    stats.resize(anchors.size(), k);
    stats.window_start = iteration;
}

void Model::step_anchor_groups(const AnchorGrads<float>& grads, float lr_feature,
                               float lr_offsets, float lr_scale) {
    const std::size_t n = anchors.size();
    const int k = config.gaussians_per_anchor;
    if (grads.feature.size() != n * std::size_t(config.feature_dim))
        throw std::invalid_argument("model: anchor gradient size mismatch");

    const std::int64_t tf = opt_feature.begin_step();
    const std::int64_t to = opt_offsets.begin_step();
    const std::int64_t ts = opt_anchor_scale.begin_step();
    for (std::size_t i = 0; i < n; ++i) {
        Anchor<float>& a = anchors[i];
        const std::size_t fo = i * config.feature_dim;
        adam_update<float>(std::span<float>(a.feature),
                           std::span<const float>(grads.feature.data() + fo, config.feature_dim),
                           std::span<float>(opt_feature.m.data() + fo, config.feature_dim),
                           std::span<float>(opt_feature.v.data() + fo, config.feature_dim), tf,
                           opt_feature.beta1, opt_feature.beta2, opt_feature.eps, lr_feature);
        const std::size_t oo = i * std::size_t(k) * 3;
        adam_update<float>(std::span<float>(&a.offsets[0].x, std::size_t(k) * 3),
                           std::span<const float>(grads.offsets.data() + oo, std::size_t(k) * 3),
                           std::span<float>(opt_offsets.m.data() + oo, std::size_t(k) * 3),
                           std::span<float>(opt_offsets.v.data() + oo, std::size_t(k) * 3), to,
                           opt_offsets.beta1, opt_offsets.beta2, opt_offsets.eps, lr_offsets);
        const std::size_t so = i * 3;
        adam_update<float>(std::span<float>(&a.scale.x, 3),
                           std::span<const float>(grads.scale.data() + so, 3),
                           std::span<float>(opt_anchor_scale.m.data() + so, 3),
                           std::span<float>(opt_anchor_scale.v.data() + so, 3), ts, opt_anchor_scale.beta1, opt_anchor_scale.beta2,
                           opt_anchor_scale.eps, lr_scale);
        // l_v must stay strictly positive.
        for (int j = 0; j < 3; ++j) a.scale[j] = std::max(a.scale[j], 1e-5f);
    }
}

void Model::step_heads(const HeadsGrads<float>& grads, float lr_opacity, float lr_color,
                       float lr_cov) {
    adam_step_mlp(heads.opacity, grads.opacity, opt_opacity_head, lr_opacity);
    adam_step_mlp(heads.color, grads.color, opt_color_head, lr_color);
    adam_step_mlp(heads.scale, grads.scale, opt_scale_head, lr_cov);
    adam_step_mlp(heads.rotation, grads.rotation, opt_rotation_head, lr_cov);
}

void Model::step_field(const FieldGrads<float>& grads, float lr) {
    const std::int64_t t = opt_grid.begin_step();
    std::size_t off = 0;
    for (std::size_t s = 0; s < field.scales.size(); ++s) {
        for (int p = 0; p < 6; ++p) {
            auto& data = field.scales[s][p].data;
            adam_update<float>(std::span<float>(data), std::span<const float>(grads.scales[s][p]),
                               std::span<float>(opt_grid.m.data() + off, data.size()),
                               std::span<float>(opt_grid.v.data() + off, data.size()), t, opt_grid.beta1,
                               opt_grid.beta2, opt_grid.eps, lr);
            off += data.size();
        }
    }
}

void Model::step_decoders(const DecoderGrads<float>& grads, float lr) {
    const std::int64_t t = opt_decoders.begin_step();
    std::size_t off = 0;
    const auto step_net = [&](Mlp<float>& net, const MlpGrads<float>& g) {
        for (std::size_t l = 0; l < net.layers.size(); ++l) {
            auto& layer = net.layers[l];
            adam_update<float>(std::span<float>(layer.w), std::span<const float>(g.w[l]),
                               std::span<float>(opt_decoders.m.data() + off, layer.w.size()),
                               std::span<float>(opt_decoders.v.data() + off, layer.w.size()), t,
                               opt_decoders.beta1, opt_decoders.beta2, opt_decoders.eps, lr);
            off += layer.w.size();
            adam_update<float>(std::span<float>(layer.b), std::span<const float>(g.b[l]),
                               std::span<float>(opt_decoders.m.data() + off, layer.b.size()),
                               std::span<float>(opt_decoders.v.data() + off, layer.b.size()), t,
                               opt_decoders.beta1, opt_decoders.beta2, opt_decoders.eps, lr);
            off += layer.b.size();
        }
    };
    step_net(decoders.fuser, grads.fuser);
    step_net(decoders.position_head, grads.position);
    step_net(decoders.rotation_head, grads.rotation);
    step_net(decoders.scale_head, grads.scale);
}

}  // namespace nvs
