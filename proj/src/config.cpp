#include "nvs/config.hpp"

#include <fstream>
#include <iostream>
#include <set>

#include <json.hpp>

#include "nvs/common.hpp"

namespace nvs {

using ordered_json = nlohmann::ordered_json;

namespace {

ordered_json to_json(const TrainConfig& c) {
    ordered_json j;
    j["stage1_iters"] = c.stage1_iters;
    j["stage2_iters"] = c.stage2_iters;
    j["stage3_iters"] = c.stage3_iters;
    j["lr_offsets"] = c.lr_offsets;
    j["lr_offsets_final"] = c.lr_offsets_final;
    j["lr_feature"] = c.lr_feature;
    j["lr_feature_final"] = c.lr_feature_final;
    j["lr_anchor_scale"] = c.lr_anchor_scale;
    j["lr_anchor_scale_final"] = c.lr_anchor_scale_final;
    j["lr_opacity_head"] = c.lr_opacity_head;
    j["lr_opacity_head_final"] = c.lr_opacity_head_final;
    j["lr_color_head"] = c.lr_color_head;
    j["lr_color_head_final"] = c.lr_color_head_final;
    j["lr_cov_heads"] = c.lr_cov_heads;
    j["lr_cov_heads_final"] = c.lr_cov_heads_final;
    j["lr_grid"] = c.lr_grid;
    j["lr_grid_final"] = c.lr_grid_final;
    j["lr_decoders"] = c.lr_decoders;
    j["lr_decoders_final"] = c.lr_decoders_final;
    j["lr_decay_steps"] = c.lr_decay_steps;
    j["tau_grad"] = c.tau_grad;
    j["tau_grad_refine"] = c.tau_grad_refine;
    j["tau_opacity"] = c.tau_opacity;
    j["tau_opacity_refine"] = c.tau_opacity_refine;
    j["densify_start"] = c.densify_start;
    j["densify_every"] = c.densify_every;
    j["grow_until"] = c.grow_until;
    j["lambda_ssim"] = c.lambda_ssim;
    j["lambda_tv"] = c.lambda_tv;
    j["lambda_vol"] = c.lambda_vol;
    j["gamma_start"] = c.gamma_start;
    j["gamma_end"] = c.gamma_end;
    j["ema_momentum"] = c.ema_momentum;
    j["flag_warmup"] = c.flag_warmup;
    j["voxel_size"] = c.voxel_size;
    j["gaussians_per_anchor"] = c.gaussians_per_anchor;
    j["feature_dim"] = c.feature_dim;
    j["head_hidden"] = c.head_hidden;
    j["field_resolution"] = c.field_resolution;
    j["field_multipliers"] = c.field_multipliers;
    j["field_feature_dim"] = c.field_feature_dim;
    j["decoder_hidden"] = c.decoder_hidden;
    j["decoder_feature_dim"] = c.decoder_feature_dim;
    j["scale_floor"] = c.scale_floor;
    j["field_padding"] = c.field_padding;
    j["background"] = c.background;
    j["seed"] = c.seed;
    return j;
}

template <typename T>
void read_field(const ordered_json& j, const char* key, T& out) {
    if (auto it = j.find(key); it != j.end()) {
        try {
            out = it->get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw DataError(std::string("config: bad value for '") + key + "': " + e.what());
        }
    }
}

TrainConfig from_json(const ordered_json& j) {
    TrainConfig c;
    const ordered_json reference = to_json(c);
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!reference.contains(it.key()))
            std::cerr << "config: ignoring unknown key '" << it.key() << "'\n";
    }
    read_field(j, "stage1_iters", c.stage1_iters);
    read_field(j, "stage2_iters", c.stage2_iters);
    read_field(j, "stage3_iters", c.stage3_iters);
    read_field(j, "lr_offsets", c.lr_offsets);
    read_field(j, "lr_offsets_final", c.lr_offsets_final);
    read_field(j, "lr_feature", c.lr_feature);
    read_field(j, "lr_feature_final", c.lr_feature_final);
    read_field(j, "lr_anchor_scale", c.lr_anchor_scale);
    read_field(j, "lr_anchor_scale_final", c.lr_anchor_scale_final);
    read_field(j, "lr_opacity_head", c.lr_opacity_head);
    read_field(j, "lr_opacity_head_final", c.lr_opacity_head_final);
    read_field(j, "lr_color_head", c.lr_color_head);
    read_field(j, "lr_color_head_final", c.lr_color_head_final);
    read_field(j, "lr_cov_heads", c.lr_cov_heads);
    read_field(j, "lr_cov_heads_final", c.lr_cov_heads_final);
    read_field(j, "lr_grid", c.lr_grid);
    read_field(j, "lr_grid_final", c.lr_grid_final);
    read_field(j, "lr_decoders", c.lr_decoders);
    read_field(j, "lr_decoders_final", c.lr_decoders_final);
    read_field(j, "lr_decay_steps", c.lr_decay_steps);
    read_field(j, "tau_grad", c.tau_grad);
    read_field(j, "tau_grad_refine", c.tau_grad_refine);
    read_field(j, "tau_opacity", c.tau_opacity);
    read_field(j, "tau_opacity_refine", c.tau_opacity_refine);
    read_field(j, "densify_start", c.densify_start);
    read_field(j, "densify_every", c.densify_every);
    read_field(j, "grow_until", c.grow_until);
    read_field(j, "lambda_ssim", c.lambda_ssim);
    read_field(j, "lambda_tv", c.lambda_tv);
    read_field(j, "lambda_vol", c.lambda_vol);
    read_field(j, "gamma_start", c.gamma_start);
    read_field(j, "gamma_end", c.gamma_end);
    read_field(j, "ema_momentum", c.ema_momentum);
    read_field(j, "flag_warmup", c.flag_warmup);
    read_field(j, "voxel_size", c.voxel_size);
    read_field(j, "gaussians_per_anchor", c.gaussians_per_anchor);
    read_field(j, "feature_dim", c.feature_dim);
    read_field(j, "head_hidden", c.head_hidden);
    read_field(j, "field_resolution", c.field_resolution);
    read_field(j, "field_multipliers", c.field_multipliers);
    read_field(j, "field_feature_dim", c.field_feature_dim);
    read_field(j, "decoder_hidden", c.decoder_hidden);
    read_field(j, "decoder_feature_dim", c.decoder_feature_dim);
    read_field(j, "scale_floor", c.scale_floor);
    read_field(j, "field_padding", c.field_padding);
    read_field(j, "background", c.background);
    read_field(j, "seed", c.seed);

    if (c.stage1_iters <= 0 || c.stage2_iters <= 0 || c.stage3_iters <= 0)
        throw DataError("config: stage iteration counts must be positive");
    if (!(c.voxel_size > 0)) throw DataError("config: voxel_size must be positive");
    if (c.gaussians_per_anchor <= 0) throw DataError("config: gaussians_per_anchor must be positive");
    return c;
}

}  // namespace

std::string config_to_json(const TrainConfig& config) { return to_json(config).dump(2) + "\n"; }

TrainConfig config_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("config: parse failure: ") + e.what());
    }
    return from_json(j);
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("config: cannot open " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return config_from_json(text);
}

void save_config(const TrainConfig& config, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("config: cannot write " + path.string());
    out << config_to_json(config);
}

}  // namespace nvs
