#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "nvs/dataset.hpp"
#include "nvs/quaternion.hpp"
#include "nvs/vec.hpp"

namespace nvs {

// Desk-scale ground-truth scene: a cluster of opaque Gaussian blobs drifting
// linearly over the normalized time range, observed from a camera ring.
struct SceneSpec {
    int width = 48;
    int height = 48;
    int cameras = 4;
    int timestamps = 8;
    int blobs = 12;
    float motion_amplitude = 0.25f;
    float camera_distance = 4.0f;
    float blob_scale_min = 0.06f;
    float blob_scale_max = 0.14f;
    float blob_spread = 0.9f;  // cluster radius
    // Hard viewpoints: the last `hard_cameras` cameras sit much closer, so the
    // same world motion sweeps far more pixels in their views.
    int hard_cameras = 0;
    float hard_camera_distance = 1.8f;
    // Optional shared drift direction (unit vector); otherwise per-blob random.
    bool directional_motion = false;
    Vec3f motion_direction{1.f, 0.f, 0.f};
};

SceneSpec scene_spec_from_json(const std::string& text);
std::string scene_spec_to_json(const SceneSpec& spec);
SceneSpec load_scene_spec(const std::filesystem::path& path);

struct SyntheticBlob {
    Vec3f center;
    Vec3f drift;  // position(t) = center + drift * t
    Vec3f scale;
    Quat<float> rotation;
    Vec3f color;
    float opacity;
};

struct SyntheticScene {
    Dataset dataset;
    std::vector<SyntheticBlob> blobs;
};

// Deterministic per seed. Blob placement consumes the RNG before any
// per-frame work, so the spatial layout (and with it the anchor grid) is
// independent of the timestamp count. Ground truth is rendered with the
// naive reference rasterizer and quantized to 8 bits.
SyntheticScene generate_synthetic_scene(const SceneSpec& spec, std::uint64_t seed);

}  // namespace nvs
