#include "nvs/synthetic.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "nvs/common.hpp"
#include "nvs/dataset.hpp"
#include "nvs/render.hpp"
#include "nvs/rng.hpp"

namespace nvs {

using ordered_json = nlohmann::ordered_json;

namespace {

template <typename T>
void read_field(const ordered_json& j, const char* key, T& out) {
    if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

}  // namespace

std::string scene_spec_to_json(const SceneSpec& s) {
    ordered_json j;
    j["width"] = s.width;
    j["height"] = s.height;
    j["cameras"] = s.cameras;
    j["timestamps"] = s.timestamps;
    j["blobs"] = s.blobs;
    j["motion_amplitude"] = s.motion_amplitude;
    j["camera_distance"] = s.camera_distance;
    j["blob_scale_min"] = s.blob_scale_min;
    j["blob_scale_max"] = s.blob_scale_max;
    j["blob_spread"] = s.blob_spread;
    j["hard_cameras"] = s.hard_cameras;
    j["hard_camera_distance"] = s.hard_camera_distance;
    j["directional_motion"] = s.directional_motion;
    j["motion_direction"] = {s.motion_direction.x, s.motion_direction.y, s.motion_direction.z};
    return j.dump(2) + "\n";
}

SceneSpec scene_spec_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("scene spec: parse failure: ") + e.what());
    }
    SceneSpec s;
    read_field(j, "width", s.width);
    read_field(j, "height", s.height);
    read_field(j, "cameras", s.cameras);
    read_field(j, "timestamps", s.timestamps);
    read_field(j, "blobs", s.blobs);
    read_field(j, "motion_amplitude", s.motion_amplitude);
    read_field(j, "camera_distance", s.camera_distance);
    read_field(j, "blob_scale_min", s.blob_scale_min);
    read_field(j, "blob_scale_max", s.blob_scale_max);
    read_field(j, "blob_spread", s.blob_spread);
    read_field(j, "hard_cameras", s.hard_cameras);
    read_field(j, "hard_camera_distance", s.hard_camera_distance);
    read_field(j, "directional_motion", s.directional_motion);
    if (auto it = j.find("motion_direction"); it != j.end()) {
        s.motion_direction = {(*it)[0].get<float>(), (*it)[1].get<float>(), (*it)[2].get<float>()};
    }
    if (s.width <= 0 || s.height <= 0 || s.cameras <= 0 || s.timestamps <= 0 || s.blobs <= 0)
        throw DataError("scene spec: sizes must be positive");
    if (s.hard_cameras > s.cameras) throw DataError("scene spec: hard_cameras exceeds cameras");
    return s;
}

SceneSpec load_scene_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("scene spec: cannot open " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return scene_spec_from_json(text);
}

SyntheticScene generate_synthetic_scene(const SceneSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    SyntheticScene scene;

    // Blob layout first: independent of camera and timestamp counts.
    for (int b = 0; b < spec.blobs; ++b) {
        SyntheticBlob blob;
        Vec3f dir{float(rng.normal()), float(rng.normal()), float(rng.normal())};
        if (dir.norm() < 1e-6f) dir = {1, 0, 0};
        blob.center = dir.normalized() * (spec.blob_spread * float(std::cbrt(rng.uniform())));
        blob.scale = {rng.uniform_float(spec.blob_scale_min, spec.blob_scale_max),
                      rng.uniform_float(spec.blob_scale_min, spec.blob_scale_max),
                      rng.uniform_float(spec.blob_scale_min, spec.blob_scale_max)};
        Quat<float> q{float(rng.normal()), float(rng.normal()), float(rng.normal()),
                      float(rng.normal())};
        blob.rotation = q.norm() > 1e-6f ? q.normalized() : Quat<float>{1, 0, 0, 0};
        blob.color = {rng.uniform_float(0.15f, 0.95f), rng.uniform_float(0.15f, 0.95f),
                      rng.uniform_float(0.15f, 0.95f)};
        blob.opacity = rng.uniform_float(0.8f, 0.97f);
        Vec3f drift_dir;
        if (spec.directional_motion) {
            drift_dir = spec.motion_direction.normalized();
            (void)rng.normal();  // keep the stream layout fixed either way
            (void)rng.normal();
            (void)rng.normal();
        } else {
            drift_dir = {float(rng.normal()), float(rng.normal()), float(rng.normal())};
            drift_dir = drift_dir.norm() > 1e-6f ? drift_dir.normalized() : Vec3f{1, 0, 0};
        }
        blob.drift = drift_dir * spec.motion_amplitude;
        scene.blobs.push_back(blob);
    }

    Dataset& ds = scene.dataset;
    for (const auto& b : scene.blobs) ds.points.push_back(b.center);
    ds.compute_bounds();

    // Camera ring; hard viewpoints (if any) come last, much closer in.
    std::vector<Cameraf> cameras(spec.cameras);
    std::vector<Vec3f> eyes(spec.cameras);
    for (int c = 0; c < spec.cameras; ++c) {
        const bool hard = c >= spec.cameras - spec.hard_cameras;
        const float dist = hard ? spec.hard_camera_distance : spec.camera_distance;
        const float angle = 2.f * float(M_PI) * float(c) / float(spec.cameras);
        Cameraf& cam = cameras[c];
        cam.fx = cam.fy = 1.25f * float(spec.width);
        cam.cx = 0.5f * float(spec.width - 1);
        cam.cy = 0.5f * float(spec.height - 1);
        cam.width = spec.width;
        cam.height = spec.height;
        cam.near_plane = 0.05f;
        cam.far_plane = 4.f * spec.camera_distance + 4.f;
        eyes[c] = {dist * std::sin(angle), 0.f, -dist * std::cos(angle)};
        look_at(cam, eyes[c], Vec3f{0, 0, 0});
    }

    // Ground truth via the naive reference path, quantized to 8 bits.
    const Vec3<float> background{0, 0, 0};
    for (int c = 0; c < spec.cameras; ++c) {
        for (int ti = 0; ti < spec.timestamps; ++ti) {
            const float t =
                spec.timestamps == 1 ? 0.f : float(double(ti) / double(spec.timestamps - 1));
            std::vector<Splat2D<float>> splats;
            for (std::size_t b = 0; b < scene.blobs.size(); ++b) {
                const auto& blob = scene.blobs[b];
                const Vec3f pos = blob.center + blob.drift * t;
                const Mat3f cov = covariance_from_scale_rotation(blob.scale, blob.rotation);
                auto s = project_gaussian(pos, cov, cameras[c], int(b));
                if (!s) continue;
                s->color = blob.color;
                s->opacity = blob.opacity;
                splats.push_back(*s);
            }
            DatasetEntry entry;
            entry.camera = cameras[c];
            entry.camera.timestamp = t;
            entry.eye = eyes[c];
            entry.time = t;
            entry.image.width = spec.width;
            entry.image.height = spec.height;
            entry.image.rgb =
                rasterize_reference(splats, spec.height, spec.width, background);
            quantize_image(entry.image);
            entry.image_path =
                "frames/cam" + std::to_string(c) + "_t" + std::to_string(ti) + ".png";
            ds.entries.push_back(std::move(entry));
        }
    }
    return scene;
}

}  // namespace nvs
