#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nvs/camera.hpp"
#include "nvs/image.hpp"
#include "nvs/vec.hpp"

namespace nvs {

struct DatasetEntry {
    Cameraf camera;  // camera.timestamp holds the normalized time
    Vec3f eye{};     // camera-to-world position as stored on disk; the pose
                     // satisfies translation == -R * eye bit-exactly
    std::string image_path;
    Image image;
    float time = 0.f;
};

struct Dataset {
    std::vector<DatasetEntry> entries;
    std::vector<Vec3f> points;
    Vec3f bb_min{}, bb_max{};

    void compute_bounds();
};

// Normalizes raw timestamps to [0, 1]; a single frame maps to 0, several
// frames sharing one timestamp are rejected as degenerate.
std::vector<float> normalize_timestamps(const std::vector<double>& raw);

// Reads the transforms.json schema: per frame {file_path, time,
// transform_matrix (camera-to-world, row-major), fl_x, fl_y, cx, cy, w, h}
// plus a top-level points array. Cameras use +z-forward/-y-up (OpenCV) axes.
Dataset load_dataset(const std::filesystem::path& directory);

// Writes the same schema (used by the synthetic generator and tests).
void write_dataset(const Dataset& dataset, const std::filesystem::path& directory);

}  // namespace nvs
