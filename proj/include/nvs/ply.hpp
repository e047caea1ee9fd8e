#pragma once

#include <filesystem>
#include <vector>

#include "nvs/model.hpp"

namespace nvs {

// One record per exported Gaussian, in the splatting-community PLY layout
// (raw positions; log scales, logit opacity and DC spherical-harmonics color
// as stored on disk are undone on read).
struct ExportedGaussian {
    Vec3f position;
    Vec3f scale;
    Quat<float> rotation;
    Vec3f color;
    float opacity;
};

// Spawns and deforms every anchor's Gaussians for a canonical full-coverage
// view at time t and writes them as binary little-endian PLY. Returns the
// record count (= visible anchors * k).
std::size_t export_gaussians(const Model& model, float t, const std::filesystem::path& path);

std::vector<ExportedGaussian> read_gaussian_ply(const std::filesystem::path& path);

}  // namespace nvs
