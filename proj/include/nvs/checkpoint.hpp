#pragma once

#include <filesystem>

#include "nvs/model.hpp"

namespace nvs {

// Little-endian binary snapshot of the full training state (magic "NVS4"):
// parameters, optimizer moments, densify window, detector EMAs, refinement
// stack, stage cursor and RNG stream. save -> load -> save is byte-identical
// and resumed runs continue exactly as uninterrupted ones.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace nvs
