#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace nvs {

// Interleaved RGB, values in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> rgb;

    bool empty() const { return rgb.empty(); }
    std::size_t pixel_count() const { return std::size_t(width) * height; }
};

inline std::uint8_t quantize8(float v) {
    const float c = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
    return std::uint8_t(std::lround(c * 255.f));
}

// Quantizes an image to 8 bits in place (the representation every dataset
// image uses, so disk round trips are exact).
inline void quantize_image(Image& img) {
    for (auto& v : img.rgb) v = float(quantize8(v)) / 255.f;
}

Image read_png(const std::filesystem::path& path);
void write_png(const Image& img, const std::filesystem::path& path);

}  // namespace nvs
