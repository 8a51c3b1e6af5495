#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "attnguide/errors.hpp"
#include "attnguide/tensor.hpp"

// Binary PPM (P6) output: zero-dependency, bit-exact, trivially diffable.

namespace attnguide {

namespace detail {

// Fixed rounding rule for all channel quantization: round half up.
inline uint8_t quantize_byte(double unit) {
    const double v = std::floor(unit * 255.0 + 0.5);
    return static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
}

inline void write_ppm(const std::filesystem::path& path, size_t w, size_t h,
                      const std::vector<uint8_t>& rgb) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image " + path.string());
    out << "P6\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!out) throw IoError("short write to " + path.string());
}

// Monochrome-to-warm ramp (black -> red -> yellow -> white) with monotone
// luminance.
inline void warm_color(double t, uint8_t* rgb) {
    t = std::clamp(t, 0.0, 1.0);
    rgb[0] = quantize_byte(std::clamp(3.0 * t, 0.0, 1.0));
    rgb[1] = quantize_byte(std::clamp(3.0 * t - 1.0, 0.0, 1.0));
    rgb[2] = quantize_byte(std::clamp(3.0 * t - 2.0, 0.0, 1.0));
}

}  // namespace detail

// Image tensor (h, w, 3) in [-1, 1] -> P6 bytes, linear map to [0, 255].
template <typename S>
void write_image(const Tensor<S>& image, const std::filesystem::path& path) {
    if (image.rank() != 3 || image.size(2) != 3)
        throw DimensionError("write_image: expected (h, w, 3) tensor, got " +
                             shape_str(image.shape()));
    const size_t h = image.size(0), w = image.size(1);
    std::vector<uint8_t> rgb(h * w * 3);
    for (size_t i = 0; i < rgb.size(); ++i)
        rgb[i] = detail::quantize_byte((static_cast<double>(image[i]) + 1.0) * 0.5);
    detail::write_ppm(path, w, h, rgb);
}

// Attention grid (g, g) with values in [0, max] -> gx16 x gx16 PPM,
// nearest-neighbor upsampled, normalized by the grid maximum.
template <typename S>
void write_heatmap(const Tensor<S>& grid, const std::filesystem::path& path,
                   size_t upsample = 16) {
    if (grid.rank() != 2) throw DimensionError("write_heatmap: expected 2-D grid");
    const size_t gh = grid.size(0), gw = grid.size(1);
    double mx = 0;
    for (size_t i = 0; i < grid.numel(); ++i)
        mx = std::max(mx, static_cast<double>(grid[i]));
    const size_t h = gh * upsample, w = gw * upsample;
    std::vector<uint8_t> rgb(h * w * 3);
    for (size_t y = 0; y < h; ++y)
        for (size_t x = 0; x < w; ++x) {
            const double v = static_cast<double>(grid[(y / upsample) * gw + (x / upsample)]);
            detail::warm_color(mx > 0 ? v / mx : 0.0, &rgb[(y * w + x) * 3]);
        }
    detail::write_ppm(path, w, h, rgb);
}

}  // namespace attnguide
