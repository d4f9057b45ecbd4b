#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rra/tensor.hpp"

namespace rra {

/// Interleaved 8-bit RGB raster.
struct ImageRGB8 {
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<unsigned char> pixels; // 3 * height * width, row-major

    unsigned char& at(std::int64_t r, std::int64_t c, int ch) {
        return pixels[static_cast<std::size_t>((r * width + c) * 3 + ch)];
    }
    unsigned char at(std::int64_t r, std::int64_t c, int ch) const {
        return pixels[static_cast<std::size_t>((r * width + c) * 3 + ch)];
    }
};

// binary PPM (P6), a lossless raster format
void write_ppm(const std::filesystem::path& path, const ImageRGB8& img);
ImageRGB8 read_ppm(const std::filesystem::path& path);

/// Maps values in [0, 1] through a named colormap ("gray" or "jet").
ImageRGB8 apply_colormap(const Tensor<float>& normalized, const std::string& colormap);

/// alpha * heat + (1 - alpha) * base; base is a [C, H, W] frame clamped to
/// [0, 1] (first three channels used, single channel replicated).
ImageRGB8 blend_over(const ImageRGB8& heat, const Tensor<float>& base_frame, double alpha);

} // namespace rra
