#include "rra/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace rra {

namespace {

unsigned char to_byte(double v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// classic jet ramp: blue -> cyan -> yellow -> red
void jet(double v, unsigned char rgb[3]) {
    v = std::clamp(v, 0.0, 1.0);
    const double r = std::clamp(1.5 - std::abs(4.0 * v - 3.0), 0.0, 1.0);
    const double g = std::clamp(1.5 - std::abs(4.0 * v - 2.0), 0.0, 1.0);
    const double b = std::clamp(1.5 - std::abs(4.0 * v - 1.0), 0.0, 1.0);
    rgb[0] = to_byte(r);
    rgb[1] = to_byte(g);
    rgb[2] = to_byte(b);
}

} // namespace

void write_ppm(const std::filesystem::path& path, const ImageRGB8& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open image for writing: " + path.string());
    os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.pixels.data()),
             static_cast<std::streamsize>(img.pixels.size()));
    if (!os) throw std::runtime_error("image write failed: " + path.string());
}

ImageRGB8 read_ppm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open image: " + path.string());
    std::string magic;
    is >> magic;
    if (magic != "P6") throw std::runtime_error("not a P6 PPM: " + path.string());
    std::int64_t w = 0, h = 0, maxval = 0;
    is >> w >> h >> maxval;
    if (!is || w < 1 || h < 1 || maxval != 255) throw std::runtime_error("bad PPM header: " + path.string());
    is.get(); // single whitespace after header
    ImageRGB8 img;
    img.width = w;
    img.height = h;
    img.pixels.resize(static_cast<std::size_t>(3 * w * h));
    is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!is) throw std::runtime_error("PPM truncated: " + path.string());
    return img;
}

ImageRGB8 apply_colormap(const Tensor<float>& normalized, const std::string& colormap) {
    if (normalized.ndim() != 2) throw std::invalid_argument("apply_colormap: map must be rank 2");
    const std::int64_t h = normalized.extent(0), w = normalized.extent(1);
    ImageRGB8 img;
    img.height = h;
    img.width = w;
    img.pixels.resize(static_cast<std::size_t>(3 * h * w));
    const bool gray = colormap == "gray";
    if (!gray && colormap != "jet")
        throw std::invalid_argument("unknown colormap '" + colormap + "' (expected gray or jet)");
    for (std::int64_t r = 0; r < h; ++r)
        for (std::int64_t c = 0; c < w; ++c) {
            const double v = static_cast<double>(normalized[r * w + c]);
            if (gray) {
                const unsigned char b = to_byte(v);
                img.at(r, c, 0) = img.at(r, c, 1) = img.at(r, c, 2) = b;
            } else {
                unsigned char rgb[3];
                jet(v, rgb);
                img.at(r, c, 0) = rgb[0];
                img.at(r, c, 1) = rgb[1];
                img.at(r, c, 2) = rgb[2];
            }
        }
    return img;
}

ImageRGB8 blend_over(const ImageRGB8& heat, const Tensor<float>& base_frame, double alpha) {
    if (base_frame.ndim() != 3) throw std::invalid_argument("blend_over: base frame must be [C, H, W]");
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("blend_over: alpha must lie in [0, 1]");
    const std::int64_t c = base_frame.extent(0), h = base_frame.extent(1), w = base_frame.extent(2);
    if (h != heat.height || w != heat.width)
        throw std::invalid_argument("blend_over: heatmap and frame sizes differ");
    ImageRGB8 out = heat;
    for (std::int64_t r = 0; r < h; ++r)
        for (std::int64_t q = 0; q < w; ++q)
            for (int ch = 0; ch < 3; ++ch) {
                const std::int64_t src = std::min<std::int64_t>(ch, c - 1);
                const double base = std::clamp(
                    static_cast<double>(base_frame[(src * h + r) * w + q]), 0.0, 1.0);
                const double mixed = alpha * (heat.at(r, q, ch) / 255.0) + (1.0 - alpha) * base;
                out.at(r, q, ch) = to_byte(mixed);
            }
    return out;
}

} // namespace rra
