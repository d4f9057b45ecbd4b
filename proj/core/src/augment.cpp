#include "rra/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rra {

namespace {

void require_frame(const Tensor<float>& frame) {
    if (frame.ndim() != 3) throw std::invalid_argument("augment: frame must be [channels, H, W]");
}

// the 5 anchor positions for a size-s crop inside an HxW frame
std::array<std::pair<std::int64_t, std::int64_t>, 5> crop_anchors(std::int64_t h, std::int64_t w,
                                                                  std::int64_t s) {
    return {{{0, 0}, {0, w - s}, {h - s, 0}, {h - s, w - s}, {(h - s) / 2, (w - s) / 2}}};
}

} // namespace

Tensor<float> hflip(const Tensor<float>& frame) {
    require_frame(frame);
    const std::int64_t c = frame.extent(0), h = frame.extent(1), w = frame.extent(2);
    Tensor<float> out(frame.shape());
    for (std::int64_t j = 0; j < c; ++j)
        for (std::int64_t r = 0; r < h; ++r)
            for (std::int64_t q = 0; q < w; ++q)
                out[(j * h + r) * w + q] = frame[(j * h + r) * w + (w - 1 - q)];
    return out;
}

Tensor<float> crop(const Tensor<float>& frame, std::int64_t row0, std::int64_t col0, std::int64_t size) {
    require_frame(frame);
    const std::int64_t c = frame.extent(0), h = frame.extent(1), w = frame.extent(2);
    if (size < 1 || row0 < 0 || col0 < 0 || row0 + size > h || col0 + size > w)
        throw std::invalid_argument("crop: window outside frame bounds");
    Tensor<float> out(Shape{c, size, size});
    for (std::int64_t j = 0; j < c; ++j)
        for (std::int64_t r = 0; r < size; ++r)
            for (std::int64_t q = 0; q < size; ++q)
                out[(j * size + r) * size + q] = frame[(j * h + (row0 + r)) * w + (col0 + q)];
    return out;
}

Tensor<float> resize_bilinear(const Tensor<float>& frame, std::int64_t out_hw) {
    require_frame(frame);
    const std::int64_t c = frame.extent(0), h = frame.extent(1), w = frame.extent(2);
    if (out_hw < 1) throw std::invalid_argument("resize: output size must be positive");
    if (h == out_hw && w == out_hw) return frame;
    Tensor<float> out(Shape{c, out_hw, out_hw});
    const double sr = static_cast<double>(h) / static_cast<double>(out_hw);
    const double sc = static_cast<double>(w) / static_cast<double>(out_hw);
    for (std::int64_t r = 0; r < out_hw; ++r) {
        const double fr = std::max(0.0, (static_cast<double>(r) + 0.5) * sr - 0.5);
        const std::int64_t r0 = std::min<std::int64_t>(static_cast<std::int64_t>(fr), h - 1);
        const std::int64_t r1 = std::min<std::int64_t>(r0 + 1, h - 1);
        const float tr = static_cast<float>(fr - static_cast<double>(r0));
        for (std::int64_t q = 0; q < out_hw; ++q) {
            const double fq = std::max(0.0, (static_cast<double>(q) + 0.5) * sc - 0.5);
            const std::int64_t q0 = std::min<std::int64_t>(static_cast<std::int64_t>(fq), w - 1);
            const std::int64_t q1 = std::min<std::int64_t>(q0 + 1, w - 1);
            const float tq = static_cast<float>(fq - static_cast<double>(q0));
            for (std::int64_t j = 0; j < c; ++j) {
                const float v00 = frame[(j * h + r0) * w + q0];
                const float v01 = frame[(j * h + r0) * w + q1];
                const float v10 = frame[(j * h + r1) * w + q0];
                const float v11 = frame[(j * h + r1) * w + q1];
                const float top = v00 + (v01 - v00) * tq;
                const float bot = v10 + (v11 - v10) * tq;
                out[(j * out_hw + r) * out_hw + q] = top + (bot - top) * tr;
            }
        }
    }
    return out;
}

Tensor<float> augment_train(const Tensor<float>& frame, std::int64_t target_hw, Rng& rng) {
    require_frame(frame);
    const std::int64_t h = frame.extent(1), w = frame.extent(2);
    const std::int64_t short_side = std::min(h, w);
    if (short_side < target_hw) throw std::invalid_argument("augment: frame smaller than target crop");
    const double scale = kTrainCropScales[static_cast<std::size_t>(rng.index(4))];
    std::int64_t size = static_cast<std::int64_t>(std::lround(scale * static_cast<double>(short_side)));
    size = std::clamp<std::int64_t>(size, std::min<std::int64_t>(target_hw, short_side), short_side);
    const auto anchors = crop_anchors(h, w, size);
    const auto [r0, c0] = anchors[static_cast<std::size_t>(rng.index(5))];
    Tensor<float> out = crop(frame, r0, c0, size);
    if (rng.coin()) out = hflip(out);
    return resize_bilinear(out, target_hw);
}

std::vector<Tensor<float>> test_crop_variants(const Tensor<float>& frame, std::int64_t target_hw,
                                              int crops, bool flip) {
    require_frame(frame);
    if (crops != 1 && crops != 5) throw std::invalid_argument("test_crop_variants: crops must be 1 or 5");
    const std::int64_t h = frame.extent(1), w = frame.extent(2);
    if (std::min(h, w) < target_hw)
        throw std::invalid_argument("test_crop_variants: frame smaller than crop size");
    const auto anchors = crop_anchors(h, w, target_hw);
    std::vector<Tensor<float>> out;
    out.reserve(static_cast<std::size_t>(crops) * (flip ? 2 : 1));
    if (crops == 1) {
        auto center = crop(frame, anchors[4].first, anchors[4].second, target_hw);
        if (flip) {
            auto flipped = hflip(center);
            out.push_back(std::move(center));
            out.push_back(std::move(flipped));
        } else {
            out.push_back(std::move(center));
        }
        return out;
    }
    for (const auto& [r0, c0] : anchors) {
        auto v = crop(frame, r0, c0, target_hw);
        if (flip) {
            auto flipped = hflip(v);
            out.push_back(std::move(v));
            out.push_back(std::move(flipped));
        } else {
            out.push_back(std::move(v));
        }
    }
    return out;
}

} // namespace rra
