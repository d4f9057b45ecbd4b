#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "rra/image.hpp"
#include "rra/model.hpp"

namespace rra {

/// What to render and how.
struct HeatmapRequest {
    enum class Target { attention_influence, suppression };
    Target target = Target::attention_influence;
    int glimpse = 0;
    int top_m = 4;               // suppression: number of most-suppressed channels
    double gaussian_sigma = 2.0; // 0 disables the blur
    std::string colormap = "jet";
    double overlay_alpha = 0.6; // heatmap weight when blending over a frame

    const char* target_name() const {
        return target == Target::attention_influence ? "influence" : "suppression";
    }
};

/// Half the squared norm of an attention distribution; 1/(2m) for uniform
/// weights over m positions, 0.5 for a one-hot.
template <class S>
S attention_energy(const Tensor<S>& a) {
    S acc = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) acc += a[i] * a[i];
    return acc / S(2);
}

namespace detail {

/// l1 norm of the input gradient over color channels, one [H, W] map per frame.
template <class S>
std::vector<Tensor<S>> pixel_l1_maps(const Tensor<S>& input_grad) {
    const std::int64_t n = input_grad.extent(0), c = input_grad.extent(1);
    const std::int64_t h = input_grad.extent(2), w = input_grad.extent(3);
    std::vector<Tensor<S>> maps;
    maps.reserve(static_cast<std::size_t>(n));
    for (std::int64_t t = 0; t < n; ++t) {
        Tensor<S> map(Shape{h, w});
        for (std::int64_t r = 0; r < h; ++r)
            for (std::int64_t q = 0; q < w; ++q) {
                S acc = 0;
                for (std::int64_t j = 0; j < c; ++j) acc += std::abs(input_grad.at(t, j, r, q));
                map[r * w + q] = acc;
            }
        check_finite(map, "pixel_l1_maps");
        maps.push_back(std::move(map));
    }
    return maps;
}

} // namespace detail

/// Per-pixel influence on one glimpse's attention distribution: backward of
/// the attention energy (or of sum w_i * a_i when custom weights are given)
/// through the whole network to the input pixels, then the l1 norm over
/// color channels. Model runs in eval mode.
template <class S>
std::vector<Tensor<S>> influence_map(Model<S>& model, const Tensor<S>& frames, int glimpse,
                                     const Tensor<S>* position_weights = nullptr) {
    if (glimpse < 0 || glimpse >= model.config().glimpses)
        throw std::invalid_argument("influence_map: glimpse index out of range");
    auto out = model.forward(frames, frames.extent(0), Mode::eval, 0, /*input_grad=*/true);
    const auto& attention = out.rra.states[static_cast<std::size_t>(glimpse)].attention;
    NodePtr<S> objective;
    if (position_weights) {
        if (!position_weights->same_shape(attention->value))
            throw std::invalid_argument("influence_map: weight vector shape mismatch");
        objective = inner_const(attention, *position_weights);
    } else {
        objective = scale(sum_squares(attention), S(0.5));
    }
    model.zero_grad();
    backward(objective);
    return detail::pixel_l1_maps(out.input->grad());
}

/// Channels given the strongest decrements by glimpse k's reduction vector
/// (smallest entries first, lowest index on ties).
template <class S>
std::vector<std::int64_t> most_suppressed_channels(const Tensor<S>& reduction, int top_m) {
    const std::int64_t c = reduction.numel();
    if (top_m < 1 || top_m > c) throw std::invalid_argument("most_suppressed_channels: bad top_m");
    std::vector<std::int64_t> idx(static_cast<std::size_t>(c));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&reduction](std::int64_t a, std::int64_t b) { return reduction[a] < reduction[b]; });
    idx.resize(static_cast<std::size_t>(top_m));
    return idx;
}

/// Influence map of the suppression applied after glimpse k: every entry of
/// the top_m most-suppressed channels that decreased from the carried map to
/// the next reduced map contributes its decrement as the weight. Zero map
/// when nothing decreased.
template <class S>
std::vector<Tensor<S>> suppression_map(Model<S>& model, const Tensor<S>& frames, int glimpse, int top_m) {
    const int k_total = model.config().glimpses;
    if (glimpse < 0 || glimpse + 1 >= k_total)
        throw std::invalid_argument("suppression_map: glimpse must have a following iteration");
    auto out = model.forward(frames, frames.extent(0), Mode::eval, 0, /*input_grad=*/true);
    const auto& state = out.rra.states[static_cast<std::size_t>(glimpse)];
    if (!state.reduction) throw std::logic_error("suppression_map: no reduction vector recorded");

    const auto channels = most_suppressed_channels(state.reduction->value, top_m);
    const auto& before = out.rra.carried[static_cast<std::size_t>(glimpse)]->value;
    const auto& after_node = out.rra.reduced[static_cast<std::size_t>(glimpse) + 1];
    Tensor<S> weights(before.shape());
    const std::int64_t m = before.cols();
    for (const auto j : channels)
        for (std::int64_t p = 0; p < m; ++p) {
            const S drop = before.at(j, p) - after_node->value.at(j, p);
            if (drop > S(0)) weights.at(j, p) = drop;
        }

    model.zero_grad();
    backward(inner_const(after_node, std::move(weights)));
    return detail::pixel_l1_maps(out.input->grad());
}

/// Separable Gaussian blur, kernel truncated at 3*sigma and normalized;
/// borders handled by symmetric reflection, so total mass is conserved and
/// no negative values appear.
template <class S>
Tensor<S> gaussian_blur(const Tensor<S>& map, double sigma) {
    if (map.ndim() != 2) throw std::invalid_argument("gaussian_blur: map must be rank 2");
    if (sigma < 0.0) throw std::invalid_argument("gaussian_blur: sigma must be >= 0");
    if (sigma == 0.0) return map;
    const std::int64_t radius = static_cast<std::int64_t>(std::ceil(3.0 * sigma));
    std::vector<S> kernel(static_cast<std::size_t>(2 * radius + 1));
    S sum = 0;
    for (std::int64_t i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
        kernel[static_cast<std::size_t>(i + radius)] = static_cast<S>(v);
        sum += static_cast<S>(v);
    }
    for (auto& k : kernel) k /= sum;

    const std::int64_t h = map.extent(0), w = map.extent(1);
    auto reflect = [](std::int64_t i, std::int64_t n) {
        while (i < 0 || i >= n) i = i < 0 ? -1 - i : 2 * n - 1 - i;
        return i;
    };
    Tensor<S> tmp(map.shape());
    for (std::int64_t r = 0; r < h; ++r)
        for (std::int64_t q = 0; q < w; ++q) {
            S acc = 0;
            for (std::int64_t d = -radius; d <= radius; ++d)
                acc += kernel[static_cast<std::size_t>(d + radius)] * map[r * w + reflect(q + d, w)];
            tmp[r * w + q] = acc;
        }
    Tensor<S> out(map.shape());
    for (std::int64_t r = 0; r < h; ++r)
        for (std::int64_t q = 0; q < w; ++q) {
            S acc = 0;
            for (std::int64_t d = -radius; d <= radius; ++d)
                acc += kernel[static_cast<std::size_t>(d + radius)] * tmp[reflect(r + d, h) * w + q];
            out[r * w + q] = acc;
        }
    return out;
}

/// Blur, min-max normalize (constant maps render as zero intensity), apply
/// the colormap, optionally alpha-blend over the frame.
inline ImageRGB8 render(const Tensor<float>& map, const HeatmapRequest& request,
                        const Tensor<float>* base_frame = nullptr) {
    for (std::int64_t i = 0; i < map.numel(); ++i)
        if (map[i] < 0.0f) throw std::invalid_argument("render: map must be non-negative");
    Tensor<float> blurred = gaussian_blur(map, request.gaussian_sigma);
    float lo = blurred[0], hi = blurred[0];
    for (std::int64_t i = 1; i < blurred.numel(); ++i) {
        lo = std::min(lo, blurred[i]);
        hi = std::max(hi, blurred[i]);
    }
    Tensor<float> normalized(blurred.shape());
    if (hi > lo) {
        const float inv = 1.0f / (hi - lo);
        for (std::int64_t i = 0; i < blurred.numel(); ++i) normalized[i] = (blurred[i] - lo) * inv;
    }
    ImageRGB8 img = apply_colormap(normalized, request.colormap);
    if (base_frame) img = blend_over(img, *base_frame, request.overlay_alpha);
    return img;
}

} // namespace rra
