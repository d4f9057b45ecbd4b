#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "rra/rng.hpp"
#include "rra/tensor.hpp"

namespace rra {

// Crop scales applied to the short side during training (TSN-style set).
inline constexpr std::array<double, 4> kTrainCropScales{1.0, 0.875, 0.75, 0.66};

Tensor<float> hflip(const Tensor<float>& frame);
Tensor<float> crop(const Tensor<float>& frame, std::int64_t row0, std::int64_t col0, std::int64_t size);
Tensor<float> resize_bilinear(const Tensor<float>& frame, std::int64_t out_hw);

/// Training-time variant of one [C, H, W] frame: random scale from
/// kTrainCropScales of the short side, random corner-or-center square crop,
/// 50% horizontal flip, resize to target_hw.
Tensor<float> augment_train(const Tensor<float>& frame, std::int64_t target_hw, Rng& rng);

/// Deterministic test-time crop set: `crops` must be 1 (center) or 5 (four
/// corners + center) at target size; each crop optionally doubled with its
/// horizontal flip. Order is fixed: per crop position, original then flip.
std::vector<Tensor<float>> test_crop_variants(const Tensor<float>& frame, std::int64_t target_hw,
                                              int crops, bool flip);

} // namespace rra
