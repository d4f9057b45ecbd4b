#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rra/dataset.hpp"
#include "rra/rng.hpp"

namespace rra {

/// Planted-pattern video generator. Each video's class is determined by a
/// small class-specific patch stamped into a fraction of its frames at random
/// positions; every frame additionally carries class-independent distractor
/// patches and Gaussian pixel noise, so most of the signal a pooled
/// representation sees is clutter.
struct SyntheticSpec {
    int num_classes = 10;
    int train_per_class = 40;
    int test_per_class = 20;
    int frames_per_video = 16;
    int frame_hw = 40;
    int channels = 3;
    double discriminative_fraction = 0.25; // fraction of frames carrying the class patch
    int pattern_size = 8;
    int distractor_count = 3; // distractor patches per frame
    double noise_sigma = 0.05;
    std::uint64_t seed = 9;

    void validate() const {
        if (num_classes < 1) throw std::invalid_argument("SyntheticSpec: num_classes must be >= 1");
        if (train_per_class < 1 || test_per_class < 0)
            throw std::invalid_argument("SyntheticSpec: bad per-class video counts");
        if (frames_per_video < 1) throw std::invalid_argument("SyntheticSpec: frames_per_video must be >= 1");
        if (channels < 1) throw std::invalid_argument("SyntheticSpec: channels must be >= 1");
        if (!(discriminative_fraction > 0.0 && discriminative_fraction <= 1.0))
            throw std::invalid_argument("SyntheticSpec: discriminative_fraction must lie in (0, 1]");
        if (pattern_size < 1 || pattern_size > frame_hw)
            throw std::invalid_argument("SyntheticSpec: pattern must fit inside the frame");
        if (distractor_count < 0) throw std::invalid_argument("SyntheticSpec: distractor_count must be >= 0");
        if (noise_sigma < 0.0) throw std::invalid_argument("SyntheticSpec: noise_sigma must be >= 0");
    }
};

struct SyntheticDataset {
    std::vector<VideoSample> train;
    std::vector<VideoSample> test;
};

/// The patch that defines class `cls` (shape [channels, P, P]); fixed given
/// the spec seed. Exposed so template-matching checks can see the same patch
/// the generator stamps.
Tensor<float> class_template(const SyntheticSpec& spec, int cls);

/// Number of frames per video that carry the class patch.
std::int64_t planted_frame_count(const SyntheticSpec& spec);

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

} // namespace rra
