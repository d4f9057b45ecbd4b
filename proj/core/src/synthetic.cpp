#include "rra/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace rra {

namespace {

constexpr std::uint64_t kClassPatternTag = 0x70a77e51;
constexpr std::uint64_t kDistractorTag = 0xd157ac70;
constexpr std::uint64_t kVideoTag = 0x51de0;
constexpr int kDistractorPool = 16;

Tensor<float> random_patch(const SyntheticSpec& spec, Rng& rng) {
    Tensor<float> patch(Shape{spec.channels, spec.pattern_size, spec.pattern_size});
    for (std::int64_t i = 0; i < patch.numel(); ++i)
        patch[i] = static_cast<float>(rng.uniform(0.25, 1.0));
    return patch;
}

void stamp(Tensor<float>& frames, std::int64_t t, const Tensor<float>& patch, std::int64_t r0,
           std::int64_t c0) {
    const std::int64_t c = frames.extent(1), h = frames.extent(2), w = frames.extent(3);
    const std::int64_t p = patch.extent(1);
    for (std::int64_t j = 0; j < c; ++j)
        for (std::int64_t r = 0; r < p; ++r)
            for (std::int64_t q = 0; q < p; ++q)
                frames[((t * c + j) * h + (r0 + r)) * w + (c0 + q)] = patch[(j * p + r) * p + q];
}

// k distinct values from [0, n) via partial Fisher-Yates
std::vector<std::int64_t> choose_distinct(std::int64_t n, std::int64_t k, Rng& rng) {
    std::vector<std::int64_t> pool(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
    for (std::int64_t i = 0; i < k; ++i) {
        const std::int64_t j = i + rng.index(n - i);
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    pool.resize(static_cast<std::size_t>(k));
    return pool;
}

VideoSample make_video(const SyntheticSpec& spec, const std::vector<Tensor<float>>& distractors,
                       int split, int cls, int index) {
    Rng rng(derive_seed(spec.seed, kVideoTag, static_cast<std::uint64_t>(split),
                        static_cast<std::uint64_t>(cls), static_cast<std::uint64_t>(index)));
    const std::int64_t t_count = spec.frames_per_video;
    const std::int64_t hw = spec.frame_hw;
    const std::int64_t max_pos = hw - spec.pattern_size + 1;

    VideoSample v;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_c%02d_v%03d", split == 0 ? "train" : "test", cls, index);
    v.id = buf;
    v.label = cls;
    v.frames = Tensor<float>(Shape{t_count, spec.channels, hw, hw});

    for (std::int64_t t = 0; t < t_count; ++t)
        for (int d = 0; d < spec.distractor_count; ++d) {
            const auto& patch = distractors[static_cast<std::size_t>(rng.index(kDistractorPool))];
            stamp(v.frames, t, patch, rng.index(max_pos), rng.index(max_pos));
        }

    const auto planted = choose_distinct(t_count, planted_frame_count(spec), rng);
    const Tensor<float> cls_patch = class_template(spec, cls);
    for (const std::int64_t t : planted) stamp(v.frames, t, cls_patch, rng.index(max_pos), rng.index(max_pos));

    if (spec.noise_sigma > 0.0) {
        for (std::int64_t i = 0; i < v.frames.numel(); ++i)
            v.frames[i] += static_cast<float>(spec.noise_sigma * rng.normal());
    }
    return v;
}

} // namespace

Tensor<float> class_template(const SyntheticSpec& spec, int cls) {
    spec.validate();
    Rng rng(derive_seed(spec.seed, kClassPatternTag, static_cast<std::uint64_t>(cls)));
    return random_patch(spec, rng);
}

std::int64_t planted_frame_count(const SyntheticSpec& spec) {
    const auto k = static_cast<std::int64_t>(
        std::ceil(spec.discriminative_fraction * static_cast<double>(spec.frames_per_video)));
    return std::clamp<std::int64_t>(k, 1, spec.frames_per_video);
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    std::vector<Tensor<float>> distractors;
    distractors.reserve(kDistractorPool);
    for (int i = 0; i < kDistractorPool; ++i) {
        Rng rng(derive_seed(spec.seed, kDistractorTag, static_cast<std::uint64_t>(i)));
        distractors.push_back(random_patch(spec, rng));
    }

    SyntheticDataset out;
    for (int cls = 0; cls < spec.num_classes; ++cls) {
        for (int i = 0; i < spec.train_per_class; ++i)
            out.train.push_back(make_video(spec, distractors, 0, cls, i));
        for (int i = 0; i < spec.test_per_class; ++i)
            out.test.push_back(make_video(spec, distractors, 1, cls, i));
    }
    return out;
}

} // namespace rra
