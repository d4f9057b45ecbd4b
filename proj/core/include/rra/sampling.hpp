#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "rra/mode.hpp"
#include "rra/rng.hpp"

namespace rra {

/// Half-open frame index range of one temporal segment.
struct SegmentRange {
    std::int64_t begin = 0;
    std::int64_t end = 0;

    std::int64_t size() const { return end - begin; }
    bool operator==(const SegmentRange&) const = default;
};

struct SamplingSpec {
    std::int64_t n_segments = 4;
    Mode mode = Mode::train;
    std::uint64_t seed = 0;
    int test_crops = 1; // 1 or 5
    bool flip = false;

    void validate() const {
        if (n_segments < 1) throw std::invalid_argument("SamplingSpec: n_segments must be >= 1");
        if (test_crops != 1 && test_crops != 5)
            throw std::invalid_argument("SamplingSpec: test_crops must be 1 or 5");
    }
};

/// Splits [0, frame_count) into n contiguous segments whose sizes differ by
/// at most one, longer segments first. When frame_count < n the trailing
/// segments repeat the last covered frame so every segment stays non-empty.
std::vector<SegmentRange> slice_segments(std::int64_t frame_count, std::int64_t n);

/// One uniformly drawn index per segment; the draw is a pure function of
/// (seed, video_id, epoch).
std::vector<std::int64_t> sample_train_frames(std::int64_t frame_count, const std::string& video_id,
                                              std::int64_t n_segments, std::uint64_t seed,
                                              std::int64_t epoch);

/// Middle frame of each segment: begin + (end - begin) / 2.
std::vector<std::int64_t> sample_test_frames(std::int64_t frame_count, std::int64_t n_segments);

} // namespace rra
