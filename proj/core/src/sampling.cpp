#include "rra/sampling.hpp"

namespace rra {

std::vector<SegmentRange> slice_segments(std::int64_t frame_count, std::int64_t n) {
    if (frame_count < 1) throw std::invalid_argument("slice_segments: frame_count must be >= 1");
    if (n < 1) throw std::invalid_argument("slice_segments: n must be >= 1");
    const std::int64_t base = frame_count / n;
    const std::int64_t remainder = frame_count % n;
    std::vector<SegmentRange> out;
    out.reserve(static_cast<std::size_t>(n));
    std::int64_t cursor = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t size = base + (i < remainder ? 1 : 0);
        if (size == 0) {
            // more segments than frames: repeat the last frame
            const std::int64_t last = std::min(cursor, frame_count - 1);
            out.push_back({last, last + 1});
        } else {
            out.push_back({cursor, cursor + size});
            cursor += size;
        }
    }
    return out;
}

std::vector<std::int64_t> sample_train_frames(std::int64_t frame_count, const std::string& video_id,
                                              std::int64_t n_segments, std::uint64_t seed,
                                              std::int64_t epoch) {
    const auto segments = slice_segments(frame_count, n_segments);
    Rng rng(derive_seed(seed, fnv1a(video_id), static_cast<std::uint64_t>(epoch)));
    std::vector<std::int64_t> out;
    out.reserve(segments.size());
    for (const auto& seg : segments) out.push_back(seg.begin + rng.index(seg.size()));
    return out;
}

std::vector<std::int64_t> sample_test_frames(std::int64_t frame_count, std::int64_t n_segments) {
    const auto segments = slice_segments(frame_count, n_segments);
    std::vector<std::int64_t> out;
    out.reserve(segments.size());
    for (const auto& seg : segments) out.push_back(seg.begin + seg.size() / 2);
    return out;
}

} // namespace rra
