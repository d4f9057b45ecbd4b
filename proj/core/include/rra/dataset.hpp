#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rra/tensor.hpp"

namespace rra {

/// A labelled frame sequence. Frames are stored as one [T, channels, H, W]
/// tensor; all frames share a shape.
struct VideoSample {
    std::string id;
    int label = 0;
    Tensor<float> frames;

    std::int64_t frame_count() const { return frames.extent(0); }
    std::int64_t channels() const { return frames.extent(1); }
    std::int64_t height() const { return frames.extent(2); }
    std::int64_t width() const { return frames.extent(3); }

    /// Copy of frame t as a [channels, H, W] tensor.
    Tensor<float> frame(std::int64_t t) const;

    void validate(int num_classes) const;
};

int num_classes_of(const std::vector<VideoSample>& videos);

// --- on-disk layout -------------------------------------------------------
//
// A dataset directory holds manifest.txt plus one tensor file per video.
// Manifest: one "id label frame_count" line per video, in id order.
// Tensor file (<id>.rrt, little-endian): 8-byte magic "RRATEN01",
// uint32 ndim, uint64 extents[ndim], then float32 values.

void write_video_tensor(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> read_video_tensor(const std::filesystem::path& path);

void write_dataset(const std::filesystem::path& dir, const std::vector<VideoSample>& videos);
std::vector<VideoSample> load_dataset(const std::filesystem::path& dir);

} // namespace rra
