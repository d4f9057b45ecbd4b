#include "rra/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rra {

namespace {

constexpr char kTensorMagic[8] = {'R', 'R', 'A', 'T', 'E', 'N', '0', '1'};

static_assert(std::endian::native == std::endian::little,
              "dataset files are little-endian; big-endian hosts are not supported");

template <class T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("tensor file truncated");
    return v;
}

} // namespace

Tensor<float> VideoSample::frame(std::int64_t t) const {
    const std::int64_t c = channels(), h = height(), w = width();
    Tensor<float> out(Shape{c, h, w});
    const std::int64_t per = c * h * w;
    const float* src = frames.data() + t * per;
    std::copy(src, src + per, out.data());
    return out;
}

void VideoSample::validate(int num_classes) const {
    if (frames.ndim() != 4) throw std::invalid_argument("VideoSample: frames must be [T, C, H, W]");
    if (frame_count() < 1) throw std::invalid_argument("VideoSample: needs at least one frame");
    if (label < 0 || label >= num_classes)
        throw std::invalid_argument("VideoSample '" + id + "': label " + std::to_string(label) +
                                    " out of range for " + std::to_string(num_classes) + " classes");
}

int num_classes_of(const std::vector<VideoSample>& videos) {
    int top = -1;
    for (const auto& v : videos) top = std::max(top, v.label);
    return top + 1;
}

void write_video_tensor(const std::filesystem::path& path, const Tensor<float>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    os.write(kTensorMagic, sizeof(kTensorMagic));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.ndim()));
    for (std::int64_t i = 0; i < t.ndim(); ++i)
        write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(t.extent(i)));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

Tensor<float> read_video_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path.string());
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0)
        throw std::runtime_error("bad tensor file magic: " + path.string());
    const auto ndim = read_pod<std::uint32_t>(is);
    if (ndim == 0 || ndim > 8) throw std::runtime_error("bad tensor rank in " + path.string());
    Shape shape(ndim);
    for (auto& e : shape) e = static_cast<std::int64_t>(read_pod<std::uint64_t>(is));
    Tensor<float> t(shape);
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!is) throw std::runtime_error("tensor file truncated: " + path.string());
    return t;
}

void write_dataset(const std::filesystem::path& dir, const std::vector<VideoSample>& videos) {
    std::filesystem::create_directories(dir);
    std::vector<const VideoSample*> ordered;
    ordered.reserve(videos.size());
    for (const auto& v : videos) ordered.push_back(&v);
    std::sort(ordered.begin(), ordered.end(),
              [](const VideoSample* a, const VideoSample* b) { return a->id < b->id; });

    std::ofstream manifest(dir / "manifest.txt");
    if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
    for (const VideoSample* v : ordered) {
        manifest << v->id << ' ' << v->label << ' ' << v->frame_count() << '\n';
        write_video_tensor(dir / (v->id + ".rrt"), v->frames);
    }
    if (!manifest) throw std::runtime_error("manifest write failed in " + dir.string());
}

std::vector<VideoSample> load_dataset(const std::filesystem::path& dir) {
    std::ifstream manifest(dir / "manifest.txt");
    if (!manifest) throw std::runtime_error("no manifest.txt in " + dir.string());
    std::vector<VideoSample> videos;
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        VideoSample v;
        std::int64_t frame_count = 0;
        if (!(ls >> v.id >> v.label >> frame_count))
            throw std::runtime_error("malformed manifest line: '" + line + "'");
        v.frames = read_video_tensor(dir / (v.id + ".rrt"));
        if (v.frame_count() != frame_count)
            throw std::runtime_error("manifest/frame-count mismatch for video " + v.id);
        videos.push_back(std::move(v));
    }
    if (videos.empty()) throw std::runtime_error("dataset is empty: " + dir.string());
    const int classes = num_classes_of(videos);
    for (const auto& v : videos) v.validate(classes);
    return videos;
}

} // namespace rra
