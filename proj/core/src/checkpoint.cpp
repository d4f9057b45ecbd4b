#include "rra/checkpoint.hpp"

#include <fstream>

namespace rra {

namespace {

constexpr char kMagic[8] = {'R', 'R', 'A', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw CheckpointError("checkpoint file truncated");
    return v;
}

void write_string(std::ostream& os, const std::string& s) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is, std::uint32_t max_len = 1u << 20) {
    const auto len = read_pod<std::uint32_t>(is);
    if (len > max_len) throw CheckpointError("checkpoint string field is implausibly long");
    std::string s(len, '\0');
    is.read(s.data(), static_cast<std::streamsize>(len));
    if (!is) throw CheckpointError("checkpoint file truncated");
    return s;
}

} // namespace

void write_container(const std::filesystem::path& path, const CheckpointContainer& c) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
    os.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(os, kVersion);
    write_pod<std::int64_t>(os, c.epoch);
    write_pod<std::int64_t>(os, c.optimizer_steps);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(c.dtype));
    write_pod<std::uint64_t>(os, c.config_hash);
    write_string(os, c.config_text);
    write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(c.records.size()));
    for (const auto& r : c.records) {
        write_string(os, r.name);
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(r.dtype));
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(r.shape.size()));
        for (auto e : r.shape) write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(e));
        os.write(reinterpret_cast<const char*>(r.bytes.data()),
                 static_cast<std::streamsize>(r.bytes.size()));
    }
    if (!os) throw CheckpointError("checkpoint write failed: " + path.string());
}

CheckpointContainer read_container(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint: " + path.string());
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
        throw CheckpointError("not a checkpoint file: " + path.string());
    const auto version = read_pod<std::uint32_t>(is);
    if (version != kVersion)
        throw CheckpointError("checkpoint format version " + std::to_string(version) +
                                  " is not supported (expected " + std::to_string(kVersion) + ")",
                              /*mismatch=*/true);
    CheckpointContainer c;
    c.epoch = read_pod<std::int64_t>(is);
    c.optimizer_steps = read_pod<std::int64_t>(is);
    c.dtype = static_cast<int>(read_pod<std::uint32_t>(is));
    c.config_hash = read_pod<std::uint64_t>(is);
    c.config_text = read_string(is);
    const auto count = read_pod<std::uint64_t>(is);
    if (count > (1u << 20)) throw CheckpointError("checkpoint record count is implausible");
    c.records.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        TensorRecord r;
        r.name = read_string(is);
        r.dtype = static_cast<int>(read_pod<std::uint32_t>(is));
        if (r.dtype != 0 && r.dtype != 1) throw CheckpointError("bad dtype tag in checkpoint");
        const auto ndim = read_pod<std::uint32_t>(is);
        if (ndim > 8) throw CheckpointError("bad tensor rank in checkpoint");
        r.shape.resize(ndim);
        std::int64_t numel = 1;
        for (auto& e : r.shape) {
            e = static_cast<std::int64_t>(read_pod<std::uint64_t>(is));
            if (e < 1 || e > (1 << 28)) throw CheckpointError("bad tensor extent in checkpoint");
            numel *= e;
        }
        const std::size_t elem = r.dtype == 0 ? 4 : 8;
        r.bytes.resize(static_cast<std::size_t>(numel) * elem);
        is.read(reinterpret_cast<char*>(r.bytes.data()), static_cast<std::streamsize>(r.bytes.size()));
        if (!is) throw CheckpointError("checkpoint file truncated in tensor payload");
        c.records.push_back(std::move(r));
    }
    return c;
}

} // namespace rra
