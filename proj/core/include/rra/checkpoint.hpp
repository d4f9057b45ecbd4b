#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rra/model.hpp"
#include "rra/optimizer.hpp"

namespace rra {

struct CheckpointError : std::runtime_error {
    bool version_mismatch = false;
    explicit CheckpointError(const std::string& what, bool mismatch = false)
        : std::runtime_error(what), version_mismatch(mismatch) {}
};

/// Raw name-indexed tensor table; element bytes are little-endian in the
/// file. dtype: 0 = float32, 1 = float64.
struct TensorRecord {
    std::string name;
    int dtype = 0;
    Shape shape;
    std::vector<unsigned char> bytes;
};

struct CheckpointContainer {
    std::int64_t epoch = 0;
    std::int64_t optimizer_steps = 0;
    int dtype = 0;
    std::uint64_t config_hash = 0;
    std::string config_text;
    std::vector<TensorRecord> records;
};

void write_container(const std::filesystem::path& path, const CheckpointContainer& c);
CheckpointContainer read_container(const std::filesystem::path& path);

namespace detail {

template <class S>
constexpr int dtype_of() {
    return sizeof(S) == 4 ? 0 : 1;
}

template <class S>
TensorRecord to_record(const std::string& name, const Tensor<S>& t) {
    TensorRecord r;
    r.name = name;
    r.dtype = dtype_of<S>();
    r.shape = t.shape();
    r.bytes.resize(static_cast<std::size_t>(t.numel()) * sizeof(S));
    std::memcpy(r.bytes.data(), t.data(), r.bytes.size());
    return r;
}

template <class S>
void from_record(const TensorRecord& r, Tensor<S>& dst) {
    if (r.dtype != dtype_of<S>())
        throw CheckpointError("checkpoint tensor '" + r.name + "' has a different element precision");
    if (r.shape != dst.shape())
        throw CheckpointError("checkpoint tensor '" + r.name + "' shape mismatch: file " +
                              shape_str(r.shape) + " vs model " + shape_str(dst.shape()));
    std::memcpy(dst.data(), r.bytes.data(), r.bytes.size());
}

} // namespace detail

/// Serializes every parameter, BN running statistic and optimizer moment
/// under stable names, plus the resolved config text. Loading into an
/// identically configured model reproduces forward outputs bit-exactly.
template <class S>
void save_checkpoint(const std::filesystem::path& path, Model<S>& model, const Adam<S>* optimizer,
                     std::int64_t epoch, const std::string& config_text) {
    CheckpointContainer c;
    c.epoch = epoch;
    c.dtype = detail::dtype_of<S>();
    c.config_text = config_text;
    c.config_hash = fnv1a(config_text);
    for (const auto& p : model.parameters()) c.records.push_back(detail::to_record(p.name, p.node->value));
    for (const auto& [name, tensor] : model.state_tensors())
        c.records.push_back(detail::to_record(name, *tensor));
    if (optimizer) {
        c.optimizer_steps = optimizer->step_count();
        for (const auto& [name, moments] : optimizer->state()) {
            c.records.push_back(detail::to_record("adam.m." + name, moments.m));
            c.records.push_back(detail::to_record("adam.v." + name, moments.v));
        }
    }
    write_container(path, c);
}

template <class S>
struct LoadedCheckpoint {
    std::int64_t epoch = 0;
    std::string config_text;
    std::uint64_t config_hash = 0;
};

/// Restores parameters and running stats into `model` (and moments into
/// `optimizer` when given). Missing or mismatched tensors are errors.
template <class S>
LoadedCheckpoint<S> load_checkpoint(const std::filesystem::path& path, Model<S>& model,
                                    Adam<S>* optimizer) {
    CheckpointContainer c = read_container(path);
    if (c.dtype != detail::dtype_of<S>())
        throw CheckpointError("checkpoint element precision does not match this build");
    std::map<std::string, const TensorRecord*> index;
    for (const auto& r : c.records) index[r.name] = &r;

    auto take = [&index](const std::string& name) -> const TensorRecord& {
        auto it = index.find(name);
        if (it == index.end()) throw CheckpointError("checkpoint is missing tensor '" + name + "'");
        return *it->second;
    };

    for (const auto& p : model.parameters()) detail::from_record(take(p.name), p.node->value);
    for (auto& [name, tensor] : model.state_tensors()) detail::from_record(take(name), *tensor);
    if (optimizer) {
        optimizer->set_step_count(c.optimizer_steps);
        for (const auto& p : model.parameters()) {
            const auto mit = index.find("adam.m." + p.name);
            if (mit == index.end()) continue; // parameter never stepped
            auto& mom = optimizer->moments_for(p.name, p.node->value.shape());
            detail::from_record(*mit->second, mom.m);
            detail::from_record(take("adam.v." + p.name), mom.v);
        }
    }
    return {c.epoch, c.config_text, c.config_hash};
}

} // namespace rra
