#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rra/rng.hpp"

namespace rra {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major tensor of a configurable element type: float for
/// training, double for gradient checks. A rank-0 shape is a scalar with one
/// element; a default-constructed tensor is empty and distinct from both.
template <class S>
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), S(0)) {
        check_extents();
    }

    Tensor(Shape shape, S fill)
        : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {
        check_extents();
    }

    Tensor(Shape shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_extents();
        if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_))
            throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, S v) { return Tensor(std::move(shape), v); }
    static Tensor scalar(S v) { return Tensor(Shape{}, std::vector<S>{v}); }

    static Tensor uniform(Shape shape, S lo, S hi, Rng& rng) {
        Tensor t(std::move(shape));
        for (auto& v : t.data_) v = static_cast<S>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
        return t;
    }

    static Tensor gaussian(Shape shape, S mean, S sigma, Rng& rng) {
        Tensor t(std::move(shape));
        for (auto& v : t.data_) v = static_cast<S>(mean + sigma * static_cast<S>(rng.normal()));
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::int64_t ndim() const { return static_cast<std::int64_t>(shape_.size()); }
    std::int64_t extent(std::int64_t axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty() && shape_.empty(); }

    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }
    std::vector<S>& values() { return data_; }
    const std::vector<S>& values() const { return data_; }

    S& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const S& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // 2-d accessors (row-major)
    std::int64_t rows() const { return shape_.size() == 2 ? shape_[0] : throw_rank2(); }
    std::int64_t cols() const { return shape_.size() == 2 ? shape_[1] : throw_rank2(); }
    S& at(std::int64_t r, std::int64_t c) { return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }
    const S& at(std::int64_t r, std::int64_t c) const {
        return data_[static_cast<std::size_t>(r * shape_[1] + c)];
    }

    // 4-d accessor for image stacks [n, c, h, w]
    S& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
        return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }
    const S& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
        return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }

    S item() const {
        if (numel() != 1) throw std::logic_error("item() requires a single-element tensor");
        return data_[0];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != numel())
            throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                                        " changes element count");
        return Tensor(std::move(shape), data_);
    }

    void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

    template <class T>
    Tensor<T> astype() const {
        std::vector<T> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<T>(data_[i]);
        return Tensor<T>(shape_, std::move(out));
    }

    bool operator==(const Tensor& other) const { return shape_ == other.shape_ && data_ == other.data_; }

  private:
    static void check_positive(std::int64_t e) {
        if (e <= 0) throw std::invalid_argument("tensor extents must be positive");
    }
    void check_extents() const {
        for (auto e : shape_) check_positive(e);
    }
    [[noreturn]] static std::int64_t throw_rank2() { throw std::logic_error("tensor is not rank 2"); }

    Shape shape_;
    std::vector<S> data_;
};

} // namespace rra
