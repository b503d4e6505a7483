#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "synthaug/errors.hpp"

namespace synthaug {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape);

// Dense row-major tensor. Image batches use NCHW layout.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;

    explicit BasicTensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
        check_shape(shape_);
        data_.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
    }

    BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape(shape_);
        if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_)) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_to_string(shape_));
        }
    }

    static BasicTensor scalar(T v) { return BasicTensor({1}, std::vector<T>{v}); }

    const Shape& shape() const noexcept { return shape_; }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T item() const {
        if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_to_string(shape_));
        return data_[0];
    }

    BasicTensor reshaped(Shape shape) const {
        if (shape_numel(shape) != shape_numel(shape_)) {
            throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
        }
        return BasicTensor(std::move(shape), data_);
    }

    bool all_finite() const {
        for (const T& v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    template <typename U>
    BasicTensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return BasicTensor<U>(shape_, std::move(out));
    }

    friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    static void check_shape(const Shape& shape) {
        for (auto d : shape) {
            if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_to_string(shape));
        }
    }

    Shape shape_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

// Copies item `index` (leading dimension) out of a batch.
template <typename T>
BasicTensor<T> batch_item(const BasicTensor<T>& batch, std::int64_t index) {
    Shape item_shape(batch.shape().begin() + 1, batch.shape().end());
    if (item_shape.empty()) item_shape = {1};
    const auto n = static_cast<std::size_t>(shape_numel(item_shape));
    auto first = batch.storage().begin() + static_cast<std::ptrdiff_t>(n * static_cast<std::size_t>(index));
    return BasicTensor<T>(item_shape, std::vector<T>(first, first + static_cast<std::ptrdiff_t>(n)));
}

// Stacks equally shaped tensors along a new leading dimension.
template <typename T>
BasicTensor<T> stack(std::span<const BasicTensor<T>> items) {
    if (items.empty()) throw ShapeError("stack of zero tensors");
    Shape shape = items.front().shape();
    std::vector<T> data;
    data.reserve(items.size() * items.front().size());
    for (const auto& t : items) {
        if (t.shape() != shape) {
            throw ShapeError("stack: shape " + shape_to_string(t.shape()) + " != " + shape_to_string(shape));
        }
        data.insert(data.end(), t.storage().begin(), t.storage().end());
    }
    shape.insert(shape.begin(), static_cast<std::int64_t>(items.size()));
    return BasicTensor<T>(std::move(shape), std::move(data));
}

} // namespace synthaug
