// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor. Production code runs in float; the same code is
// instantiated in double for finite-difference gradient verification.

#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prefixbridge/errors.hpp"

namespace pfx {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape);

template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
        validate_shape(shape_);
        data_.assign(shape_numel(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape(shape_);
        if (data_.size() != shape_numel(shape_)) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_str(shape_));
        }
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> data) {
        return Tensor({rows, cols}, std::move(data));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    /// Rows of the tensor viewed as a matrix over its last axis.
    std::size_t rows() const noexcept { return shape_.empty() ? 0 : data_.size() / shape_.back(); }
    std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * cols(), cols()); }
    std::span<const T> row(std::size_t r) const {
        return std::span<const T>(data_).subspan(r * cols(), cols());
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    /// Same data under a new shape with equal element count.
    Tensor reshaped(Shape shape) const {
        return Tensor(std::move(shape), data_);
    }

    template <class U>
    Tensor<U> cast() const {
        return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
    }

    bool operator==(const Tensor& other) const = default;

private:
    static void validate_shape(const Shape& shape) {
        for (auto extent : shape) {
            if (extent == 0) {
                throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
            }
        }
    }

    Shape shape_;
    std::vector<T> data_;
};

}  // namespace pfx
