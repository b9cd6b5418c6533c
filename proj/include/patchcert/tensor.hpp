#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace patchcert {

/// Up to four axes. Activations use (batch, height, width, channels);
/// convolution kernels reuse the same record as (kh, kw, in_channels, out_channels).
struct Shape {
    int n = 1;
    int h = 1;
    int w = 1;
    int c = 1;

    std::size_t size() const {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(h) *
               static_cast<std::size_t>(w) * static_cast<std::size_t>(c);
    }

    bool valid() const { return n > 0 && h > 0 && w > 0 && c > 0; }

    std::string str() const {
        return "[" + std::to_string(n) + "x" + std::to_string(h) + "x" + std::to_string(w) +
               "x" + std::to_string(c) + "]";
    }

    friend bool operator==(const Shape&, const Shape&) = default;
};

template <class T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;

    explicit BasicTensor(Shape shape, T fill = T{}) : shape_(shape) {
        if (!shape.valid()) throw std::invalid_argument("tensor: invalid shape " + shape.str());
        data_.assign(shape.size(), fill);
    }

    BasicTensor(Shape shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
        if (!shape.valid() || data_.size() != shape.size()) {
            throw std::invalid_argument("tensor: " + std::to_string(data_.size()) +
                                        " values do not fill shape " + shape.str());
        }
    }

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    std::size_t offset(int n, int h, int w, int c) const {
        return ((static_cast<std::size_t>(n) * shape_.h + h) * shape_.w + w) * shape_.c + c;
    }

    T& operator()(int n, int h, int w, int c) { return data_[offset(n, h, w, c)]; }
    const T& operator()(int n, int h, int w, int c) const { return data_[offset(n, h, w, c)]; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    /// Batch item `n` as a standalone 1xHxWxC tensor.
    BasicTensor item(int n) const {
        const std::size_t stride = static_cast<std::size_t>(shape_.h) * shape_.w * shape_.c;
        Shape s{1, shape_.h, shape_.w, shape_.c};
        return BasicTensor(s, std::vector<T>(data_.begin() + n * stride,
                                             data_.begin() + (n + 1) * stride));
    }

    template <class U>
    BasicTensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(),
                       [](T v) { return static_cast<U>(v); });
        return BasicTensor<U>(shape_, std::move(out));
    }

    BasicTensor& operator+=(const BasicTensor& other) {
        if (other.shape_ != shape_) {
            throw std::invalid_argument("tensor add: shape " + shape_.str() + " vs " +
                                        other.shape_.str());
        }
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
        return *this;
    }

    friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

private:
    Shape shape_{0, 0, 0, 0};
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

/// Stack 1xHxWxC tensors into a batch.
template <class T>
BasicTensor<T> stack(std::span<const BasicTensor<T>> items) {
    if (items.empty()) throw std::invalid_argument("stack: no items");
    Shape s = items.front().shape();
    std::vector<T> values;
    values.reserve(s.size() * items.size());
    for (const auto& t : items) {
        if (t.shape() != s) {
            throw std::invalid_argument("stack: shape " + t.shape().str() + " vs " + s.str());
        }
        values.insert(values.end(), t.values().begin(), t.values().end());
    }
    s.n = static_cast<int>(items.size()) * s.n;
    return BasicTensor<T>(s, std::move(values));
}

}  // namespace patchcert
