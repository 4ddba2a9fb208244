#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <new>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace tamiseg {

/// NCHW extent. Matrices and vectors use the trailing dimensions with n = c = 1.
struct Shape {
    int n = 0, c = 0, h = 0, w = 0;

    constexpr std::size_t size() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    constexpr std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    constexpr bool operator==(const Shape&) const = default;

    std::string str() const {
        std::ostringstream os;
        os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
        return os.str();
    }
};

/// 64-byte aligned storage. Eigen's vectorised reductions peel according to the
/// pointer alignment, so a fixed alignment keeps results bit-reproducible.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) { ::operator delete(p, alignment); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
class Tensor {
public:
    using value_type = T;
    using Storage = std::vector<T, AlignedAllocator<T>>;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {
        if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0)
            throw ShapeError("negative tensor extent " + shape.str());
    }
    Tensor(Shape shape, Storage values) : shape_(shape), data_(std::move(values)) {
        if (data_.size() != shape.size())
            throw ShapeError("tensor data size does not match shape " + shape.str());
    }
    Tensor(Shape shape, const std::vector<T>& values) : Tensor(shape, Storage(values.begin(), values.end())) {}

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    Storage& values() { return data_; }
    const Storage& values() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::size_t offset(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    T& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
    const T& at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

    /// Pointer to the H*W plane of (n, c).
    T* plane(int n, int c) { return data_.data() + offset(n, c, 0, 0); }
    const T* plane(int n, int c) const { return data_.data() + offset(n, c, 0, 0); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    /// Copy of sample n as a batch of one.
    Tensor sample(int n) const {
        Shape s{1, shape_.c, shape_.h, shape_.w};
        auto first = data_.begin() + static_cast<std::ptrdiff_t>(n * s.size());
        return Tensor(s, Storage(first, first + static_cast<std::ptrdiff_t>(s.size())));
    }

    template <typename U>
    Tensor<U> cast() const {
        typename Tensor<U>::Storage out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(),
                       [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    Tensor& operator+=(const Tensor& other) {
        check_same(other, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
        return *this;
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    void check_same(const Tensor& other, const char* what) const {
        if (!(shape_ == other.shape_))
            throw ShapeError(std::string(what) + ": shape mismatch " + shape_.str() + " vs " +
                             other.shape_.str());
    }

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_{};
    Storage data_;
};

/// Stack single-sample tensors along the batch axis.
template <typename T>
Tensor<T> stack(std::span<const Tensor<T>> items) {
    if (items.empty()) return {};
    Shape s = items[0].shape();
    s.n = 0;
    for (const auto& t : items) {
        if (t.shape().c != s.c || t.shape().h != s.h || t.shape().w != s.w)
            throw ShapeError("stack: inconsistent item shapes");
        s.n += t.shape().n;
    }
    std::vector<T> out;
    out.reserve(s.size());
    for (const auto& t : items) out.insert(out.end(), t.values().begin(), t.values().end());
    return Tensor<T>(s, std::move(out));
}

}  // namespace tamiseg
