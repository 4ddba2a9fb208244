#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace tamiseg {

/// RGB raster in [0,1], stored planar as a (1,3,H,W) tensor.
struct Image {
    Tensor<float> pixels;

    Image() = default;
    Image(int height, int width, float fill = 0.f) : pixels(Shape{1, 3, height, width}, fill) {}
    explicit Image(Tensor<float> t) : pixels(std::move(t)) {
        if (pixels.shape().n != 1 || pixels.shape().c != 3)
            throw ShapeError("Image expects a (1,3,H,W) tensor, got " + pixels.shape().str());
    }

    int height() const { return pixels.shape().h; }
    int width() const { return pixels.shape().w; }
    float& at(int c, int y, int x) { return pixels.at(0, c, y, x); }
    float at(int c, int y, int x) const { return pixels.at(0, c, y, x); }

    bool operator==(const Image&) const = default;
};

/// {0,1} raster.
struct BinaryMask {
    int height = 0, width = 0;
    std::vector<std::uint8_t> values;

    BinaryMask() = default;
    BinaryMask(int h, int w) : height(h), width(w), values(static_cast<std::size_t>(h) * w, 0) {}

    std::uint8_t& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return values.size(); }
    std::size_t count() const {
        std::size_t c = 0;
        for (auto v : values) c += v;
        return c;
    }

    template <typename T>
    Tensor<T> to_tensor() const {
        Tensor<T> t(Shape{1, 1, height, width});
        for (std::size_t i = 0; i < values.size(); ++i) t[i] = static_cast<T>(values[i]);
        return t;
    }

    /// Threshold a single-sample probability map (inclusive at theta).
    template <typename T>
    static BinaryMask from_prob(const Tensor<T>& prob, double theta, int sample = 0) {
        const Shape s = prob.shape();
        BinaryMask m(s.h, s.w);
        const T* p = prob.plane(sample, 0);
        for (std::size_t i = 0; i < m.values.size(); ++i)
            m.values[i] = static_cast<double>(p[i]) >= theta ? 1 : 0;
        return m;
    }

    bool operator==(const BinaryMask&) const = default;
};

/// Snap to the 8-bit grid so values survive a PNG round trip bit-exactly.
inline float quantize8(float v) {
    const float c = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
    return static_cast<float>(std::lround(c * 255.f)) / 255.f;
}

inline std::uint8_t to_byte(float v) {
    const float c = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
    return static_cast<std::uint8_t>(std::lround(c * 255.f));
}

}  // namespace tamiseg
