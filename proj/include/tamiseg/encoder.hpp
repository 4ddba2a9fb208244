#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "image.hpp"
#include "layers.hpp"

namespace tamiseg {

struct EncoderConfig {
    std::array<int, 4> widths{16, 32, 64, 128};
    std::array<int, 4> blocks{1, 1, 1, 1};
    int head_width = 16;

    static EncoderConfig tiny() { return {}; }
    /// ResNet-50 stage depths (3, 4, 6, 3) with basic residual blocks.
    static EncoderConfig full() { return {{64, 128, 256, 512}, {3, 4, 6, 3}, 64}; }

    void validate() const {
        for (int i = 0; i < 4; ++i) {
            if (widths[i] <= 0 || blocks[i] <= 0) throw ConfigError("encoder widths and blocks must be positive");
            if (i > 0 && widths[i] <= widths[i - 1])
                throw ConfigError("encoder widths must be strictly increasing");
        }
        if (head_width <= 0) throw ConfigError("head_width must be positive");
    }

    bool operator==(const EncoderConfig&) const = default;
};

/// Four maps at strides 4, 8, 16, 32.
template <typename T>
struct FeaturePyramid {
    std::array<Var<T>, 4> levels;

    const Var<T>& operator[](int i) const { return levels[i]; }
    Var<T>& operator[](int i) { return levels[i]; }
};

inline constexpr std::array<int, 4> kLevelStrides{4, 8, 16, 32};

inline void check_divisible_by_32(int h, int w) {
    if (h <= 0 || w <= 0 || h % 32 != 0 || w % 32 != 0)
        throw ShapeError("input size " + std::to_string(h) + "x" + std::to_string(w) +
                         " is not divisible by 32");
}

/// Stack images into an (N,3,H,W) batch.
template <typename T>
Tensor<T> batch_images(const std::vector<const Image*>& images) {
    if (images.empty()) throw ShapeError("empty image batch");
    const int H = images[0]->height(), W = images[0]->width();
    Tensor<T> out(Shape{static_cast<int>(images.size()), 3, H, W});
    for (std::size_t n = 0; n < images.size(); ++n) {
        if (images[n]->height() != H || images[n]->width() != W)
            throw ShapeError("images in a batch must share a size");
        const auto& px = images[n]->pixels.values();
        std::transform(px.begin(), px.end(), out.plane(static_cast<int>(n), 0),
                       [](float v) { return static_cast<T>(v); });
    }
    return out;
}

template <typename T>
struct ResidualBlock {
    Conv2d<T> first, second;
    std::optional<Conv2d<T>> shortcut;

    /// `branch_scale` multiplies the initial conv2 weights; 1/sqrt(depth) keeps activations bounded.
    ResidualBlock(ParamStore<T>& store, const std::string& name, int in, int out, int stride, Rng& rng,
                  double branch_scale = 1.0)
        : first(store, name + ".conv1", in, out, 3, rng, stride),
          second(store, name + ".conv2", out, out, 3, rng) {
        for (auto& v : second.weight.mutable_value().values()) v *= static_cast<T>(branch_scale);
        if (stride != 1 || in != out) shortcut.emplace(store, name + ".shortcut", in, out, 1, rng, stride);
    }

    Var<T> operator()(const Var<T>& x) const {
        auto y = second(relu(first(x)));
        return relu(add(y, shortcut ? (*shortcut)(x) : x));
    }
};

/// Residual CNN: a stride-4 stem, then one stage per level, each after the first
/// halving resolution. Stage outputs are the pyramid levels.
template <typename T>
class Encoder {
public:
    Encoder(ParamStore<T>& store, const EncoderConfig& cfg, Rng& rng, const std::string& prefix = "encoder")
        : cfg_(cfg) {
        cfg.validate();
        const int stem_mid = std::max(8, cfg.widths[0] / 2);
        stem_.emplace_back(store, prefix + ".stem.0", 3, stem_mid, 3, rng, 2);
        stem_.emplace_back(store, prefix + ".stem.1", stem_mid, cfg.widths[0], 3, rng, 2);
        int in = cfg.widths[0];
        const double branch_scale =
            1.0 / std::sqrt(static_cast<double>(cfg.blocks[0] + cfg.blocks[1] + cfg.blocks[2] + cfg.blocks[3]));
        for (int s = 0; s < 4; ++s) {
            std::vector<ResidualBlock<T>> stage;
            for (int b = 0; b < cfg.blocks[s]; ++b) {
                const int stride = (s > 0 && b == 0) ? 2 : 1;
                stage.emplace_back(store,
                                   prefix + ".stage" + std::to_string(s + 1) + "." + std::to_string(b),
                                   in, cfg.widths[s], stride, rng, branch_scale);
                in = cfg.widths[s];
            }
            stages_.push_back(std::move(stage));
        }
    }

    /// `images` is (N,3,H,W) with values in [0,1].
    FeaturePyramid<T> operator()(const Var<T>& images) const {
        const Shape s = images.shape();
        if (s.c != 3) throw ShapeError("encoder expects 3 input channels, got " + s.str());
        check_divisible_by_32(s.h, s.w);
        Tensor<T> centred = images.value();
        for (auto& v : centred.values()) v -= T(0.5);
        Var<T> x = images.requires_grad() ? add(images, Var<T>::constant(Tensor<T>(s, T(-0.5))))
                                          : Var<T>::constant(std::move(centred));
        for (const auto& conv : stem_) x = relu(conv(x));
        FeaturePyramid<T> pyr;
        for (int level = 0; level < 4; ++level) {
            for (const auto& block : stages_[level]) x = block(x);
            pyr[level] = x;
        }
        return pyr;
    }

    FeaturePyramid<T> operator()(const Tensor<T>& images) const {
        return (*this)(Var<T>::constant(images));
    }

    const EncoderConfig& config() const { return cfg_; }

private:
    EncoderConfig cfg_;
    std::vector<Conv2d<T>> stem_;
    std::vector<std::vector<ResidualBlock<T>>> stages_;
};

/// Phase-I prediction head: per-level 1x1 reduction, bilinear resize to stride 4,
/// sum, two 3x3 convs, 1x1 to one channel, sigmoid, bilinear resize to input size.
/// Also serves as the plain FPN-style decoder of the ablation baseline.
template <typename T>
class PredictionHead {
public:
    PredictionHead(ParamStore<T>& store, const std::array<int, 4>& in_widths, int width, Rng& rng,
                   const std::string& prefix = "head") {
        for (int i = 0; i < 4; ++i)
            lateral_[i] = Conv2d<T>(store, prefix + ".lateral" + std::to_string(i + 1), in_widths[i],
                                    width, 1, rng);
        smooth1_ = Conv2d<T>(store, prefix + ".conv1", width, width, 3, rng);
        smooth2_ = Conv2d<T>(store, prefix + ".conv2", width, width, 3, rng);
        out_ = Conv2d<T>(store, prefix + ".out", width, 1, 1, rng);
    }

    /// Returns (N,1,out_h,out_w) probabilities.
    Var<T> operator()(const FeaturePyramid<T>& pyr, int out_h, int out_w) const {
        const int h4 = pyr[0].shape().h, w4 = pyr[0].shape().w;
        std::vector<Var<T>> terms;
        for (int i = 0; i < 4; ++i) terms.push_back(resize_bilinear(lateral_[i](pyr[i]), h4, w4));
        auto x = add(terms);
        x = relu(smooth1_(x));
        x = relu(smooth2_(x));
        return resize_bilinear(sigmoid(out_(x)), out_h, out_w);
    }

    const Conv2d<T>& output_conv() const { return out_; }

private:
    std::array<Conv2d<T>, 4> lateral_;
    Conv2d<T> smooth1_, smooth2_, out_;
};

}  // namespace tamiseg
