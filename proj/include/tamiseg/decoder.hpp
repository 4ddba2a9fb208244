#pragma once

#include <array>
#include <string>
#include <vector>

#include "encoder.hpp"
#include "layers.hpp"

namespace tamiseg {

struct DecoderConfig {
    int branch_width = 32;  // shared width of F1..F4 inside every branch
    int eca_kernel = 3;
    int psa_width = 8;      // channels of each dilated context conv

    void validate() const {
        if (branch_width <= 0 || psa_width <= 0) throw ConfigError("decoder widths must be positive");
        if (eca_kernel <= 0 || eca_kernel % 2 == 0) throw ConfigError("eca_kernel must be a positive odd number");
    }
    bool operator==(const DecoderConfig&) const = default;
};

/// Efficient channel attention: global average pool, 1-D conv across channels,
/// sigmoid, per-channel rescale.
template <typename T>
struct Eca {
    Var<T> kernel;

    Eca() = default;
    Eca(ParamStore<T>& store, const std::string& name, int k, Rng& rng) {
        Tensor<T> w(Shape{1, 1, 1, k});
        for (auto& v : w.values()) v = static_cast<T>(rng.normal() / std::sqrt(double(k)));
        kernel = store.add(name + ".kernel", std::move(w));
    }

    Var<T> operator()(const Var<T>& x) const {
        return mul_channel_gate(x, sigmoid(channel_conv1d(global_avg_pool(x), kernel)));
    }
};

/// Pyramid spatial attention: channel avg/max pooling, three parallel 3x3 convs at
/// dilations 1/2/4, summed and rectified, 1x1 to one channel, sigmoid gate.
template <typename T>
struct Psa {
    std::array<Conv2d<T>, 3> context;
    Conv2d<T> gate;

    Psa() = default;
    Psa(ParamStore<T>& store, const std::string& name, int width, Rng& rng) {
        const std::array<int, 3> dilations{1, 2, 4};
        for (int i = 0; i < 3; ++i)
            context[i] = Conv2d<T>(store, name + ".context" + std::to_string(i + 1), 2, width, 3, rng, 1,
                                   dilations[i]);
        gate = Conv2d<T>(store, name + ".gate", width, 1, 1, rng);
    }

    Var<T> attention(const Var<T>& x) const {
        auto pooled = channel_avg_max(x);
        auto ctx = relu(add<T>({context[0](pooled), context[1](pooled), context[2](pooled)}));
        return sigmoid(gate(ctx));
    }

    Var<T> operator()(const Var<T>& x) const { return mul_spatial_gate(x, attention(x)); }
};

/// One decoding branch over an adjacent pair (shallow f_i, deep f_{i+1}).
template <typename T>
class DecoderBranch {
public:
    DecoderBranch() = default;
    DecoderBranch(ParamStore<T>& store, const std::string& name, int shallow, int deep,
                  const DecoderConfig& cfg, Rng& rng)
        : c1_(store, name + ".c1", shallow + deep, cfg.branch_width, 1, rng),
          c2_(store, name + ".c2", cfg.branch_width, cfg.branch_width, 3, rng),
          c3_(store, name + ".c3", cfg.branch_width, cfg.branch_width, 3, rng),
          c4_(store, name + ".c4", cfg.branch_width, cfg.branch_width, 1, rng),
          eca_(store, name + ".eca", cfg.eca_kernel, rng),
          psa_(store, name + ".psa", cfg.psa_width, rng) {}

    Var<T> operator()(const Var<T>& shallow, const Var<T>& deep) const {
        const Shape a = shallow.shape(), b = deep.shape();
        if (a.n != b.n || a.h != 2 * b.h || a.w != 2 * b.w)
            throw ShapeError("decoder branch: deep input " + b.str() + " is not half of " + a.str());
        return psa_(eca_(residual(concat_channels<T>({upsample(deep, 2), shallow}))));
    }

    /// F1 = C1(Fc); F2 = relu(C2 F1 + F1); F3 = relu(C3 F2 + F2 + F1); F4 = relu(C4 F3 + F3 + F2 + F1).
    Var<T> residual(const Var<T>& fc) const {
        auto f1 = c1_(fc);
        auto f2 = relu(add(c2_(f1), f1));
        auto f3 = relu(add<T>({c3_(f2), f2, f1}));
        return relu(add<T>({c4_(f3), f3, f2, f1}));
    }

    const Eca<T>& eca() const { return eca_; }
    const Psa<T>& psa() const { return psa_; }

    const Conv2d<T>& c1() const { return c1_; }

private:
    Conv2d<T> c1_, c2_, c3_, c4_;
    Eca<T> eca_;
    Psa<T> psa_;
};

/// Fusion of the three branch outputs at stride 4 and the C5/C6 head.
template <typename T>
class FusionHead {
public:
    FusionHead() = default;
    FusionHead(ParamStore<T>& store, const std::string& name, int branch_width, Rng& rng)
        : c5_(store, name + ".c5", 3 * branch_width, branch_width, 3, rng),
          c6_(store, name + ".c6", branch_width, 1, 1, rng) {}

    /// sigma(C6(C5(concat(s, up2(m), up4(l))))), then bilinear resize of the
    /// probabilities to (out_h, out_w).
    Var<T> operator()(const Var<T>& small, const Var<T>& medium, const Var<T>& large, int out_h,
                      int out_w) const {
        const Shape s = small.shape(), m = medium.shape(), l = large.shape();
        if (m.h * 2 != s.h || m.w * 2 != s.w || l.h * 4 != s.h || l.w * 4 != s.w || s.c != m.c || s.c != l.c)
            throw ShapeError("fusion: inconsistent branch shapes " + s.str() + " " + m.str() + " " + l.str());
        auto fused = concat_channels<T>({small, upsample(medium, 2), upsample(large, 4)});
        return resize_bilinear(sigmoid(c6_(c5_(fused))), out_h, out_w);
    }

    const Conv2d<T>& c5() const { return c5_; }
    const Conv2d<T>& c6() const { return c6_; }

private:
    Conv2d<T> c5_, c6_;
};

/// Three parallel branches over (f1,f2), (f2,f3), (f3,f4), fused at stride 4.
template <typename T>
class ScaleAdaptiveDecoder {
public:
    ScaleAdaptiveDecoder(ParamStore<T>& store, const std::array<int, 4>& widths, const DecoderConfig& cfg,
                         Rng& rng, const std::string& prefix = "sad") {
        cfg.validate();
        const char* names[] = {"small", "medium", "large"};
        for (int i = 0; i < 3; ++i)
            branches_[i] = DecoderBranch<T>(store, prefix + "." + names[i], widths[i], widths[i + 1], cfg, rng);
        head_ = FusionHead<T>(store, prefix + ".head", cfg.branch_width, rng);
    }

    std::array<Var<T>, 3> branches(const FeaturePyramid<T>& f) const {
        return {branches_[0](f[0], f[1]), branches_[1](f[1], f[2]), branches_[2](f[2], f[3])};
    }

    Var<T> operator()(const FeaturePyramid<T>& f, int out_h, int out_w) const {
        auto b = branches(f);
        return head_(b[0], b[1], b[2], out_h, out_w);
    }

    const DecoderBranch<T>& branch(int i) const { return branches_[i]; }
    const FusionHead<T>& head() const { return head_; }

private:
    std::array<DecoderBranch<T>, 3> branches_;
    FusionHead<T> head_;
};

}  // namespace tamiseg
