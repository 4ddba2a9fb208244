#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ops.hpp"
#include "rng.hpp"

namespace tamiseg {

/// Ordered registry of named trainable tensors. Order is insertion order and
/// defines checkpoint layout.
template <typename T>
class ParamStore {
public:
    Var<T> add(std::string name, Tensor<T> init) {
        for (const auto& [n, _] : items_)
            if (n == name) throw ConfigError("duplicate parameter name " + name);
        auto v = Var<T>::parameter(std::move(init));
        items_.emplace_back(std::move(name), v);
        return v;
    }

    const std::vector<std::pair<std::string, Var<T>>>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }

    const Var<T>* find(const std::string& name) const {
        for (const auto& [n, v] : items_)
            if (n == name) return &v;
        return nullptr;
    }

    void zero_grad() {
        for (auto& [_, v] : items_) v.zero_grad();
    }

    std::size_t scalar_count() const {
        std::size_t total = 0;
        for (const auto& [_, v] : items_) total += v.value().size();
        return total;
    }

    /// Parameters whose name starts with `prefix`.
    std::vector<Var<T>> with_prefix(const std::string& prefix) const {
        std::vector<Var<T>> out;
        for (const auto& [n, v] : items_)
            if (n.rfind(prefix, 0) == 0) out.push_back(v);
        return out;
    }

private:
    std::vector<std::pair<std::string, Var<T>>> items_;
};

/// He-style normal init scaled by fan-in.
template <typename T>
Tensor<T> he_normal(Shape shape, int fan_in, Rng& rng) {
    Tensor<T> t(shape);
    const double sd = std::sqrt(2.0 / fan_in);
    for (auto& v : t.values()) v = static_cast<T>(rng.normal() * sd);
    return t;
}

template <typename T>
struct Conv2d {
    Var<T> weight, bias;
    int stride = 1, pad = 0, dilation = 1;

    Conv2d() = default;
    Conv2d(ParamStore<T>& store, const std::string& name, int in, int out, int kernel, Rng& rng,
           int stride_ = 1, int dilation_ = 1, bool with_bias = true)
        : stride(stride_), pad(dilation_ * (kernel / 2)), dilation(dilation_) {
        weight = store.add(name + ".weight",
                           he_normal<T>(Shape{out, in, kernel, kernel}, in * kernel * kernel, rng));
        if (with_bias) bias = store.add(name + ".bias", Tensor<T>(Shape{1, out, 1, 1}));
    }

    Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, bias, stride, pad, dilation); }

    int in_channels() const { return weight.shape().c; }
    int out_channels() const { return weight.shape().n; }
};

}  // namespace tamiseg
