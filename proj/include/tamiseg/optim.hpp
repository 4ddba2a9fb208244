#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "autograd.hpp"

namespace tamiseg {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam without weight decay over a fixed, named parameter list.
template <typename T>
class Adam {
public:
    using Entry = std::pair<std::string, Var<T>>;

    Adam(std::vector<Entry> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        for (const auto& [_, p] : params_) {
            m_.emplace_back(p.shape());
            v_.emplace_back(p.shape());
        }
    }

    void zero_grad() {
        for (auto& [_, p] : params_) p.zero_grad();
    }

    void step() {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        const double step = cfg_.lr * std::sqrt(c2) / c1;
        const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
        const T eps_hat = static_cast<T>(cfg_.eps * std::sqrt(c2));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& p = params_[k].second;
            const auto& g = p.grad();
            auto& w = p.mutable_value();
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = b1 * m[i] + (T(1) - b1) * g[i];
                v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
                w[i] -= static_cast<T>(step) * m[i] / (std::sqrt(v[i]) + eps_hat);
            }
        }
    }

    long long steps() const { return t_; }
    void set_steps(long long t) { t_ = t; }
    const std::vector<Entry>& params() const { return params_; }
    std::vector<Tensor<T>>& first_moments() { return m_; }
    std::vector<Tensor<T>>& second_moments() { return v_; }
    const AdamConfig& config() const { return cfg_; }

private:
    std::vector<Entry> params_;
    AdamConfig cfg_;
    std::vector<Tensor<T>> m_, v_;
    long long t_ = 0;
};

}  // namespace tamiseg
