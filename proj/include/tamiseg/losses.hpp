#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ops.hpp"

namespace tamiseg {

struct LossConfig {
    double theta = 0.5;       // binarization threshold
    double lambda = 0.1;      // distillation weight
    double eps_clamp = 1e-7;  // probabilities are clamped to [eps, 1 - eps] before logs
    double eps_dice = 1.0;    // Dice smoothing

    void validate() const {
        if (!(theta > 0.0 && theta < 1.0)) throw ConfigError("theta must lie in (0,1)");
        if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
        if (!(eps_clamp > 0.0 && eps_clamp < 0.5)) throw ConfigError("eps_clamp must lie in (0,0.5)");
        if (!(eps_dice >= 0.0)) throw ConfigError("eps_dice must be non-negative");
    }
};

namespace detail {
template <typename T>
void check_pair(const Tensor<T>& g, const Var<T>& p, const char* what) {
    if (g.shape() != p.shape())
        throw ShapeError(std::string(what) + ": target " + g.shape().str() + " vs prediction " +
                         p.shape().str());
}
}  // namespace detail

/// Hard threshold, inclusive at theta. Returns a constant tensor of {0,1}.
template <typename T>
Tensor<T> binarize(const Tensor<T>& prob, double theta) {
    Tensor<T> out(prob.shape());
    for (std::size_t i = 0; i < prob.size(); ++i)
        out[i] = static_cast<double>(prob[i]) >= theta ? T(1) : T(0);
    return out;
}

/// Pixel-mean binary cross-entropy.
template <typename T>
Var<T> bce_loss(const Tensor<T>& target, const Var<T>& prob, double eps_clamp = 1e-7) {
    detail::check_pair(target, prob, "bce_loss");
    const T lo = static_cast<T>(eps_clamp), hi = T(1) - static_cast<T>(eps_clamp);
    const auto& p = prob.value();
    // Accumulate in double so float and double builds agree closely.
    double sum = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = std::clamp(p[i], lo, hi);
        const double g = target[i];
        sum -= g * std::log(q) + (1.0 - g) * std::log(1.0 - q);
    }
    const double n = static_cast<double>(p.size());
    Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(sum / n));
    return make_result<T>(std::move(out), {prob}, [prob, target, lo, hi, n](Node<T>& self) {
        auto& gp = prob.node()->grad_buffer();
        const auto& p = prob.value();
        const T scale = self.grad[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const T q = p[i];
            if (q < lo || q > hi) continue;
            const T g = target[i];
            gp[i] += scale * ((T(1) - g) / (T(1) - q) - g / q);
        }
    });
}

/// 1 - (2 sum(PG) + eps) / (sum(P) + sum(G) + eps), per sample, then mean over the batch.
template <typename T>
Var<T> dice_loss(const Tensor<T>& target, const Var<T>& prob, double eps_dice = 1.0) {
    detail::check_pair(target, prob, "dice_loss");
    const Shape s = prob.shape();
    const std::size_t per = s.size() / s.n;
    auto inter = std::make_shared<std::vector<double>>(s.n);
    auto denom = std::make_shared<std::vector<double>>(s.n);
    double total = 0;
    for (int n = 0; n < s.n; ++n) {
        const T* p = prob.value().data() + n * per;
        const T* g = target.data() + n * per;
        double i_sum = 0, p_sum = 0, g_sum = 0;
        for (std::size_t i = 0; i < per; ++i) {
            i_sum += static_cast<double>(p[i]) * g[i];
            p_sum += p[i];
            g_sum += g[i];
        }
        (*inter)[n] = 2 * i_sum + eps_dice;
        (*denom)[n] = p_sum + g_sum + eps_dice;
        total += (*denom)[n] > 0 ? 1.0 - (*inter)[n] / (*denom)[n] : 0.0;
    }
    Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(total / s.n));
    return make_result<T>(std::move(out), {prob}, [prob, target, inter, denom, per](Node<T>& self) {
        const Shape s = prob.shape();
        auto& gp = prob.node()->grad_buffer();
        for (int n = 0; n < s.n; ++n) {
            const double d = (*denom)[n];
            if (d <= 0) continue;
            // d/dp_i [1 - a/d] = -(2 g_i d - a) / d^2
            const double a = (*inter)[n];
            const double scale = static_cast<double>(self.grad[0]) / s.n;
            const T* g = target.data() + n * per;
            T* out = gp.data() + n * per;
            for (std::size_t i = 0; i < per; ++i)
                out[i] += static_cast<T>(-scale * (2.0 * g[i] * d - a) / (d * d));
        }
    });
}

/// Hybrid BCE + Dice.
template <typename T>
Var<T> mask_loss(const Tensor<T>& target, const Var<T>& prob, const LossConfig& cfg = {}) {
    return add(bce_loss(target, prob, cfg.eps_clamp), dice_loss(target, prob, cfg.eps_dice));
}

/// Symmetric consistency between two predictions; each side is supervised by the
/// other's hard mask, which carries no gradient.
template <typename T>
Var<T> consistency_loss(const Var<T>& pa, const Var<T>& pb, const LossConfig& cfg = {}) {
    if (pa.shape() != pb.shape())
        throw ShapeError("consistency_loss: " + pa.shape().str() + " vs " + pb.shape().str());
    auto a_from_b = bce_loss(binarize(pb.value(), cfg.theta), pa, cfg.eps_clamp);
    auto b_from_a = bce_loss(binarize(pa.value(), cfg.theta), pb, cfg.eps_clamp);
    return scale(add(a_from_b, b_from_a), T(0.5));
}

template <typename T>
struct PretrainTerms {
    Var<T> total, mask_a, mask_b, consistency;
};

/// mask(G, Pa) + mask(G, Pb) + consistency(Pa, Pb). With `use_consistency` off the
/// last term is dropped (ablation control).
template <typename T>
PretrainTerms<T> pretrain_loss(const Tensor<T>& target, const Var<T>& pa, const Var<T>& pb,
                               const LossConfig& cfg = {}, bool use_consistency = true) {
    PretrainTerms<T> t;
    t.mask_a = mask_loss(target, pa, cfg);
    t.mask_b = mask_loss(target, pb, cfg);
    t.consistency = consistency_loss(pa, pb, cfg);
    t.total = use_consistency ? add<T>({t.mask_a, t.mask_b, t.consistency})
                              : add<T>({t.mask_a, t.mask_b});
    return t;
}

/// L_pred + lambda * L_distill.
template <typename T>
Var<T> total_loss(const Var<T>& pred, const Var<T>& distill, double lambda) {
    if (lambda < 0) throw ConfigError("lambda must be non-negative");
    return add(pred, scale(distill, static_cast<T>(lambda)));
}

inline double total_loss(double pred, double distill, double lambda) {
    if (lambda < 0) throw ConfigError("lambda must be non-negative");
    return pred + lambda * distill;
}

}  // namespace tamiseg
