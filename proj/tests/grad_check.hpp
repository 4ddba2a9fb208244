#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include <tamiseg/autograd.hpp>
#include <tamiseg/rng.hpp>

namespace tamiseg::test {

struct GradReport {
    double rel_error = 0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
    double analytic_norm = 0;
    double numeric_norm = 0;
};

/// Central finite differences of a scalar loss with respect to every entry of each
/// variable in `wrt`, compared against one reverse-mode sweep.
inline GradReport check_gradients(const std::function<Var<double>()>& loss_fn,
                                  const std::vector<Var<double>>& wrt, double step = 1e-6) {
    for (auto v : wrt) v.zero_grad();
    backward(loss_fn());
    std::vector<double> analytic, numeric;
    for (auto v : wrt) {
        const auto g = v.grad();
        analytic.insert(analytic.end(), g.values().begin(), g.values().end());
        auto& val = v.mutable_value();
        for (std::size_t i = 0; i < val.size(); ++i) {
            const double keep = val[i];
            val[i] = keep + step;
            const double up = loss_fn().item();
            val[i] = keep - step;
            const double down = loss_fn().item();
            val[i] = keep;
            numeric.push_back((up - down) / (2 * step));
        }
    }
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
    }
    GradReport r;
    r.analytic_norm = std::sqrt(na);
    r.numeric_norm = std::sqrt(nn);
    const double denom = std::max({r.analytic_norm, r.numeric_norm, 1e-12});
    r.rel_error = std::sqrt(diff) / denom;
    return r;
}

inline Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1, double hi = 1) {
    Tensor<double> t(s);
    for (auto& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace tamiseg::test
