#pragma once

#include <cmath>
#include <string>

#include <tamiseg/metrics.hpp>
#include <tamiseg/rng.hpp>

namespace tamiseg::test {

inline BinaryMask random_mask(int h, int w, Rng& rng) {
    BinaryMask m(h, w);
    const double density = rng.uniform();
    for (auto& v : m.values) v = rng.uniform() < density ? 1 : 0;
    return m;
}

struct PixelCounts {
    double tp = 0, fp = 0, fn = 0, tn = 0;
};

inline PixelCounts count_pixels(const BinaryMask& pred, const BinaryMask& gt) {
    PixelCounts c;
    for (int y = 0; y < gt.height; ++y)
        for (int x = 0; x < gt.width; ++x) {
            const bool p = pred.at(y, x), g = gt.at(y, x);
            (p ? (g ? c.tp : c.fp) : (g ? c.fn : c.tn)) += 1;
        }
    return c;
}

inline double brute_dice(const BinaryMask& pred, const BinaryMask& gt, double eps = 1.0) {
    const auto c = count_pixels(pred, gt);
    const double den = 2 * c.tp + c.fp + c.fn + eps;
    return den == 0 ? 100.0 : 100.0 * (2 * c.tp + eps) / den;
}

inline double brute_miou(const BinaryMask& pred, const BinaryMask& gt, double eps = 1.0) {
    const auto c = count_pixels(pred, gt);
    auto iou = [eps](double inter, double uni) { return uni + eps == 0 ? 1.0 : (inter + eps) / (uni + eps); };
    return 100.0 * (iou(c.tp, c.tp + c.fp + c.fn) + iou(c.tn, c.tn + c.fp + c.fn)) / 2.0;
}

/// Empty string when every pixel of the overlay is either untouched (TN) or the
/// alpha blend of the base with the colour of its class; otherwise a description.
inline std::string overlay_partition_error(const BinaryMask& pred, const BinaryMask& gt, const Image& base,
                                           const Image& overlay) {
    const std::array<float, 3> yellow{1, 1, 0}, red{1, 0, 0}, green{0, 1, 0};
    for (int y = 0; y < gt.height; ++y)
        for (int x = 0; x < gt.width; ++x) {
            const bool p = pred.at(y, x), g = gt.at(y, x);
            const std::array<float, 3>* col = p && g ? &yellow : p ? &red : g ? &green : nullptr;
            for (int c = 0; c < 3; ++c) {
                const float want = col ? 0.5f * base.at(c, y, x) + 0.5f * (*col)[c] : base.at(c, y, x);
                if (std::abs(overlay.at(c, y, x) - want) > 1e-6f)
                    return "pixel " + std::to_string(y) + "," + std::to_string(x) + " channel " + std::to_string(c);
            }
        }
    return {};
}

}  // namespace tamiseg::test
