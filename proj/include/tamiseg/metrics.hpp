#pragma once

#include <array>
#include <cstdint>

#include "errors.hpp"
#include "image.hpp"

namespace tamiseg {

inline void check_same_size(const BinaryMask& a, const BinaryMask& b) {
    if (a.height != b.height || a.width != b.width)
        throw ShapeError("mask size mismatch: " + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                         std::to_string(b.height) + "x" + std::to_string(b.width));
}

struct Confusion {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Confusion confusion(const BinaryMask& pred, const BinaryMask& gt) {
    check_same_size(pred, gt);
    Confusion c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred.values[i] != 0, g = gt.values[i] != 0;
        if (p && g) ++c.tp;
        else if (p) ++c.fp;
        else if (g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

/// Dice in percent, 100 (2|P&G| + eps) / (|P| + |G| + eps).
inline double dice_metric(const BinaryMask& pred, const BinaryMask& gt, double eps = 1.0) {
    const auto c = confusion(pred, gt);
    const double inter = static_cast<double>(c.tp);
    const double denom = static_cast<double>(2 * c.tp + c.fp + c.fn);
    if (denom + eps == 0) return 100.0;
    return 100.0 * (2 * inter + eps) / (denom + eps);
}

/// Mean of foreground and background IoU, in percent.
inline double miou_metric(const BinaryMask& pred, const BinaryMask& gt, double eps = 1.0) {
    const auto c = confusion(pred, gt);
    auto iou = [eps](std::size_t inter, std::size_t uni) {
        if (uni == 0 && eps == 0) return 1.0;
        return (static_cast<double>(inter) + eps) / (static_cast<double>(uni) + eps);
    };
    const double fg = iou(c.tp, c.tp + c.fp + c.fn);
    const double bg = iou(c.tn, c.tn + c.fp + c.fn);
    return 100.0 * (fg + bg) / 2.0;
}

enum class OverlayClass : std::uint8_t { None, Overlap, Over, Under };

inline OverlayClass overlay_class(bool pred, bool gt) {
    if (pred && gt) return OverlayClass::Overlap;
    if (pred) return OverlayClass::Over;
    if (gt) return OverlayClass::Under;
    return OverlayClass::None;
}

inline constexpr double kOverlayAlpha = 0.5;

/// Tint colour per class: yellow overlap, red over-segmentation, green under-segmentation.
inline std::array<float, 3> overlay_color(OverlayClass c) {
    switch (c) {
        case OverlayClass::Overlap: return {1.f, 1.f, 0.f};
        case OverlayClass::Over: return {1.f, 0.f, 0.f};
        case OverlayClass::Under: return {0.f, 1.f, 0.f};
        case OverlayClass::None: break;
    }
    return {0.f, 0.f, 0.f};
}

inline Image render_overlay(const BinaryMask& pred, const BinaryMask& gt, const Image& base) {
    check_same_size(pred, gt);
    if (base.height() != pred.height || base.width() != pred.width)
        throw ShapeError("overlay base image does not match mask size");
    Image out = base;
    const auto a = static_cast<float>(kOverlayAlpha);
    for (int y = 0; y < pred.height; ++y)
        for (int x = 0; x < pred.width; ++x) {
            const auto cls = overlay_class(pred.at(y, x) != 0, gt.at(y, x) != 0);
            if (cls == OverlayClass::None) continue;
            const auto col = overlay_color(cls);
            for (int c = 0; c < 3; ++c) out.at(c, y, x) = (1.f - a) * base.at(c, y, x) + a * col[c];
        }
    return out;
}

}  // namespace tamiseg
