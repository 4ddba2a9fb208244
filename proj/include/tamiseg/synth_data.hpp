#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "errors.hpp"
#include "image.hpp"
#include "rng.hpp"

namespace tamiseg {

enum class SizeClass { small, medium, large };

inline const char* to_string(SizeClass s) {
    switch (s) {
        case SizeClass::small: return "small";
        case SizeClass::medium: return "medium";
        case SizeClass::large: return "large";
    }
    return "?";
}

inline SizeClass size_class_from_string(const std::string& s) {
    if (s == "small") return SizeClass::small;
    if (s == "medium") return SizeClass::medium;
    if (s == "large") return SizeClass::large;
    throw ConfigError("unknown size class '" + s + "'");
}

/// Radius range as fractions of min(H, W).
struct RadiusBand {
    double lo = 0, hi = 0;
};

struct SynthConfig {
    int height = 64;
    int width = 64;
    int min_lesions = 1;
    int max_lesions = 3;
    RadiusBand small{0.14, 0.18};
    RadiusBand medium{0.20, 0.25};
    RadiusBand large{0.27, 0.34};
    double texture_amplitude = 0.08;
    double illumination = 0.15;    // peak darkening of the illumination ramp
    double noise_sigma = 0.02;     // per-pixel Gaussian noise
    double contrast_min = 0.18;    // lesion colour offset range
    double contrast_max = 0.35;
    double boundary_noise = 0.12;  // total amplitude of radial harmonics

    const RadiusBand& band(SizeClass s) const {
        switch (s) {
            case SizeClass::small: return small;
            case SizeClass::medium: return medium;
            default: return large;
        }
    }

    void validate() const {
        if (height <= 0 || width <= 0 || height % 32 != 0 || width % 32 != 0)
            throw ConfigError("image size must be positive and divisible by 32, got " +
                              std::to_string(height) + "x" + std::to_string(width));
        if (min_lesions < 0 || max_lesions < min_lesions)
            throw ConfigError("invalid lesion count range");
        for (auto s : {SizeClass::small, SizeClass::medium, SizeClass::large}) {
            const auto& b = band(s);
            if (!(b.lo > 0 && b.hi > b.lo && b.hi < 0.5))
                throw ConfigError(std::string("empty or invalid radius band: ") + to_string(s));
        }
        if (!(small.hi <= medium.lo && medium.hi <= large.lo))
            throw ConfigError("radius bands must be disjoint and ordered small < medium < large");
        if (boundary_noise < 0 || boundary_noise >= 0.5) throw ConfigError("boundary_noise out of range");
        if (contrast_min < 0 || contrast_max < contrast_min) throw ConfigError("invalid contrast range");
    }
};

/// One lesion: an ellipse whose boundary radius is modulated by low-order harmonics.
struct LesionDescriptor {
    SizeClass size = SizeClass::small;
    double cx = 0, cy = 0;  // pixel coordinates of the centre
    double rx = 0, ry = 0;  // semi-axes in pixels
    double angle = 0;       // rotation in radians
    std::array<double, 3> harmonic_amp{};    // orders 2, 3, 4
    std::array<double, 3> harmonic_phase{};

    bool operator==(const LesionDescriptor&) const = default;

    /// Whether the pixel centre (x + 0.5, y + 0.5) lies inside the lesion.
    bool contains(int x, int y) const {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const double ca = std::cos(angle), sa = std::sin(angle);
        const double u = (dx * ca + dy * sa) / rx;
        const double v = (-dx * sa + dy * ca) / ry;
        const double rho = std::sqrt(u * u + v * v);
        const double phi = std::atan2(v, u);
        double bound = 1.0;
        for (int k = 0; k < 3; ++k) bound += harmonic_amp[k] * std::cos((k + 2) * phi + harmonic_phase[k]);
        return rho <= bound;
    }
};

struct Prompt {
    std::string text;
    int token_count = 0;
    bool operator==(const Prompt&) const = default;
};

struct SampleRecord {
    std::string id;
    std::uint64_t seed = 0;
    std::vector<LesionDescriptor> lesions;
    bool operator==(const SampleRecord&) const = default;
};

struct Sample {
    Image image;
    BinaryMask mask;
    Prompt prompt;
    SampleRecord record;
};

/// Lower-cased alphanumeric runs; whitespace and punctuation separate tokens.
inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char ch : text) {
        if (std::isalnum(ch)) {
            cur.push_back(static_cast<char>(std::tolower(ch)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

inline std::string count_word(int n) {
    static const char* words[] = {"no",    "one",  "two", "three", "four", "five",
                                  "six",   "seven", "eight", "nine", "ten"};
    return n >= 0 && n <= 10 ? words[n] : std::to_string(n);
}

/// "<count> lesion(s), one <size> <upper|lower> <left|right>, ..." or "no lesion".
inline Prompt make_prompt(const std::vector<LesionDescriptor>& lesions, int height, int width) {
    Prompt p;
    if (lesions.empty()) {
        p.text = "no lesion";
    } else {
        const int n = static_cast<int>(lesions.size());
        p.text = count_word(n) + (n == 1 ? " lesion" : " lesions");
        for (const auto& l : lesions) {
            p.text += ", one ";
            p.text += to_string(l.size);
            p.text += l.cy < height / 2.0 ? " upper" : " lower";
            p.text += l.cx < width / 2.0 ? " left" : " right";
        }
    }
    p.token_count = static_cast<int>(tokenize(p.text).size());
    return p;
}

/// Union of all lesions.
inline BinaryMask rasterize(const std::vector<LesionDescriptor>& lesions, int height, int width) {
    BinaryMask m(height, width);
    for (const auto& l : lesions) {
        const double reach = std::max(l.rx, l.ry) * 1.5 + 1;
        const int y0 = std::max(0, static_cast<int>(std::floor(l.cy - reach)));
        const int y1 = std::min(height - 1, static_cast<int>(std::ceil(l.cy + reach)));
        const int x0 = std::max(0, static_cast<int>(std::floor(l.cx - reach)));
        const int x1 = std::min(width - 1, static_cast<int>(std::ceil(l.cx + reach)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                if (l.contains(x, y)) m.at(y, x) = 1;
    }
    return m;
}

/// Deterministic image/mask/prompt triple for `seed`.
inline Sample generate_sample(std::uint64_t seed, const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(derive_seed(seed, 0x5eed));
    const int H = cfg.height, W = cfg.width;
    const double dim = std::min(H, W);

    Sample s;
    s.record.seed = seed;
    const int count = rng.uniform_int(cfg.min_lesions, cfg.max_lesions);
    for (int i = 0; i < count; ++i) {
        LesionDescriptor l;
        l.size = static_cast<SizeClass>(rng.uniform_int(0, 2));
        const auto& b = cfg.band(l.size);
        l.rx = rng.uniform(b.lo, b.hi) * dim;
        l.ry = rng.uniform(b.lo, b.hi) * dim;
        const double r = std::max(l.rx, l.ry);
        l.cx = rng.uniform(r, W - r);
        l.cy = rng.uniform(r, H - r);
        l.angle = rng.uniform(0, std::numbers::pi);
        double budget = cfg.boundary_noise;
        for (int k = 0; k < 3; ++k) {
            l.harmonic_amp[k] = rng.uniform(0, budget);
            budget -= l.harmonic_amp[k];
            l.harmonic_phase[k] = rng.uniform(0, 2 * std::numbers::pi);
        }
        s.record.lesions.push_back(l);
    }
    s.mask = rasterize(s.record.lesions, H, W);
    s.prompt = make_prompt(s.record.lesions, H, W);

    // Background: tissue tint, low-frequency texture and an illumination ramp.
    std::array<double, 3> base{0.72 + rng.uniform(-0.08, 0.08), 0.46 + rng.uniform(-0.08, 0.08),
                               0.40 + rng.uniform(-0.08, 0.08)};
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::array<Wave, 4> waves{};
    for (auto& w : waves) {
        w.fx = rng.uniform(-3, 3) * 2 * std::numbers::pi / W;
        w.fy = rng.uniform(-3, 3) * 2 * std::numbers::pi / H;
        w.phase = rng.uniform(0, 2 * std::numbers::pi);
        w.amp = rng.uniform(0.5, 1.0) * cfg.texture_amplitude / 2;
    }
    const double light_angle = rng.uniform(0, 2 * std::numbers::pi);
    const double light = rng.uniform(0, cfg.illumination);
    // Lesions are darker and redder than the surrounding tissue.
    const double contrast = rng.uniform(cfg.contrast_min, cfg.contrast_max);
    const std::array<double, 3> lesion_shift{-0.25 * contrast, -0.9 * contrast, -0.7 * contrast};

    s.image = Image(H, W);
    const double lc = std::cos(light_angle), ls = std::sin(light_angle);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double tex = 0;
            for (const auto& w : waves) tex += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
            const double ramp = ((x / double(W) - 0.5) * lc + (y / double(H) - 0.5) * ls + 0.7071) /
                                1.4142;
            const bool in = s.mask.at(y, x) != 0;
            for (int c = 0; c < 3; ++c) {
                double v = base[c] + tex - light * ramp + (in ? lesion_shift[c] : 0.0);
                v += rng.normal() * cfg.noise_sigma;
                s.image.at(c, y, x) = quantize8(static_cast<float>(v));
            }
        }
    return s;
}

struct PerturbConfig {
    double brightness = 0.4;
    double contrast = 0.4;
    double saturation = 0.4;
    double hue = 0.1;
    double grayscale_prob = 0.2;
    double blur_sigma_min = 0.1;
    double blur_sigma_max = 2.0;

    void validate() const {
        if (brightness < 0 || contrast < 0 || saturation < 0 || brightness > 1 || contrast > 1 ||
            saturation > 1)
            throw ConfigError("jitter ranges must lie in [0,1]");
        if (hue < 0 || hue > 0.5) throw ConfigError("hue range must lie in [0,0.5]");
        if (grayscale_prob < 0 || grayscale_prob > 1) throw ConfigError("grayscale_prob must lie in [0,1]");
        if (blur_sigma_min < 0 || blur_sigma_max < blur_sigma_min)
            throw ConfigError("invalid blur sigma range");
    }

    static PerturbConfig identity() { return {0, 0, 0, 0, 0, 0, 0}; }
};

namespace detail {

inline float clamp01(double v) { return static_cast<float>(v < 0 ? 0 : (v > 1 ? 1 : v)); }

inline float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

inline void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
    const float mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
    v = mx;
    s = mx > 0 ? d / mx : 0;
    if (d <= 0) {
        h = 0;
    } else if (mx == r) {
        h = std::fmod((g - b) / d, 6.f) / 6.f;
    } else if (mx == g) {
        h = ((b - r) / d + 2.f) / 6.f;
    } else {
        h = ((r - g) / d + 4.f) / 6.f;
    }
    if (h < 0) h += 1.f;
}

inline void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
    const float hh = h * 6.f;
    const int i = static_cast<int>(std::floor(hh)) % 6;
    const float f = hh - std::floor(hh);
    const float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (i) {
        case 0: r = v, g = t, b = p; break;
        case 1: r = q, g = v, b = p; break;
        case 2: r = p, g = v, b = t; break;
        case 3: r = p, g = q, b = v; break;
        case 4: r = t, g = p, b = v; break;
        default: r = v, g = p, b = q; break;
    }
}

// Separable Gaussian with clamp-to-edge borders.
inline void gaussian_blur(Image& img, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : k) v /= sum;
    const int H = img.height(), W = img.width();
    std::vector<double> tmp(static_cast<std::size_t>(H) * W);
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double acc = 0;
                for (int i = -radius; i <= radius; ++i)
                    acc += k[i + radius] * img.at(c, y, std::clamp(x + i, 0, W - 1));
                tmp[static_cast<std::size_t>(y) * W + x] = acc;
            }
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double acc = 0;
                for (int i = -radius; i <= radius; ++i)
                    acc += k[i + radius] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, H - 1)) * W + x];
                img.at(c, y, x) = clamp01(acc);
            }
    }
}

}  // namespace detail

/// Photometric perturbation: brightness, contrast, saturation and hue jitter, then
/// random grayscale and Gaussian blur. Geometry is untouched, so masks stay valid.
inline Image perturb(const Image& img, std::uint64_t seed, const PerturbConfig& cfg = {}) {
    cfg.validate();
    Rng rng(derive_seed(seed, 0xa11a));
    // Draw every parameter up front so the stream layout does not depend on the ranges.
    const double brightness = 1 + rng.uniform(-cfg.brightness, cfg.brightness);
    const double contrast = 1 + rng.uniform(-cfg.contrast, cfg.contrast);
    const double saturation = 1 + rng.uniform(-cfg.saturation, cfg.saturation);
    const double hue = rng.uniform(-cfg.hue, cfg.hue);
    const bool gray = rng.bernoulli(cfg.grayscale_prob) && cfg.grayscale_prob > 0;
    const double sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);

    Image out = img;
    const int H = img.height(), W = img.width();
    auto& px = out.pixels.values();
    if (cfg.brightness > 0)
        for (auto& v : px) v = detail::clamp01(v * brightness);
    if (cfg.contrast > 0) {
        double m = 0;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) m += detail::luma(out.at(0, y, x), out.at(1, y, x), out.at(2, y, x));
        m /= static_cast<double>(H) * W;
        for (auto& v : px) v = detail::clamp01((v - m) * contrast + m);
    }
    if (cfg.saturation > 0)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const float g = detail::luma(out.at(0, y, x), out.at(1, y, x), out.at(2, y, x));
                for (int c = 0; c < 3; ++c)
                    out.at(c, y, x) = detail::clamp01((out.at(c, y, x) - g) * saturation + g);
            }
    if (cfg.hue > 0)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                float h, s, v, r, g, b;
                detail::rgb_to_hsv(out.at(0, y, x), out.at(1, y, x), out.at(2, y, x), h, s, v);
                h = static_cast<float>(std::fmod(h + hue + 1.0, 1.0));
                detail::hsv_to_rgb(h, s, v, r, g, b);
                out.at(0, y, x) = detail::clamp01(r);
                out.at(1, y, x) = detail::clamp01(g);
                out.at(2, y, x) = detail::clamp01(b);
            }
    if (gray)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const float g = detail::luma(out.at(0, y, x), out.at(1, y, x), out.at(2, y, x));
                for (int c = 0; c < 3; ++c) out.at(c, y, x) = g;
            }
    if (cfg.blur_sigma_max > 0 && sigma > 0) detail::gaussian_blur(out, sigma);
    return out;
}

}  // namespace tamiseg
