#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "synth_data.hpp"
#include "training.hpp"

namespace tamiseg {

/// Ordered key/value pairs from a flat `key = value` file. `#` starts a comment.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
    double out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ConfigError("'" + key + "': expected a number, got '" + v + "'");
    return out;
}

template <typename I>
I parse_int(const std::string& key, const std::string& v) {
    I out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ConfigError("'" + key + "': expected an integer, got '" + v + "'");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("'" + key + "': expected a boolean, got '" + v + "'");
}

inline std::array<int, 4> parse_int4(const std::string& key, const std::string& v) {
    const auto parts = split(v, ',');
    if (parts.size() != 4) throw ConfigError("'" + key + "': expected four comma-separated integers");
    std::array<int, 4> out{};
    for (int i = 0; i < 4; ++i) out[i] = parse_int<int>(key, trim(parts[i]));
    return out;
}

}  // namespace detail

inline KeyValues parse_key_values(const std::string& text) {
    KeyValues out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        auto key = detail::trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        out.emplace_back(std::move(key), detail::trim(line.substr(eq + 1)));
    }
    return out;
}

inline KeyValues load_key_values(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_key_values(ss.str());
}

/// Apply training keys. Keys under `synth.` are skipped; anything else unknown is an error.
/// `arch = tiny|full` resets the architecture before the other model keys apply.
inline void apply_train_config(const KeyValues& kv, TrainConfig& c) {
    using namespace detail;
    for (const auto& [k, v] : kv)
        if (k == "arch") {
            if (v == "tiny") c.model = ModelConfig::tiny();
            else if (v == "full") c.model = ModelConfig::full();
            else throw ConfigError("'arch': expected tiny or full, got '" + v + "'");
        }
    for (const auto& [k, v] : kv) {
        if (k == "arch" || k.rfind("synth.", 0) == 0) continue;
        if (k == "phase") c.phase = phase_from_string(v);
        else if (k == "lr") c.lr = parse_double(k, v);
        else if (k == "batch") c.batch = parse_int<int>(k, v);
        else if (k == "max_epochs") c.max_epochs = parse_int<int>(k, v);
        else if (k == "max_steps") c.max_steps = parse_int<long long>(k, v);
        else if (k == "patience") c.patience = parse_int<int>(k, v);
        else if (k == "seed") c.seed = parse_int<std::uint64_t>(k, v);
        else if (k == "theta") c.loss.theta = parse_double(k, v);
        else if (k == "lambda") c.loss.lambda = parse_double(k, v);
        else if (k == "eps_clamp") c.loss.eps_clamp = parse_double(k, v);
        else if (k == "eps_dice") c.loss.eps_dice = parse_double(k, v);
        else if (k == "freeze_encoder") c.freeze_encoder = parse_bool(k, v);
        else if (k == "use_consistency") c.use_consistency = parse_bool(k, v);
        else if (k == "val_fraction") c.val_fraction = parse_double(k, v);
        else if (k == "deterministic") c.deterministic = parse_bool(k, v);
        else if (k == "encoder_widths") c.model.encoder.widths = parse_int4(k, v);
        else if (k == "encoder_blocks") c.model.encoder.blocks = parse_int4(k, v);
        else if (k == "head_width") c.model.encoder.head_width = parse_int<int>(k, v);
        else if (k == "branch_width") c.model.decoder.branch_width = parse_int<int>(k, v);
        else if (k == "eca_kernel") c.model.decoder.eca_kernel = parse_int<int>(k, v);
        else if (k == "psa_width") c.model.decoder.psa_width = parse_int<int>(k, v);
        else if (k == "text_dim") c.model.text_dim = parse_int<int>(k, v);
        else if (k == "teacher_dim") c.model.teacher_dim = parse_int<int>(k, v);
        else if (k == "use_cma") c.model.use_cma = parse_bool(k, v);
        else if (k == "use_sed") c.model.use_sed = parse_bool(k, v);
        else if (k == "use_sad") c.model.use_sad = parse_bool(k, v);
        else if (k == "teacher") c.model.teacher = v;
        else if (k == "text_encoder") c.model.text_encoder = v;
        else if (k == "perturb.brightness") c.perturb.brightness = parse_double(k, v);
        else if (k == "perturb.contrast") c.perturb.contrast = parse_double(k, v);
        else if (k == "perturb.saturation") c.perturb.saturation = parse_double(k, v);
        else if (k == "perturb.hue") c.perturb.hue = parse_double(k, v);
        else if (k == "perturb.grayscale_prob") c.perturb.grayscale_prob = parse_double(k, v);
        else if (k == "perturb.blur_sigma_min") c.perturb.blur_sigma_min = parse_double(k, v);
        else if (k == "perturb.blur_sigma_max") c.perturb.blur_sigma_max = parse_double(k, v);
        else throw ConfigError("unknown config key '" + k + "'");
    }
}

/// Apply `synth.*` keys; other keys are ignored.
inline void apply_synth_config(const KeyValues& kv, SynthConfig& c) {
    using namespace detail;
    auto band = [](const std::string& k, const std::string& v) {
        const auto parts = split(v, ',');
        if (parts.size() != 2) throw ConfigError("'" + k + "': expected lo,hi");
        return RadiusBand{parse_double(k, trim(parts[0])), parse_double(k, trim(parts[1]))};
    };
    for (const auto& [k, v] : kv) {
        if (k.rfind("synth.", 0) != 0) continue;
        const auto key = k.substr(6);
        if (key == "height") c.height = parse_int<int>(k, v);
        else if (key == "width") c.width = parse_int<int>(k, v);
        else if (key == "min_lesions") c.min_lesions = parse_int<int>(k, v);
        else if (key == "max_lesions") c.max_lesions = parse_int<int>(k, v);
        else if (key == "small") c.small = band(k, v);
        else if (key == "medium") c.medium = band(k, v);
        else if (key == "large") c.large = band(k, v);
        else if (key == "texture_amplitude") c.texture_amplitude = parse_double(k, v);
        else if (key == "illumination") c.illumination = parse_double(k, v);
        else if (key == "noise_sigma") c.noise_sigma = parse_double(k, v);
        else if (key == "contrast_min") c.contrast_min = parse_double(k, v);
        else if (key == "contrast_max") c.contrast_max = parse_double(k, v);
        else if (key == "boundary_noise") c.boundary_noise = parse_double(k, v);
        else throw ConfigError("unknown config key '" + k + "'");
    }
}

inline nlohmann::json to_json(const SynthConfig& c) {
    return {{"height", c.height},
            {"width", c.width},
            {"min_lesions", c.min_lesions},
            {"max_lesions", c.max_lesions},
            {"small", {c.small.lo, c.small.hi}},
            {"medium", {c.medium.lo, c.medium.hi}},
            {"large", {c.large.lo, c.large.hi}},
            {"texture_amplitude", c.texture_amplitude},
            {"illumination", c.illumination},
            {"noise_sigma", c.noise_sigma},
            {"contrast_min", c.contrast_min},
            {"contrast_max", c.contrast_max},
            {"boundary_noise", c.boundary_noise}};
}

}  // namespace tamiseg
