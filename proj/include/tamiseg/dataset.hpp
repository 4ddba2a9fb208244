#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "png_io.hpp"
#include "synth_data.hpp"

namespace tamiseg {

namespace fs = std::filesystem;

inline std::string sample_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%06zu", index);
    return buf;
}

inline nlohmann::json lesion_to_json(const LesionDescriptor& l) {
    return {{"size", to_string(l.size)}, {"cx", l.cx}, {"cy", l.cy}, {"rx", l.rx},
            {"ry", l.ry}, {"angle", l.angle}, {"harmonic_amp", l.harmonic_amp},
            {"harmonic_phase", l.harmonic_phase}};
}

inline LesionDescriptor lesion_from_json(const nlohmann::json& j) {
    LesionDescriptor l;
    l.size = size_class_from_string(j.at("size").get<std::string>());
    l.cx = j.at("cx");
    l.cy = j.at("cy");
    l.rx = j.at("rx");
    l.ry = j.at("ry");
    l.angle = j.at("angle");
    l.harmonic_amp = j.at("harmonic_amp").get<std::array<double, 3>>();
    l.harmonic_phase = j.at("harmonic_phase").get<std::array<double, 3>>();
    return l;
}

namespace detail {

inline void write_text(const fs::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw DatasetError("cannot write " + p.string());
    f << s;
}

inline std::string read_text(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw DatasetError("missing file: " + p.string());
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) out.push_back(cur);
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

}  // namespace detail

inline constexpr const char kManifestHeader[] = "id,seed,lesion_count,size_classes";

/// Write samples in the on-disk layout. Ids are assigned from the index when empty.
/// Returns the manifest path.
inline fs::path write_dataset(std::vector<Sample>& samples, const fs::path& dir) {
    for (const char* sub : {"images", "masks", "prompts", "records"}) fs::create_directories(dir / sub);
    std::ostringstream manifest;
    manifest << kManifestHeader << '\n';
    for (std::size_t i = 0; i < samples.size(); ++i) {
        auto& s = samples[i];
        if (s.record.id.empty()) s.record.id = sample_id(i);
        const std::string& id = s.record.id;
        png::write_image(dir / "images" / (id + ".png"), s.image);
        png::write_mask(dir / "masks" / (id + ".png"), s.mask);
        detail::write_text(dir / "prompts" / (id + ".txt"), s.prompt.text + '\n');
        nlohmann::json rec{{"id", id}, {"seed", s.record.seed}, {"lesions", nlohmann::json::array()}};
        for (const auto& l : s.record.lesions) rec["lesions"].push_back(lesion_to_json(l));
        detail::write_text(dir / "records" / (id + ".json"), rec.dump(2) + '\n');

        manifest << id << ',' << s.record.seed << ',' << s.record.lesions.size() << ',';
        for (std::size_t k = 0; k < s.record.lesions.size(); ++k)
            manifest << (k ? ";" : "") << to_string(s.record.lesions[k].size);
        manifest << '\n';
    }
    const fs::path path = dir / "manifest.csv";
    detail::write_text(path, manifest.str());
    return path;
}

/// Load a dataset directory. A missing manifest is tolerated when `images/` exists
/// (ids are then the sorted image stems); prompts and records are optional per sample.
inline std::vector<Sample> load_dataset(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DatasetError("dataset directory does not exist: " + dir.string());
    struct Row {
        std::string id, seed;
        int lesion_count = -1;
    };
    std::vector<Row> rows;
    const fs::path manifest = dir / "manifest.csv";
    if (fs::exists(manifest)) {
        std::istringstream is(detail::read_text(manifest));
        std::string line;
        if (!std::getline(is, line) || line != kManifestHeader)
            throw DatasetError("manifest.csv: unexpected header '" + line + "'");
        int lineno = 1;
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty()) continue;
            auto cols = detail::split(line, ',');
            if (cols.size() != 4 || cols[0].empty())
                throw DatasetError("manifest.csv line " + std::to_string(lineno) + ": malformed row");
            Row r{cols[0], cols[1], -1};
            if (!cols[2].empty()) r.lesion_count = std::stoi(cols[2]);
            rows.push_back(std::move(r));
        }
    } else if (fs::is_directory(dir / "images")) {
        for (const auto& e : fs::directory_iterator(dir / "images"))
            if (e.path().extension() == ".png") rows.push_back({e.path().stem().string(), "", -1});
        std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.id < b.id; });
    }

    std::vector<Sample> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
        Sample s;
        const fs::path img = dir / "images" / (r.id + ".png");
        const fs::path msk = dir / "masks" / (r.id + ".png");
        if (!fs::exists(img)) throw DatasetError("manifest lists missing image file: " + img.string());
        if (!fs::exists(msk)) throw DatasetError("manifest lists missing mask file: " + msk.string());
        s.image = png::read_image(img);
        s.mask = png::read_mask(msk);
        if (s.mask.height != s.image.height() || s.mask.width != s.image.width())
            throw DatasetError("mask/image size mismatch for " + r.id);
        s.record.id = r.id;
        if (!r.seed.empty()) s.record.seed = std::stoull(r.seed);
        const fs::path prompt = dir / "prompts" / (r.id + ".txt");
        if (fs::exists(prompt)) {
            std::string text = detail::read_text(prompt);
            while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
            s.prompt.text = text;
            s.prompt.token_count = static_cast<int>(tokenize(text).size());
        }
        const fs::path rec = dir / "records" / (r.id + ".json");
        if (fs::exists(rec)) {
            auto j = nlohmann::json::parse(detail::read_text(rec));
            for (const auto& l : j.at("lesions")) s.record.lesions.push_back(lesion_from_json(l));
            if (r.lesion_count >= 0 && r.lesion_count != static_cast<int>(s.record.lesions.size()))
                throw DatasetError("manifest lesion_count disagrees with record for " + r.id);
        }
        out.push_back(std::move(s));
    }
    return out;
}

/// Generate `n` samples with seeds base_seed + i.
inline std::vector<Sample> generate_dataset(std::size_t n, std::uint64_t base_seed, const SynthConfig& cfg) {
    std::vector<Sample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(generate_sample(base_seed + i, cfg));
        out.back().record.id = sample_id(i);
    }
    return out;
}

}  // namespace tamiseg
