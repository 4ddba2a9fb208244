#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "metrics.hpp"
#include "png_io.hpp"
#include "training.hpp"

namespace tamiseg {

struct SampleMetric {
    std::string id;
    double dice = 0;
    double miou = 0;
};

struct MetricsReport {
    std::string variant;
    std::uint64_t seed = 0;
    std::vector<SampleMetric> samples;
    double mean_dice = 0;
    double mean_miou = 0;

    std::size_t count() const { return samples.size(); }
};

inline MetricsReport summarize(std::string variant, std::uint64_t seed, std::vector<SampleMetric> samples) {
    MetricsReport r{std::move(variant), seed, std::move(samples), 0, 0};
    for (const auto& s : r.samples) {
        r.mean_dice += s.dice;
        r.mean_miou += s.miou;
    }
    if (!r.samples.empty()) {
        r.mean_dice /= static_cast<double>(r.samples.size());
        r.mean_miou /= static_cast<double>(r.samples.size());
    }
    return r;
}

/// Binarized predictions for every sample in `data`, in order.
inline std::vector<BinaryMask> predict_masks(const SegModel<float>& model, const std::vector<Sample>& data,
                                             double theta, int batch = 8) {
    std::vector<BinaryMask> out;
    if (data.empty()) return out;
    const auto probs = predict_probabilities(model, data, all_indices(data.size()), batch);
    for (std::size_t i = 0; i < data.size(); ++i)
        out.push_back(BinaryMask::from_prob(probs, theta, static_cast<int>(i)));
    return out;
}

inline MetricsReport evaluate(const SegModel<float>& model, const std::vector<Sample>& data, double theta,
                              std::string variant = "model", std::uint64_t seed = 0) {
    const auto preds = predict_masks(model, data, theta);
    std::vector<SampleMetric> rows;
    for (std::size_t i = 0; i < data.size(); ++i)
        rows.push_back({data[i].record.id, dice_metric(preds[i], data[i].mask), miou_metric(preds[i], data[i].mask)});
    return summarize(std::move(variant), seed, std::move(rows));
}

inline void write_metrics_csv(const std::vector<MetricsReport>& reports, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "variant,seed,sample_id,dice,miou\n";
    out.precision(9);
    for (const auto& r : reports)
        for (const auto& s : r.samples) out << r.variant << ',' << r.seed << ',' << s.id << ',' << s.dice << ',' << s.miou << '\n';
}

struct MeanStd {
    double mean = 0, std = 0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
    MeanStd m;
    if (v.empty()) return m;
    for (double x : v) m.mean += x;
    m.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        for (double x : v) m.std += (x - m.mean) * (x - m.mean);
        m.std = std::sqrt(m.std / static_cast<double>(v.size() - 1));
    }
    return m;
}

/// One line per variant: mean and sample standard deviation of the per-report means.
inline void write_summary_csv(const std::vector<MetricsReport>& reports, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "variant,runs,dice_mean,dice_std,miou_mean,miou_std\n";
    out.precision(6);
    std::vector<std::string> order;
    for (const auto& r : reports)
        if (std::find(order.begin(), order.end(), r.variant) == order.end()) order.push_back(r.variant);
    for (const auto& name : order) {
        std::vector<double> d, m;
        for (const auto& r : reports)
            if (r.variant == name) {
                d.push_back(r.mean_dice);
                m.push_back(r.mean_miou);
            }
        const auto ds = mean_std(d), ms = mean_std(m);
        out << name << ',' << d.size() << ',' << ds.mean << ',' << ds.std << ',' << ms.mean << ',' << ms.std << '\n';
    }
}

/// Writes `<id>_overlay.png` for each sample; returns the paths.
inline std::vector<std::filesystem::path> write_overlays(const std::vector<Sample>& data,
                                                        const std::vector<BinaryMask>& preds,
                                                        const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> paths;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto p = dir / (data[i].record.id + "_overlay.png");
        png::write_image(p, render_overlay(preds.at(i), data[i].mask, data[i].image));
        paths.push_back(p);
    }
    return paths;
}

/// Mean two-class IoU between binarized predictions on each image and on a
/// perturbed copy of it.
inline double consistency_iou(const PretrainModel<float>& model, const std::vector<Sample>& data,
                              const PerturbConfig& perturb_cfg, std::uint64_t seed, double theta) {
    if (data.empty()) throw DatasetError("consistency probe needs at least one sample");
    double sum = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Image view = perturb(data[i].image, derive_seed(seed, i), perturb_cfg);
        const auto pa = model(batch_images<float>({&data[i].image})).value();
        const auto pb = model(batch_images<float>({&view})).value();
        sum += miou_metric(BinaryMask::from_prob(pa, theta), BinaryMask::from_prob(pb, theta));
    }
    return sum / static_cast<double>(data.size());
}

struct AblationVariant {
    const char* name;
    bool cma, sed, sad;
};

inline constexpr std::array<AblationVariant, 4> kAblationVariants{{{"CAE", false, false, false},
                                                                   {"+CMA", true, false, false},
                                                                   {"+CMA+SED", true, true, false},
                                                                   {"Full", true, true, true}}};

struct AblationConfig {
    TrainConfig pretrain = TrainConfig::tiny(Phase::Pretrain);
    TrainConfig finetune = TrainConfig::tiny(Phase::Finetune);
    std::vector<std::uint64_t> seeds{0, 1, 2};
};

struct AblationRow {
    AblationVariant variant;
    std::uint64_t seed = 0;
    MetricsReport report;
    std::string error;  // non-empty when this row failed

    bool ok() const { return error.empty(); }
};

/// Each seed pretrains one encoder, then fine-tunes and evaluates every variant from it.
inline std::vector<AblationRow> run_ablation(const AblationConfig& cfg, const std::vector<Sample>& train,
                                             const std::vector<Sample>& test,
                                             const std::function<void(const AblationRow&)>& on_row = {}) {
    std::vector<AblationRow> rows;
    for (auto seed : cfg.seeds) {
        std::optional<Checkpoint> encoder;
        std::string pretrain_error;
        try {
            auto pc = cfg.pretrain;
            pc.seed = seed;
            encoder = pretrain(pc, train).checkpoint;
        } catch (const std::exception& e) {
            pretrain_error = std::string("pretrain: ") + e.what();
        }
        for (const auto& v : kAblationVariants) {
            AblationRow row{v, seed, {}, pretrain_error};
            row.report.variant = v.name;
            row.report.seed = seed;
            if (encoder) {
                try {
                    auto fc = cfg.finetune;
                    fc.seed = seed;
                    fc.model.use_cma = v.cma;
                    fc.model.use_sed = v.sed;
                    fc.model.use_sad = v.sad;
                    const auto r = finetune(fc, train, *encoder);
                    const auto model = load_seg_model<float>(r.checkpoint);
                    row.report = evaluate(model, test, fc.loss.theta, v.name, seed);
                } catch (const std::exception& e) {
                    row.error = e.what();
                    row.report.mean_dice = row.report.mean_miou = std::numeric_limits<double>::quiet_NaN();
                }
            } else {
                row.report.mean_dice = row.report.mean_miou = std::numeric_limits<double>::quiet_NaN();
            }
            if (on_row) on_row(row);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

inline std::string csv_safe(std::string s) {
    for (auto& ch : s)
        if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
    return s;
}

/// variant,cma,sed,sad,seed,dice,miou,error
inline void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "variant,cma,sed,sad,seed,dice,miou,error\n";
    out.precision(6);
    for (const auto& r : rows)
        out << r.variant.name << ',' << r.variant.cma << ',' << r.variant.sed << ',' << r.variant.sad << ',' << r.seed
            << ',' << r.report.mean_dice << ',' << r.report.mean_miou << ',' << csv_safe(r.error) << '\n';
}

}  // namespace tamiseg
