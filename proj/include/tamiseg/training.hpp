#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "checkpoint.hpp"
#include "dataset.hpp"
#include "losses.hpp"
#include "metrics.hpp"
#include "optim.hpp"

namespace tamiseg {

enum class Phase { Pretrain, Finetune };

inline const char* to_string(Phase p) { return p == Phase::Pretrain ? "pretrain" : "finetune"; }

inline Phase phase_from_string(const std::string& s) {
    if (s == "pretrain" || s == "I" || s == "1") return Phase::Pretrain;
    if (s == "finetune" || s == "II" || s == "2") return Phase::Finetune;
    throw ConfigError("unknown phase '" + s + "'");
}

struct TrainConfig {
    Phase phase = Phase::Pretrain;
    double lr = 2e-3;
    int batch = 8;
    int max_epochs = 300;
    long long max_steps = 0;  // 0 = no step limit
    int patience = 100;
    std::uint64_t seed = 0;
    LossConfig loss;
    bool freeze_encoder = false;
    bool use_consistency = true;
    double val_fraction = 0.1;  // 0 validates on the training set
    ModelConfig model;
    PerturbConfig perturb;
    bool deterministic = true;

    /// Desk-scale defaults for the tiny architecture.
    static TrainConfig tiny(Phase p) {
        TrainConfig c;
        c.phase = p;
        if (p == Phase::Finetune) {
            c.lr = 1e-3;
            c.batch = 4;
            c.max_epochs = 100;
        }
        return c;
    }

    /// Published schedule with the full-width architecture.
    static TrainConfig full(Phase p) {
        TrainConfig c;
        c.phase = p;
        c.model = ModelConfig::full();
        if (p == Phase::Pretrain) {
            c.lr = 1e-4;
            c.batch = 8;
            c.max_epochs = 300;
            c.patience = 100;
        } else {
            c.lr = 1e-5;
            c.batch = 4;
            c.max_epochs = 100;
            c.patience = 100;
        }
        return c;
    }

    void validate() const {
        if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
        if (batch <= 0) throw ConfigError("batch size must be positive");
        if (max_epochs <= 0) throw ConfigError("max_epochs must be positive");
        if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
        if (patience < 0 || patience > max_epochs) throw ConfigError("patience must lie in [0, max_epochs]");
        if (val_fraction < 0 || val_fraction >= 1) throw ConfigError("val_fraction must lie in [0, 1)");
        loss.validate();
        model.validate();
        perturb.validate();
    }
};

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"phase", to_string(c.phase)},
            {"lr", c.lr},
            {"batch", c.batch},
            {"max_epochs", c.max_epochs},
            {"max_steps", c.max_steps},
            {"patience", c.patience},
            {"seed", c.seed},
            {"theta", c.loss.theta},
            {"lambda", c.loss.lambda},
            {"eps_clamp", c.loss.eps_clamp},
            {"eps_dice", c.loss.eps_dice},
            {"freeze_encoder", c.freeze_encoder},
            {"use_consistency", c.use_consistency},
            {"val_fraction", c.val_fraction},
            {"model", to_json(c.model)},
            {"perturb",
             {{"brightness", c.perturb.brightness},
              {"contrast", c.perturb.contrast},
              {"saturation", c.perturb.saturation},
              {"hue", c.perturb.hue},
              {"grayscale_prob", c.perturb.grayscale_prob},
              {"blur_sigma_min", c.perturb.blur_sigma_min},
              {"blur_sigma_max", c.perturb.blur_sigma_max}}},
            {"deterministic", c.deterministic}};
}

struct StepLog {
    long long step = 0;
    int epoch = 0;
    double loss = 0;
    double mask_loss = 0;  // clean-view mask loss (pretrain) or L_pred (finetune)
    double consistency = 0;
    double distill = 0;
};

struct EpochLog {
    int epoch = 0;
    double val_metric = 0;  // mask loss (pretrain) or Dice % (finetune)
    bool improved = false;
};

struct TrainResult {
    Checkpoint checkpoint;  // best epoch
    std::vector<StepLog> steps;
    std::vector<EpochLog> epochs;
    long long steps_run = 0;
    bool early_stopped = false;
};

inline void write_loss_curve(const TrainResult& r, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "step,epoch,loss,mask_loss,consistency,distill\n";
    out.precision(9);
    for (const auto& s : r.steps)
        out << s.step << ',' << s.epoch << ',' << s.loss << ',' << s.mask_loss << ',' << s.consistency << ','
            << s.distill << '\n';
}

struct Split {
    std::vector<std::size_t> train, val;
    bool val_is_train = false;
};

/// Hash-stable split by sample id. An empty validation side falls back to the training set.
inline Split split_dataset(const std::vector<Sample>& samples, double val_fraction) {
    Split s;
    const auto cut = static_cast<std::uint64_t>(val_fraction * 10000.0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const bool val = mix64(fnv1a(samples[i].record.id)) % 10000 < cut;
        (val ? s.val : s.train).push_back(i);
    }
    if (s.train.empty()) std::swap(s.train, s.val);
    if (s.val.empty()) {
        s.val = s.train;
        s.val_is_train = true;
    }
    return s;
}

namespace detail {

inline Tensor<float> batch_masks(const std::vector<Sample>& data, const std::vector<std::size_t>& idx) {
    std::vector<Tensor<float>> masks;
    masks.reserve(idx.size());
    for (auto i : idx) masks.push_back(data[i].mask.to_tensor<float>());
    return stack<float>(masks);
}

inline Tensor<float> batch_pixels(const std::vector<Sample>& data, const std::vector<std::size_t>& idx) {
    std::vector<const Image*> imgs;
    for (auto i : idx) imgs.push_back(&data[i].image);
    return batch_images<float>(imgs);
}

inline void check_finite(double v, long long step, const char* what) {
    if (!std::isfinite(v))
        throw TrainingError(std::string("non-finite ") + what + " (" + std::to_string(v) + ") at step " +
                            std::to_string(step));
}

/// Shared epoch/patience/best-snapshot loop.
struct LoopHooks {
    std::function<StepLog(const std::vector<std::size_t>& batch, long long step)> step;
    std::function<double()> validate;
    std::function<void(Checkpoint&)> snapshot;  // fill params + optimizer state
    bool higher_is_better = false;
};

inline TrainResult run_loop(const TrainConfig& cfg, const std::vector<std::size_t>& train, const LoopHooks& hooks) {
    TrainResult r;
    Rng order_rng(derive_seed(cfg.seed, fnv1a("shuffle")));
    std::vector<std::size_t> order = train;
    std::optional<double> best;
    int since_best = 0;
    long long step = 0;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(order_rng.uniform_int(0, static_cast<int>(i) - 1))]);
        bool out_of_steps = false;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
            if (cfg.max_steps > 0 && step >= cfg.max_steps) {
                out_of_steps = true;
                break;
            }
            const auto end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
            std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));
            auto log = hooks.step(batch, step);
            log.step = ++step;
            log.epoch = epoch;
            r.steps.push_back(log);
        }
        const double metric = hooks.validate();
        check_finite(metric, step, "validation metric");
        const bool improved =
            !best || (hooks.higher_is_better ? metric > *best : metric < *best);
        r.epochs.push_back({epoch, metric, improved});
        if (improved) {
            best = metric;
            since_best = 0;
            Checkpoint snap;
            snap.epoch = epoch;
            snap.best_metric = metric;
            snap.rng_state = order_rng.state();
            hooks.snapshot(snap);
            r.checkpoint = std::move(snap);
        } else {
            ++since_best;
        }
        if (cfg.max_steps > 0 && step >= cfg.max_steps) out_of_steps = true;
        if (out_of_steps) break;
        if (since_best >= cfg.patience) {
            r.early_stopped = epoch < cfg.max_epochs;
            break;
        }
    }
    r.steps_run = step;
    return r;
}

inline std::vector<std::pair<std::string, Var<float>>> trainable(const ParamStore<float>& store, bool freeze_encoder) {
    std::vector<std::pair<std::string, Var<float>>> out;
    for (const auto& [name, v] : store.items())
        if (!(freeze_encoder && name.rfind("encoder.", 0) == 0)) out.emplace_back(name, v);
    return out;
}

}  // namespace detail

/// Phase I: encoder + light head on clean and perturbed views.
inline TrainResult pretrain(const TrainConfig& cfg, const std::vector<Sample>& data) {
    cfg.validate();
    if (data.empty()) throw TrainingError("cannot pretrain on an empty dataset");
    PretrainModel<float> model(cfg.model, cfg.seed);
    Adam<float> opt(detail::trainable(model.params(), false), {cfg.lr});
    const auto split = split_dataset(data, cfg.val_fraction);
    const std::uint64_t perturb_base = derive_seed(cfg.seed, fnv1a("perturb"));

    detail::LoopHooks hooks;
    hooks.step = [&](const std::vector<std::size_t>& idx, long long step) {
        const auto images = detail::batch_pixels(data, idx);
        std::vector<Image> views;
        views.reserve(idx.size());
        for (auto i : idx)
            views.push_back(perturb(data[i].image, derive_seed(derive_seed(perturb_base, step), i), cfg.perturb));
        std::vector<const Image*> view_ptrs;
        for (const auto& v : views) view_ptrs.push_back(&v);
        const auto target = detail::batch_masks(data, idx);
        opt.zero_grad();
        const auto pa = model(images);
        const auto pb = model(batch_images<float>(view_ptrs));
        const auto terms = pretrain_loss(target, pa, pb, cfg.loss, cfg.use_consistency);
        StepLog log;
        log.loss = terms.total.item();
        log.mask_loss = terms.mask_a.item();
        log.consistency = terms.consistency.item();
        detail::check_finite(log.loss, step + 1, "pretrain loss");
        backward(terms.total);
        opt.step();
        return log;
    };
    hooks.validate = [&] {
        double total = 0;
        for (std::size_t s = 0; s < split.val.size(); s += static_cast<std::size_t>(cfg.batch)) {
            std::vector<std::size_t> idx(split.val.begin() + static_cast<std::ptrdiff_t>(s),
                                         split.val.begin() + static_cast<std::ptrdiff_t>(
                                                                 std::min(split.val.size(), s + cfg.batch)));
            const auto p = model(detail::batch_pixels(data, idx));
            total += mask_loss(detail::batch_masks(data, idx), p, cfg.loss).item() * static_cast<double>(idx.size());
        }
        return total / static_cast<double>(split.val.size());
    };
    hooks.snapshot = [&](Checkpoint& c) {
        capture_params(model.params(), c);
        capture_optimizer(opt, c);
    };
    hooks.higher_is_better = false;

    auto r = detail::run_loop(cfg, split.train, hooks);
    r.checkpoint.phase = to_string(Phase::Pretrain);
    r.checkpoint.model = cfg.model;
    r.checkpoint.train_config = to_json(cfg);
    return r;
}

/// Frozen stand-ins shared across a fine-tuning run, with per-sample caches.
struct FrozenInputs {
    std::unique_ptr<TeacherModel<float>> teacher;
    std::unique_ptr<TextModel<float>> text;
    std::vector<TeacherPyramid<float>> teacher_cache;
    std::vector<TextEmbedding<float>> text_cache;

    FrozenInputs(const ModelConfig& m, const std::vector<Sample>& data, bool with_teacher) {
        if (m.use_cma) {
            text = make_text_encoder<float>(m.text_encoder, m.text_dim);
            for (const auto& s : data) {
                if (tokenize(s.prompt.text).empty())
                    throw TrainingError("sample " + s.record.id + " has no prompt");
                text_cache.push_back(text->embed(s.prompt.text));
            }
        }
        if (m.use_sed && with_teacher) {
            teacher = make_teacher<float>(m.teacher, m.teacher_dim);
            for (const auto& s : data) {
                Tensor<float> px = s.image.pixels;
                teacher_cache.push_back(teacher->features(px));
            }
        }
    }

    std::vector<TextEmbedding<float>> texts(const std::vector<std::size_t>& idx) const {
        std::vector<TextEmbedding<float>> out;
        if (!text) return out;
        for (auto i : idx) out.push_back(text_cache[i]);
        return out;
    }

    std::vector<Tensor<float>> targets(const std::vector<std::size_t>& idx) const {
        std::vector<Tensor<float>> out;
        for (int l = 0; l < 4; ++l) {
            std::vector<Tensor<float>> parts;
            for (auto i : idx) parts.push_back(teacher_cache[i][l]);
            out.push_back(stack<float>(parts));
        }
        return out;
    }
};

/// Forward a fine-tuned model over the given samples, in batches. Returns (N,1,H,W).
inline Tensor<float> predict_probabilities(const SegModel<float>& model, const std::vector<Sample>& data,
                                           const std::vector<std::size_t>& idx, int batch = 8) {
    const auto& m = model.config();
    std::unique_ptr<TextModel<float>> text;
    if (m.use_cma) text = make_text_encoder<float>(m.text_encoder, m.text_dim);
    std::vector<Tensor<float>> parts;
    for (std::size_t s = 0; s < idx.size(); s += static_cast<std::size_t>(batch)) {
        std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(s),
                                       idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), s + batch)));
        std::vector<TextEmbedding<float>> texts;
        if (text)
            for (auto i : chunk) {
                if (tokenize(data[i].prompt.text).empty())
                    throw DatasetError("sample " + data[i].record.id + " has no prompt");
                texts.push_back(text->embed(data[i].prompt.text));
            }
        parts.push_back(model(detail::batch_pixels(data, chunk), texts).mask.value());
    }
    return stack<float>(parts);
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

/// Phase II: full network under L_pred + lambda L_distill, encoder initialised from `init`.
inline TrainResult finetune(const TrainConfig& cfg, const std::vector<Sample>& data, const Checkpoint& init) {
    cfg.validate();
    if (data.empty()) throw TrainingError("cannot fine-tune on an empty dataset");
    if (init.model.encoder != cfg.model.encoder)
        throw CheckpointError("initial checkpoint encoder architecture does not match the configuration");
    SegModel<float> model(cfg.model, cfg.seed);
    restore_params(model.params(), init, "encoder.");
    const FrozenInputs frozen(cfg.model, data, true);
    Adam<float> opt(detail::trainable(model.params(), cfg.freeze_encoder), {cfg.lr});
    const auto split = split_dataset(data, cfg.val_fraction);

    detail::LoopHooks hooks;
    hooks.step = [&](const std::vector<std::size_t>& idx, long long step) {
        const auto images = detail::batch_pixels(data, idx);
        const auto target = detail::batch_masks(data, idx);
        opt.zero_grad();
        const auto out = model(images, frozen.texts(idx));
        const auto pred = mask_loss(target, out.mask, cfg.loss);
        StepLog log;
        log.mask_loss = pred.item();
        Var<float> total = pred;
        if (cfg.model.use_sed) {
            const auto d = distill_loss(model.projections()(out.features), frozen.targets(idx));
            log.distill = d.item();
            total = total_loss(pred, d, cfg.loss.lambda);
        }
        log.loss = total.item();
        detail::check_finite(log.loss, step + 1, "finetune loss");
        backward(total);
        opt.step();
        return log;
    };
    hooks.validate = [&] {
        const auto probs = predict_probabilities(model, data, split.val, cfg.batch);
        double sum = 0;
        for (std::size_t k = 0; k < split.val.size(); ++k)
            sum += dice_metric(BinaryMask::from_prob(probs, cfg.loss.theta, static_cast<int>(k)),
                               data[split.val[k]].mask);
        return sum / static_cast<double>(split.val.size());
    };
    hooks.snapshot = [&](Checkpoint& c) {
        capture_params(model.params(), c);
        capture_optimizer(opt, c);
    };
    hooks.higher_is_better = true;

    auto r = detail::run_loop(cfg, split.train, hooks);
    r.checkpoint.phase = to_string(Phase::Finetune);
    r.checkpoint.model = cfg.model;
    r.checkpoint.teacher_identity = frozen.teacher ? frozen.teacher->identity() : "";
    r.checkpoint.text_identity = frozen.text ? frozen.text->identity() : "";
    r.checkpoint.train_config = to_json(cfg);
    return r;
}

}  // namespace tamiseg
