// tamiseg command-line driver.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <tamiseg/config.hpp>
#include <tamiseg/dataset.hpp>
#include <tamiseg/eval.hpp>
#include <tamiseg/png_io.hpp>
#include <tamiseg/training.hpp>

namespace fs = std::filesystem;
using namespace tamiseg;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Common {
    std::string out;
    std::string config;
    std::uint64_t seed = 0;
    bool deterministic = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_seed = true) {
    cmd->add_option("--out", c.out, "Output directory")->required();
    cmd->add_option("--config", c.config, "Flat key = value config file (flags win)")->check(CLI::ExistingFile);
    if (with_seed) cmd->add_option("--seed", c.seed, "Seed (falls back to $TAMISEG_SEED, then 0)");
    cmd->add_flag("--deterministic", c.deterministic, "Bit-reproducible mode (the only mode; recorded in run.json)");
}

/// False for options the subcommand does not register.
bool given(const CLI::App* cmd, const std::string& name) {
    const auto* opt = cmd->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
}

std::uint64_t resolve_seed(const CLI::App* cmd, const Common& c) {
    if (given(cmd, "--seed")) return c.seed;
    if (const char* env = std::getenv("TAMISEG_SEED")) {
        const std::string s(env);
        std::uint64_t v = 0;
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("TAMISEG_SEED is not an integer: " + s);
        return v;
    }
    return 0;
}

void write_run_json(const fs::path& dir, const std::string& command, const std::vector<std::string>& argv,
                    json resolved, json outputs) {
    fs::create_directories(dir);
    json j{{"tool", "tamiseg"},
           {"version", kVersion},
           {"command", command},
           {"argv", argv},
           {"deterministic", true},
           {"config", std::move(resolved)},
           {"outputs", std::move(outputs)}};
    std::ofstream out(dir / "run.json");
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write run.json");
}

void write_epoch_log(const TrainResult& r, const fs::path& path) {
    std::ofstream out(path);
    out << "epoch,val_metric,improved\n";
    out.precision(9);
    for (const auto& e : r.epochs) out << e.epoch << ',' << e.val_metric << ',' << e.improved << '\n';
}

/// Options shared by pretrain and finetune; unset flags leave config values alone.
struct TrainFlags {
    std::string data;
    std::string arch;
    double lr = 0, theta = 0, lambda = 0, eps_dice = 0, val_fraction = 0;
    int batch = 0, epochs = 0, patience = 0;
    long long steps = 0;
    bool no_consistency = false;
    // finetune
    std::string init, teacher, text_encoder;
    bool freeze_encoder = false, no_cma = false, no_sed = false, no_sad = false;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, Phase phase) {
    cmd->add_option("--data", f.data, "Dataset directory")->required();
    cmd->add_option("--arch", f.arch, "tiny or full")->check(CLI::IsMember({"tiny", "full"}));
    cmd->add_option("--lr", f.lr, "Learning rate");
    cmd->add_option("--batch", f.batch, "Batch size");
    cmd->add_option("--epochs", f.epochs, "Maximum epochs");
    cmd->add_option("--steps", f.steps, "Maximum optimizer steps (0 = unlimited)");
    cmd->add_option("--patience", f.patience, "Early-stopping patience in epochs");
    cmd->add_option("--val-fraction", f.val_fraction, "Validation fraction (0 validates on the training set)");
    cmd->add_option("--theta", f.theta, "Binarization threshold");
    cmd->add_option("--lambda", f.lambda, "Distillation weight");
    cmd->add_option("--eps-dice", f.eps_dice, "Dice loss smoothing");
    if (phase == Phase::Pretrain) {
        cmd->add_flag("--no-consistency", f.no_consistency, "Drop the consistency term (control run)");
    } else {
        cmd->add_option("--init", f.init, "Phase I checkpoint")->required()->check(CLI::ExistingFile);
        cmd->add_option("--teacher", f.teacher, "Frozen teacher, hash:<seed>");
        cmd->add_option("--text-encoder", f.text_encoder, "Frozen text encoder, hash:<seed>");
        cmd->add_flag("--freeze-encoder", f.freeze_encoder, "Keep encoder weights fixed");
        cmd->add_flag("--no-cma", f.no_cma, "Disable cross-modal alignment");
        cmd->add_flag("--no-sed", f.no_sed, "Disable encoder distillation");
        cmd->add_flag("--no-sad", f.no_sad, "Use the FPN-style head instead of the scale-adaptive decoder");
    }
}

TrainConfig resolve_train(const CLI::App* cmd, const Common& c, const TrainFlags& f, Phase phase) {
    auto cfg = TrainConfig::tiny(phase);
    if (given(cmd, "--arch") && f.arch == "full") cfg = TrainConfig::full(phase);
    if (!c.config.empty()) apply_train_config(load_key_values(c.config), cfg);
    cfg.phase = phase;
    if (given(cmd, "--arch")) cfg.model = f.arch == "full" ? ModelConfig::full() : ModelConfig::tiny();
    if (given(cmd, "--lr")) cfg.lr = f.lr;
    if (given(cmd, "--batch")) cfg.batch = f.batch;
    if (given(cmd, "--epochs")) {
        cfg.max_epochs = f.epochs;
        if (!given(cmd, "--patience")) cfg.patience = std::min(cfg.patience, f.epochs);
    }
    if (given(cmd, "--steps")) cfg.max_steps = f.steps;
    if (given(cmd, "--patience")) cfg.patience = f.patience;
    if (given(cmd, "--val-fraction")) cfg.val_fraction = f.val_fraction;
    if (given(cmd, "--theta")) cfg.loss.theta = f.theta;
    if (given(cmd, "--lambda")) cfg.loss.lambda = f.lambda;
    if (given(cmd, "--eps-dice")) cfg.loss.eps_dice = f.eps_dice;
    if (f.no_consistency) cfg.use_consistency = false;
    if (given(cmd, "--teacher")) cfg.model.teacher = f.teacher;
    if (given(cmd, "--text-encoder")) cfg.model.text_encoder = f.text_encoder;
    if (f.freeze_encoder) cfg.freeze_encoder = true;
    if (f.no_cma) cfg.model.use_cma = false;
    if (f.no_sed) cfg.model.use_sed = false;
    if (f.no_sad) cfg.model.use_sad = false;
    if (given(cmd, "--seed") || std::getenv("TAMISEG_SEED") || c.config.empty()) cfg.seed = resolve_seed(cmd, c);
    cfg.deterministic = true;
    cfg.validate();
    return cfg;
}

std::vector<Sample> load_existing(const std::string& dir) {
    if (!fs::is_directory(dir)) throw DatasetError("dataset directory not found: " + dir);
    return load_dataset(dir);
}

int run_train(const CLI::App* cmd, const Common& c, const TrainFlags& f, Phase phase,
              const std::vector<std::string>& argv) {
    const auto cfg = resolve_train(cmd, c, f, phase);
    const auto data = load_existing(f.data);
    const fs::path out = c.out;
    fs::create_directories(out);
    TrainResult r;
    if (phase == Phase::Pretrain) {
        r = pretrain(cfg, data);
    } else {
        r = finetune(cfg, data, load_checkpoint(f.init));
    }
    const auto ckpt = out / "checkpoint.ckpt";
    save_checkpoint(r.checkpoint, ckpt);
    write_loss_curve(r, out / "loss_curve.csv");
    write_epoch_log(r, out / "epochs.csv");
    std::cout << to_string(phase) << ": " << r.steps_run << " steps, " << r.epochs.size() << " epochs, best epoch "
              << r.checkpoint.epoch << " (" << (phase == Phase::Pretrain ? "val mask loss " : "val Dice ")
              << r.checkpoint.best_metric << ")\n";
    auto resolved = to_json(cfg);
    resolved["data"] = f.data;
    if (phase == Phase::Finetune) resolved["init"] = f.init;
    write_run_json(out, to_string(phase), argv, resolved,
                   {ckpt.string(), (out / "loss_curve.csv").string(), (out / "epochs.csv").string()});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::string> args(argv, argv + argc);
    CLI::App app{"Text-guided lesion segmentation: synthetic data, two-phase training, evaluation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    // synth-data
    Common synth_c;
    int synth_n = 16, synth_size = 64;
    auto* synth = app.add_subcommand("synth-data", "Generate a synthetic image/mask/prompt dataset");
    add_common(synth, synth_c);
    synth->add_option("--n", synth_n, "Number of samples")->check(CLI::NonNegativeNumber);
    synth->add_option("--size", synth_size, "Square image size (multiple of 32)");

    // pretrain / finetune
    Common pre_c, fine_c;
    TrainFlags pre_f, fine_f;
    auto* pre = app.add_subcommand("pretrain", "Phase I: consistency-aware encoder pretraining");
    add_common(pre, pre_c);
    add_train_flags(pre, pre_f, Phase::Pretrain);
    auto* fine = app.add_subcommand("finetune", "Phase II: end-to-end fine-tuning with distillation and text");
    add_common(fine, fine_c);
    add_train_flags(fine, fine_f, Phase::Finetune);

    // eval / predict / viz
    Common ev_c, pr_c, viz_c;
    std::string ev_ckpt, ev_data, pr_ckpt, pr_data, viz_ckpt, viz_data;
    double ev_theta = -1, pr_theta = -1, viz_theta = -1;
    auto* ev = app.add_subcommand("eval", "Dice/mIoU of a fine-tuned checkpoint on a dataset");
    add_common(ev, ev_c, false);
    ev->add_option("--checkpoint", ev_ckpt)->required()->check(CLI::ExistingFile);
    ev->add_option("--data", ev_data)->required();
    ev->add_option("--theta", ev_theta, "Threshold (default: the checkpoint's)");
    auto* pr = app.add_subcommand("predict", "Write predicted masks as PNG");
    add_common(pr, pr_c, false);
    pr->add_option("--checkpoint", pr_ckpt)->required()->check(CLI::ExistingFile);
    pr->add_option("--data", pr_data)->required();
    pr->add_option("--theta", pr_theta, "Threshold (default: the checkpoint's)");
    auto* viz = app.add_subcommand("viz", "Write overlap/over/under-segmentation overlays");
    add_common(viz, viz_c, false);
    viz->add_option("--checkpoint", viz_ckpt)->required()->check(CLI::ExistingFile);
    viz->add_option("--data", viz_data)->required();
    viz->add_option("--theta", viz_theta, "Threshold (default: the checkpoint's)");

    // ablate
    Common ab_c;
    std::string ab_train, ab_test;
    int ab_seeds = 3, ab_e1 = 20, ab_e2 = 15;
    auto* ab = app.add_subcommand("ablate", "Variant ladder CAE, +CMA, +CMA+SED, Full over several seeds");
    add_common(ab, ab_c);
    ab->add_option("--data", ab_train, "Training dataset directory")->required();
    ab->add_option("--test", ab_test, "Test dataset directory")->required();
    ab->add_option("--seeds", ab_seeds, "Number of seeds (seed, seed+1, ...)")->check(CLI::PositiveNumber);
    ab->add_option("--pretrain-epochs", ab_e1, "Phase I epochs per seed")->check(CLI::PositiveNumber);
    ab->add_option("--finetune-epochs", ab_e2, "Phase II epochs per variant")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    auto threshold = [](double flag, const Checkpoint& c) {
        return flag >= 0 ? flag : c.train_config.value("theta", LossConfig{}.theta);
    };

    try {
        if (*synth) {
            SynthConfig sc;
            if (!synth_c.config.empty()) apply_synth_config(load_key_values(synth_c.config), sc);
            if (synth->count("--size")) sc.height = sc.width = synth_size;
            sc.validate();
            const auto seed = resolve_seed(synth, synth_c);
            auto samples = generate_dataset(static_cast<std::size_t>(synth_n), seed, sc);
            const auto manifest = write_dataset(samples, synth_c.out);
            std::cout << "wrote " << samples.size() << " samples to " << synth_c.out << "\n";
            write_run_json(synth_c.out, "synth-data", args,
                           {{"n", synth_n}, {"seed", seed}, {"synth", to_json(sc)}}, {manifest.string()});
        } else if (*pre) {
            return run_train(pre, pre_c, pre_f, Phase::Pretrain, args);
        } else if (*fine) {
            return run_train(fine, fine_c, fine_f, Phase::Finetune, args);
        } else if (*ev) {
            const auto ckpt = load_checkpoint(ev_ckpt);
            const auto model = load_seg_model<float>(ckpt);
            const auto data = load_existing(ev_data);
            const double theta = threshold(ev_theta, ckpt);
            const auto report = evaluate(model, data, theta, "model", ckpt.train_config.value("seed", 0ull));
            fs::create_directories(ev_c.out);
            write_metrics_csv({report}, fs::path(ev_c.out) / "metrics.csv");
            write_summary_csv({report}, fs::path(ev_c.out) / "summary.csv");
            std::cout << "samples " << report.count() << "  Dice " << report.mean_dice << "  mIoU " << report.mean_miou
                      << "\n";
            write_run_json(ev_c.out, "eval", args, {{"checkpoint", ev_ckpt}, {"data", ev_data}, {"theta", theta}},
                           {(fs::path(ev_c.out) / "metrics.csv").string(), (fs::path(ev_c.out) / "summary.csv").string()});
        } else if (*pr) {
            const auto ckpt = load_checkpoint(pr_ckpt);
            const auto model = load_seg_model<float>(ckpt);
            const auto data = load_existing(pr_data);
            const double theta = threshold(pr_theta, ckpt);
            const auto masks = predict_masks(model, data, theta);
            const fs::path dir = fs::path(pr_c.out) / "masks";
            fs::create_directories(dir);
            json outs = json::array();
            for (std::size_t i = 0; i < data.size(); ++i) {
                const auto p = dir / (data[i].record.id + ".png");
                png::write_mask(p, masks[i]);
                outs.push_back(p.string());
            }
            std::cout << "wrote " << masks.size() << " masks to " << dir.string() << "\n";
            write_run_json(pr_c.out, "predict", args, {{"checkpoint", pr_ckpt}, {"data", pr_data}, {"theta", theta}},
                           outs);
        } else if (*viz) {
            const auto ckpt = load_checkpoint(viz_ckpt);
            const auto model = load_seg_model<float>(ckpt);
            const auto data = load_existing(viz_data);
            const double theta = threshold(viz_theta, ckpt);
            const auto paths = write_overlays(data, predict_masks(model, data, theta), fs::path(viz_c.out) / "overlays");
            json outs = json::array();
            for (const auto& p : paths) outs.push_back(p.string());
            std::cout << "wrote " << paths.size() << " overlays\n";
            write_run_json(viz_c.out, "viz", args, {{"checkpoint", viz_ckpt}, {"data", viz_data}, {"theta", theta}},
                           outs);
        } else if (*ab) {
            AblationConfig cfg;
            if (!ab_c.config.empty()) {
                const auto kv = load_key_values(ab_c.config);
                apply_train_config(kv, cfg.pretrain);
                apply_train_config(kv, cfg.finetune);
                cfg.pretrain.phase = Phase::Pretrain;
                cfg.finetune.phase = Phase::Finetune;
            }
            cfg.pretrain.max_epochs = ab_e1;
            cfg.pretrain.patience = std::min(cfg.pretrain.patience, ab_e1);
            cfg.finetune.max_epochs = ab_e2;
            cfg.finetune.patience = std::min(cfg.finetune.patience, ab_e2);
            const auto base = resolve_seed(ab, ab_c);
            cfg.seeds.clear();
            for (int s = 0; s < ab_seeds; ++s) cfg.seeds.push_back(base + static_cast<std::uint64_t>(s));
            const auto train = load_existing(ab_train);
            const auto test = load_existing(ab_test);
            const auto rows = run_ablation(cfg, train, test, [](const AblationRow& r) {
                std::cout << "seed " << r.seed << "  " << r.variant.name << "  Dice " << r.report.mean_dice << "  mIoU "
                          << r.report.mean_miou << (r.ok() ? "" : "  error: " + r.error) << std::endl;
            });
            const fs::path out = ab_c.out;
            fs::create_directories(out);
            std::vector<MetricsReport> reports;
            for (const auto& r : rows)
                if (r.ok()) reports.push_back(r.report);
            write_ablation_csv(rows, out / "ablation.csv");
            write_metrics_csv(reports, out / "metrics.csv");
            write_summary_csv(reports, out / "summary.csv");
            write_run_json(out, "ablate", args,
                           {{"pretrain", to_json(cfg.pretrain)},
                            {"finetune", to_json(cfg.finetune)},
                            {"seeds", cfg.seeds},
                            {"data", ab_train},
                            {"test", ab_test}},
                           {(out / "ablation.csv").string(), (out / "metrics.csv").string(),
                            (out / "summary.csv").string()});
            for (const auto& r : rows)
                if (!r.ok()) return 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
