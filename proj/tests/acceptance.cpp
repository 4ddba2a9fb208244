// End-to-end checks, one PASS/FAIL line each. Exit status is non-zero if any check fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>

#include <tamiseg/config.hpp>
#include <tamiseg/eval.hpp>

#include "grad_check.hpp"
#include "oracles.hpp"

using namespace tamiseg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Var<double> weighted_sum(const Var<double>& x, std::uint64_t seed) {
    Rng rng(seed);
    const auto r = test::random_tensor(x.shape(), rng);
    double s = 0;
    for (std::size_t i = 0; i < r.size(); ++i) s += r[i] * x.value()[i];
    return make_result<double>(Tensor<double>(Shape{1, 1, 1, 1}, s), {x}, [x, r](Node<double>& self) {
        auto& g = x.node()->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * r[i];
    });
}

Tensor<double> binary_tensor(Shape s, Rng& rng) {
    Tensor<double> t(s);
    for (auto& v : t.values()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
    return t;
}

// ---------------------------------------------------------------------------------------------

Outcome gradient_suite() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(101);
    std::vector<std::pair<std::string, double>> errors;
    auto run = [&](const std::string& name, const std::function<Var<double>()>& f, const std::vector<Var<double>>& wrt) {
        errors.emplace_back(name, test::check_gradients(f, wrt).rel_error);
    };

    // Logits kept away from saturation so P stays off the clamp.
    auto logits = Var<double>::parameter(test::random_tensor({2, 1, 8, 8}, rng, -2, 2));
    auto logits_b = Var<double>::parameter(test::random_tensor({2, 1, 8, 8}, rng, -2, 2));
    const auto g = binary_tensor({2, 1, 8, 8}, rng);
    LossConfig lc;
    lc.eps_dice = 1.0;
    run("bce", [&] { return bce_loss(g, sigmoid(logits)); }, {logits});
    run("dice", [&] { return dice_loss(g, sigmoid(logits), 1.0); }, {logits});
    run("mask_loss", [&] { return mask_loss(g, sigmoid(logits), lc); }, {logits});
    run("consistency", [&] { return consistency_loss(sigmoid(logits), sigmoid(logits_b), lc); }, {logits, logits_b});
    run("pretrain_loss",
        [&] { return pretrain_loss(g, sigmoid(logits), sigmoid(logits_b), lc).total; }, {logits, logits_b});

    {
        ParamStore<double> store;
        CrossAttnParams<double> p(store, "cma", 4, 5, rng);
        for (auto& v : p.wv.mutable_value().values()) v *= 10;
        auto f = Var<double>::parameter(test::random_tensor({2, 4, 4, 4}, rng));
        std::vector<TextEmbedding<double>> texts;
        for (int n = 0; n < 2; ++n) texts.push_back({test::random_tensor({1, 1, 3, 5}, rng), {"a", "b", "c"}});
        run("cross_attention", [&] { return weighted_sum(cross_modal_align(f, texts, p), 5); }, {f, p.wq, p.wk, p.wv});
    }
    {
        ParamStore<double> store;
        ProjectionSet<double> phi(store, {3, 4, 5, 6}, 4, rng);
        FeaturePyramid<double> f;
        std::vector<Tensor<double>> teacher;
        for (int i = 0; i < 4; ++i) {
            const int s = 8 >> i;
            f[i] = Var<double>::parameter(test::random_tensor({1, 3 + i, s, s}, rng));
            teacher.push_back(test::random_tensor({1, 4, s, s}, rng));
        }
        // Zero-initialised biases let a token with all-dead hidden units project to exactly 0, where the
        // cosine has a kink far narrower than the finite-difference step.
        for (auto v : store.with_prefix("distill."))
            if (v.shape().n == 1) v.mutable_value() = test::random_tensor(v.shape(), rng, 0.1, 0.5);
        std::vector<Var<double>> wrt{f[0], f[3]};
        for (auto v : store.with_prefix("distill.")) wrt.push_back(v);
        run("projection+distill", [&] { return distill_loss(phi(f), teacher); }, wrt);
        auto pred = Var<double>::parameter(Tensor<double>(Shape{1, 1, 1, 1}, 0.7));
        auto dist = Var<double>::parameter(Tensor<double>(Shape{1, 1, 1, 1}, -0.4));
        run("total_loss", [&] { return total_loss(pred, dist, 0.3); }, {pred, dist});
    }
    {
        ParamStore<double> store;
        DecoderConfig dc;
        dc.branch_width = 4;
        dc.psa_width = 2;
        DecoderBranch<double> branch(store, "b", 3, 5, dc, rng);
        auto shallow = Var<double>::parameter(test::random_tensor({1, 3, 8, 8}, rng));
        auto deep = Var<double>::parameter(test::random_tensor({1, 5, 4, 4}, rng));
        auto fc = Var<double>::parameter(test::random_tensor({1, 8, 8, 8}, rng));
        auto x = Var<double>::parameter(test::random_tensor({1, 4, 8, 8}, rng));
        run("residual_chain", [&] { return weighted_sum(branch.residual(fc), 6); },
            {fc, *store.find("b.c1.weight"), *store.find("b.c2.weight"), *store.find("b.c3.weight"),
             *store.find("b.c4.weight")});
        run("eca", [&] { return weighted_sum(branch.eca()(x), 7); }, {x, branch.eca().kernel});
        run("psa", [&] { return weighted_sum(branch.psa()(x), 8); },
            {x, *store.find("b.psa.context1.weight"), *store.find("b.psa.context2.weight"),
             *store.find("b.psa.context3.weight"), *store.find("b.psa.gate.weight")});
        run("branch", [&] { return weighted_sum(branch(shallow, deep), 9); }, {shallow, deep});
        FusionHead<double> head(store, "h", 4, rng);
        auto s = Var<double>::parameter(test::random_tensor({1, 4, 8, 8}, rng));
        auto m = Var<double>::parameter(test::random_tensor({1, 4, 4, 4}, rng));
        auto l = Var<double>::parameter(test::random_tensor({1, 4, 2, 2}, rng));
        const auto target = binary_tensor({1, 1, 8, 8}, rng);
        run("fusion", [&] { return mask_loss(target, head(s, m, l, 8, 8), lc); },
            {s, m, l, *store.find("h.c5.weight"), *store.find("h.c6.weight"), *store.find("h.c6.bias")});
    }

    const double elapsed = seconds_since(t0);
    double worst = 0;
    std::string worst_name;
    for (const auto& [n, e] : errors)
        if (!(e <= worst)) worst = e, worst_name = n;
    return {worst < 1e-4 && elapsed < 120,
            fmt("%zu paths, worst rel. err %.2e (%s), %.1f s", errors.size(), worst, worst_name.c_str(), elapsed)};
}

Outcome loss_oracles() {
    const double eps = 1e-7;
    auto t = [](std::vector<double> v) {
        return Tensor<double>(Shape{1, 1, 1, static_cast<int>(v.size())}, std::move(v));
    };
    auto p = [&](std::vector<double> v) { return Var<double>::constant(t(std::move(v))); };
    const double ln2 = std::log(2.0), ln10 = std::log(10.0);
    // Two-component hand evaluation for G=[1,1,0,0], P=[1-e,0.5,e,e]:
    const double bce_hand = -(std::log(1 - eps) + std::log(0.5) + 2 * std::log(1 - eps)) / 4;
    const double inter = (1 - eps) + 0.5, psum = (1 - eps) + 0.5 + 2 * eps;
    const double dice_hand = 1 - (2 * inter + 1) / (psum + 2 + 1);
    LossConfig lc;
    lc.eps_dice = 1;
    struct Case {
        const char* name;
        double got, want;
    };
    const std::vector<Case> cases{
        {"bce perfect", bce_loss(t({1}), p({1 - eps})).item(), -std::log(1 - eps)},
        {"bce G=1 P=.5", bce_loss(t({1}), p({0.5})).item(), ln2},
        {"bce G=0 P=.5", bce_loss(t({0}), p({0.5})).item(), ln2},
        {"dice identity", dice_loss(t({1, 0, 1, 0}), p({1, 0, 1, 0}), 0).item(), 0},
        {"dice 1/3", dice_loss(t({1, 1, 0, 0}), p({1, 0, 0, 0}), 0).item(), 1.0 / 3.0},
        {"dice empty", dice_loss(t({0, 0, 0, 0}), p({0, 0, 0, 0}), 1).item(), 0},
        {"mask sum", mask_loss(t({1, 1, 0, 0}), p({1 - eps, 0.5, eps, eps}), lc).item(), bce_hand + dice_hand},
        {"consistency ln10", consistency_loss(p({0.9}), p({0.1})).item(), ln10},
        {"consistency agree", consistency_loss(p({eps, 1 - eps}), p({eps, 1 - eps})).item(), -std::log(1 - eps)},
        {"binarize inclusive", binarize(t({0.5}), 0.5)[0], 1},
        {"binarize below", binarize(t({0.49999}), 0.5)[0], 0},
        {"total lambda", total_loss(0.4, -0.6, 0.5), 0.1},
    };
    double worst = 0;
    std::string worst_name;
    for (const auto& c : cases) {
        const double e = std::abs(c.got - c.want);
        if (!(e <= worst)) worst = e, worst_name = c.name;
    }
    return {worst <= 1e-6, fmt("%zu cases, max abs err %.2e (%s)", cases.size(), worst, worst_name.c_str())};
}

Outcome shape_pipeline() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto cfg = ModelConfig::full();
    SegModel<float> model(cfg, 0);
    SynthConfig sc;
    sc.height = sc.width = 256;
    const auto s = generate_sample(3, sc);
    HashTextEncoder<float> text(0, cfg.text_dim);
    const auto out = model(s.image.pixels, {text.embed(s.prompt.text)});
    const auto teacher = make_teacher<float>(cfg.teacher, cfg.teacher_dim)->features(s.image.pixels);
    const auto projected = model.projections()(out.features);
    std::string problems;
    for (int i = 0; i < 4; ++i) {
        const Shape f = out.features[i].shape();
        const int stride = kLevelStrides[i];
        if (f.h != 256 / stride || f.w != 256 / stride || f.c != cfg.encoder.widths[i])
            problems += fmt(" f%d=%s", i + 1, f.str().c_str());
        if (!(projected[i].shape() == teacher[i].shape()))
            problems += fmt(" proj%d=%s teacher=%s", i + 1, projected[i].shape().str().c_str(),
                            teacher[i].shape().str().c_str());
    }
    const Shape m = out.mask.shape();
    if (!(m == Shape{1, 1, 256, 256})) problems += " mask=" + m.str();
    for (float v : out.mask.value().values())
        if (!(v > 0.f && v < 1.f)) {
            problems += " mask value outside (0,1)";
            break;
        }
    std::string dims;
    for (int i = 0; i < 4; ++i) dims += (i ? " " : "") + out.features[i].shape().str();
    return {problems.empty(), problems.empty() ? fmt("full config, %s, %.1f s", dims.c_str(), seconds_since(t0))
                                               : "mismatch:" + problems};
}

Outcome overfit() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto data = generate_dataset(16, 1000, SynthConfig{});
    auto c1 = TrainConfig::tiny(Phase::Pretrain);
    c1.val_fraction = 0;
    c1.max_steps = 300;
    c1.max_epochs = c1.patience = 1000;
    const auto r1 = pretrain(c1, data);
    auto c2 = TrainConfig::tiny(Phase::Finetune);
    c2.val_fraction = 0;
    c2.max_steps = 300;
    c2.max_epochs = c2.patience = 1000;
    const auto r2 = finetune(c2, data, r1.checkpoint);
    const auto model = load_seg_model<float>(r2.checkpoint);
    const double dice = evaluate(model, data, c2.loss.theta, "overfit", 0).mean_dice;
    const double elapsed = seconds_since(t0);
    return {dice >= 95.0 && elapsed < 600,
            fmt("train Dice %.2f%% after %lld+%lld steps, %.1f s", dice, r1.steps_run, r2.steps_run, elapsed)};
}

Outcome consistency() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto train = generate_dataset(200, 10000, SynthConfig{});
    const auto held = generate_dataset(50, 20000, SynthConfig{});
    int wins = 0;
    std::string detail;
    for (std::uint64_t seed : {0, 1, 2}) {
        double iou[2];
        for (int use = 0; use < 2; ++use) {
            auto c = TrainConfig::tiny(Phase::Pretrain);
            c.seed = seed;
            c.max_epochs = c.patience = 20;
            c.use_consistency = use == 1;
            const auto model = load_pretrain_model<float>(pretrain(c, train).checkpoint);
            iou[use] = consistency_iou(model, held, c.perturb, derive_seed(seed, 777), c.loss.theta);
        }
        wins += iou[1] > iou[0];
        detail += fmt("%sseed %llu: %.2f vs control %.2f", seed ? "; " : "", (unsigned long long)seed, iou[1], iou[0]);
    }
    return {wins >= 2, fmt("%d/3 seeds better (%s), %.0f s", wins, detail.c_str(), seconds_since(t0))};
}

Outcome distill_dynamics() {
    const auto cfg = ModelConfig::tiny();
    SegModel<float> model(cfg, 4);
    const auto s = generate_sample(42, SynthConfig{});
    HashTextEncoder<float> text(0, cfg.text_dim);
    const auto out = model(s.image.pixels, {text.embed(s.prompt.text)});
    FeaturePyramid<float> frozen;
    for (int i = 0; i < 4; ++i) frozen[i] = Var<float>::constant(out.features[i].value());
    const auto teacher = make_teacher<float>(cfg.teacher, cfg.teacher_dim)->features(s.image.pixels);
    std::vector<std::pair<std::string, Var<float>>> phi;
    for (const auto& [name, v] : model.params().items())
        if (name.rfind("distill.", 0) == 0) phi.emplace_back(name, v);
    Adam<float> opt(phi, {1e-2});
    std::vector<double> curve;
    bool bounded = true, monotone = true;
    for (int step = 0; step <= 50; ++step) {
        opt.zero_grad();
        const auto loss = distill_loss(model.projections()(frozen), teacher);
        const double l = loss.item();
        bounded &= l >= -1.0 && l <= 1.0;
        if (!curve.empty()) monotone &= l <= curve.back() + 1e-6;
        curve.push_back(l);
        if (step == 50) break;
        backward(loss);
        opt.step();
    }
    // Reduction measured against the attainable floor of -1.
    const double reduction = 1.0 - (curve.back() + 1.0) / (curve.front() + 1.0);
    return {bounded && monotone && reduction >= 0.5,
            fmt("loss %.4f -> %.4f over 50 steps, %.0f%% of the gap to -1 closed, monotone=%s, bounded=%s",
                curve.front(), curve.back(), 100 * reduction, monotone ? "yes" : "no", bounded ? "yes" : "no")};
}

Outcome ablation() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto train = generate_dataset(500, 100000, SynthConfig{});
    const auto test_set = generate_dataset(100, 200000, SynthConfig{});
    AblationConfig ac;
    ac.pretrain.max_epochs = ac.pretrain.patience = 20;
    ac.finetune.max_epochs = ac.finetune.patience = 15;
    const auto rows = run_ablation(ac, train, test_set);
    std::map<std::uint64_t, std::array<double, 4>> dice;
    for (const auto& r : rows) {
        if (!r.ok()) return {false, "variant " + std::string(r.variant.name) + " failed: " + r.error};
        for (std::size_t v = 0; v < kAblationVariants.size(); ++v)
            if (std::string(kAblationVariants[v].name) == r.variant.name) dice[r.seed][v] = r.report.mean_dice;
    }
    double cae = 0, full = 0;
    int ladders = 0;
    std::string detail;
    for (const auto& [seed, d] : dice) {
        cae += d[0] / dice.size();
        full += d[3] / dice.size();
        bool ok = true;
        for (int v = 1; v < 4; ++v) ok &= d[v] + 0.5 >= d[v - 1];
        ladders += ok;
        detail += fmt("seed %llu %.2f/%.2f/%.2f/%.2f%s; ", (unsigned long long)seed, d[0], d[1], d[2], d[3],
                      ok ? "" : " (ladder broken)");
    }
    const double elapsed = seconds_since(t0);
    return {full >= cae && ladders >= 2 && elapsed < 7200,
            detail + fmt("mean Full %.3f vs CAE %.3f, ladder holds in %d/3, %.0f s", full, cae, ladders, elapsed)};
}

Outcome metric_oracle() {
    Rng rng(808);
    int mismatches = 0;
    for (int i = 0; i < 100; ++i) {
        const auto p = test::random_mask(16, 16, rng), g = test::random_mask(16, 16, rng);
        mismatches += dice_metric(p, g) != test::brute_dice(p, g);
        mismatches += miou_metric(p, g) != test::brute_miou(p, g);
    }
    return {mismatches == 0, fmt("100 random 16x16 pairs, %d mismatches", mismatches)};
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism(const fs::path& work) {
    const auto data = generate_dataset(12, 3000, SynthConfig{});
    auto c = TrainConfig::tiny(Phase::Pretrain);
    c.max_steps = 6;
    c.batch = 4;
    c.val_fraction = 0;
    const auto a = pretrain(c, data), b = pretrain(c, data);
    auto f = TrainConfig::tiny(Phase::Finetune);
    f.max_steps = 6;
    f.val_fraction = 0;
    const auto fa = finetune(f, data, a.checkpoint), fb = finetune(f, data, b.checkpoint);
    bool curves = a.steps.size() == b.steps.size() && fa.steps.size() == fb.steps.size();
    for (std::size_t i = 0; curves && i < a.steps.size(); ++i)
        curves = a.steps[i].loss == b.steps[i].loss && a.steps[i].consistency == b.steps[i].consistency;
    for (std::size_t i = 0; curves && i < fa.steps.size(); ++i)
        curves = fa.steps[i].loss == fb.steps[i].loss && fa.steps[i].distill == fb.steps[i].distill;

    fs::create_directories(work);
    save_checkpoint(fa.checkpoint, work / "a.ckpt");
    save_checkpoint(load_checkpoint(work / "a.ckpt"), work / "b.ckpt");
    const bool bytes = file_bytes(work / "a.ckpt") == file_bytes(work / "b.ckpt");

    Rng rng(909);
    int bad_overlays = 0;
    for (int i = 0; i < 100; ++i) {
        const auto p = test::random_mask(16, 16, rng), g = test::random_mask(16, 16, rng);
        Image base(16, 16);
        for (auto& v : base.pixels.values()) v = static_cast<float>(rng.uniform());
        bad_overlays += !test::overlay_partition_error(p, g, base, render_overlay(p, g, base)).empty();
    }
    return {curves && bytes && bad_overlays == 0,
            fmt("loss curves identical=%s, save-load-save byte-identical=%s, overlay partition failures %d/100",
                curves ? "yes" : "no", bytes ? "yes" : "no", bad_overlays)};
}

Outcome cli_end_to_end(const fs::path& work) {
    const auto t0 = std::chrono::steady_clock::now();
    fs::remove_all(work);
    fs::create_directories(work);
    const std::string exe = TAMISEG_CLI_PATH;
    const std::string w = work.string();
    const std::vector<std::pair<std::string, std::string>> steps{
        {"synth-data", "synth-data --n 24 --seed 5 --out " + w + "/data"},
        {"synth-data (test)", "synth-data --n 8 --seed 900 --out " + w + "/test"},
        {"pretrain", "pretrain --data " + w + "/data --epochs 2 --out " + w + "/pre --deterministic"},
        {"finetune", "finetune --data " + w + "/data --init " + w + "/pre/checkpoint.ckpt --epochs 2 --out " + w + "/fine"},
        {"eval", "eval --checkpoint " + w + "/fine/checkpoint.ckpt --data " + w + "/test --out " + w + "/eval"},
        {"viz", "viz --checkpoint " + w + "/fine/checkpoint.ckpt --data " + w + "/test --out " + w + "/viz"},
        {"ablate", "ablate --data " + w + "/data --test " + w + "/test --seeds 1 --pretrain-epochs 1 "
                   "--finetune-epochs 1 --out " + w + "/ablate"},
    };
    for (const auto& [name, args] : steps) {
        const std::string cmd = "\"" + exe + "\" " + args + " > \"" + w + "/log.txt\" 2>&1";
        const int rc = std::system(cmd.c_str());
        if (rc != 0) return {false, name + " exited with status " + std::to_string(rc) + ": " + file_bytes(work / "log.txt")};
    }
    const std::vector<fs::path> expected{"data/manifest.csv", "pre/checkpoint.ckpt", "pre/loss_curve.csv",
                                         "fine/checkpoint.ckpt", "eval/metrics.csv", "eval/summary.csv",
                                         "viz/overlays", "ablate/ablation.csv", "ablate/summary.csv",
                                         "eval/run.json"};
    for (const auto& p : expected)
        if (!fs::exists(work / p)) return {false, "missing output " + p.string()};
    const auto overlays = std::distance(fs::directory_iterator(work / "viz/overlays"), fs::directory_iterator{});
    if (overlays != 8) return {false, fmt("expected 8 overlays, found %ld", static_cast<long>(overlays))};
    return {true, fmt("7 commands exit 0, manifest/checkpoints/metrics/overlays present, %.0f s", seconds_since(t0))};
}

}  // namespace

int main() {
    const fs::path work = fs::temp_directory_path() / "tamiseg_acceptance";
    fs::remove_all(work);
    const std::vector<std::pair<std::string, std::function<Outcome()>>> checks{
        {"gradient suite", gradient_suite},
        {"loss-value oracles", loss_oracles},
        {"256x256 shape pipeline", shape_pipeline},
        {"overfit 16 samples", overfit},
        {"consistency vs control", consistency},
        {"distillation dynamics", distill_dynamics},
        {"ablation ladder", ablation},
        {"metric oracle", metric_oracle},
        {"determinism and persistence", [&] { return determinism(work / "determinism"); }},
        {"CLI end to end", [&] { return cli_end_to_end(work / "cli"); }},
    };
    int failures = 0;
    for (std::size_t i = 0; i < checks.size(); ++i) {
        Outcome o;
        try {
            o = checks[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::printf("[%zu] %-28s %s  %s\n", i + 1, checks[i].first.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
    }
    fs::remove_all(work);
    std::printf("%d/%zu passed\n", static_cast<int>(checks.size()) - failures, checks.size());
    return failures == 0 ? 0 : 1;
}
