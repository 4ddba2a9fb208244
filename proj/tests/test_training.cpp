#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <tamiseg/training.hpp>

using namespace tamiseg;

namespace {

const std::vector<Sample>& small_data() {
    static const auto data = generate_dataset(8, 500, SynthConfig{});
    return data;
}

TrainConfig quick(Phase p, int steps) {
    auto c = TrainConfig::tiny(p);
    c.batch = 4;
    c.max_epochs = 50;
    c.patience = 50;
    c.max_steps = steps;
    c.val_fraction = 0;
    return c;
}

std::vector<double> losses(const TrainResult& r) {
    std::vector<double> v;
    for (const auto& s : r.steps) v.push_back(s.loss);
    return v;
}

const Checkpoint& pretrained() {
    static const auto ckpt = pretrain(quick(Phase::Pretrain, 4), small_data()).checkpoint;
    return ckpt;
}

}  // namespace

TEST(Split, HashStableAndDisjoint) {
    const auto data = generate_dataset(200, 0, SynthConfig{.height = 32, .width = 32});
    const auto a = split_dataset(data, 0.2), b = split_dataset(data, 0.2);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.train.size() + a.val.size(), 200u);
    EXPECT_GT(a.val.size(), 20u);
    EXPECT_LT(a.val.size(), 60u);
    EXPECT_FALSE(a.val_is_train);
    const auto none = split_dataset(data, 0);
    EXPECT_TRUE(none.val_is_train);
    EXPECT_EQ(none.val, none.train);
}

TEST(Pretrain, PatienceZeroRunsOneEpoch) {
    auto c = quick(Phase::Pretrain, 0);
    c.max_epochs = 5;
    c.patience = 0;
    const auto r = pretrain(c, small_data());
    EXPECT_EQ(r.epochs.size(), 1u);
    EXPECT_EQ(r.steps_run, 2);
    EXPECT_TRUE(r.early_stopped);
    EXPECT_EQ(r.checkpoint.phase, "pretrain");
    EXPECT_EQ(r.checkpoint.epoch, 1);
}

TEST(Pretrain, MaxStepsHonoured) {
    const auto r = pretrain(quick(Phase::Pretrain, 3), small_data());
    EXPECT_EQ(r.steps_run, 3);
    EXPECT_EQ(r.steps.size(), 3u);
    EXPECT_EQ(r.steps.back().epoch, 2);
}

TEST(Pretrain, IdenticalSeedsGiveIdenticalCurves) {
    const auto a = pretrain(quick(Phase::Pretrain, 4), small_data());
    const auto b = pretrain(quick(Phase::Pretrain, 4), small_data());
    EXPECT_EQ(losses(a), losses(b));
    EXPECT_EQ(a.checkpoint.tensors, b.checkpoint.tensors);
    auto other = quick(Phase::Pretrain, 4);
    other.seed = 1;
    EXPECT_NE(losses(pretrain(other, small_data())), losses(a));
}

TEST(Pretrain, ControlDropsConsistencyTerm) {
    // Both runs share the first batch and initial weights, so step 1 differs by exactly the consistency term.
    auto c = quick(Phase::Pretrain, 1);
    const auto with = pretrain(c, small_data()).steps.at(0);
    c.use_consistency = false;
    const auto without = pretrain(c, small_data()).steps.at(0);
    EXPECT_EQ(with.mask_loss, without.mask_loss);
    EXPECT_GT(with.consistency, 0.0);
    EXPECT_NEAR(with.loss - without.loss, with.consistency, 1e-5);
}

TEST(Pretrain, LossDecreases) {
    auto c = quick(Phase::Pretrain, 40);
    const auto r = pretrain(c, small_data());
    double head = 0, tail = 0;
    for (int i = 0; i < 5; ++i) {
        head += r.steps[i].mask_loss;
        tail += r.steps[r.steps.size() - 1 - i].mask_loss;
    }
    EXPECT_LT(tail, 0.7 * head);
}

TEST(Pretrain, EmptyDataset) {
    EXPECT_THROW(pretrain(quick(Phase::Pretrain, 1), {}), TrainingError);
}

TEST(Finetune, LambdaZeroMatchesDistillationDisabled) {
    auto with = quick(Phase::Finetune, 4);
    with.loss.lambda = 0;
    auto without = quick(Phase::Finetune, 4);
    without.model.use_sed = false;
    const auto a = finetune(with, small_data(), pretrained());
    const auto b = finetune(without, small_data(), pretrained());
    EXPECT_EQ(losses(a), losses(b));
    for (const auto& s : a.steps) EXPECT_NE(s.distill, 0.0);
}

TEST(Finetune, FrozenEncoderStaysBitIdentical) {
    auto c = quick(Phase::Finetune, 4);
    c.freeze_encoder = true;
    const auto r = finetune(c, small_data(), pretrained());
    std::size_t compared = 0;
    for (const auto& [name, t] : r.checkpoint.tensors)
        if (name.rfind("encoder.", 0) == 0) {
            const auto* before = pretrained().find(name);
            ASSERT_NE(before, nullptr) << name;
            EXPECT_EQ(t, *before) << name;
            ++compared;
        }
    EXPECT_GT(compared, 10u);
}

TEST(Finetune, RecordsIdentitiesAndDeterminism) {
    const auto a = finetune(quick(Phase::Finetune, 3), small_data(), pretrained());
    const auto b = finetune(quick(Phase::Finetune, 3), small_data(), pretrained());
    EXPECT_EQ(losses(a), losses(b));
    EXPECT_EQ(a.checkpoint.phase, "finetune");
    EXPECT_EQ(a.checkpoint.teacher_identity, "hash:0");
    EXPECT_EQ(a.checkpoint.text_identity, "hash:0");
    for (const auto& e : a.epochs) {
        EXPECT_GE(e.val_metric, 0.0);
        EXPECT_LE(e.val_metric, 100.0);
    }
}

TEST(Finetune, Errors) {
    EXPECT_THROW(finetune(quick(Phase::Finetune, 1), {}, pretrained()), TrainingError);

    auto data = small_data();
    data[2].prompt.text = "";
    EXPECT_THROW(finetune(quick(Phase::Finetune, 1), data, pretrained()), TrainingError);
    auto no_cma = quick(Phase::Finetune, 1);
    no_cma.model.use_cma = false;
    EXPECT_NO_THROW(finetune(no_cma, data, pretrained()));

    auto mismatch = quick(Phase::Finetune, 1);
    mismatch.model.encoder.widths = {8, 16, 32, 64};
    EXPECT_THROW(finetune(mismatch, small_data(), pretrained()), CheckpointError);
}

TEST(LossCurve, CsvRows) {
    const auto r = pretrain(quick(Phase::Pretrain, 3), small_data());
    const auto path = std::filesystem::temp_directory_path() / "tamiseg_curve.csv";
    write_loss_curve(r, path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "step,epoch,loss,mask_loss,consistency,distill");
    int rows = 0;
    for (std::string line; std::getline(in, line);) ++rows;
    EXPECT_EQ(rows, 3);
    std::filesystem::remove(path);
}
