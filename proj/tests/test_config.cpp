#include <gtest/gtest.h>

#include <tamiseg/config.hpp>

using namespace tamiseg;

TEST(KeyValueParser, CommentsBlankLinesAndWhitespace) {
    const auto kv = parse_key_values("# header\n\n lr = 0.01  # trailing\nbatch=4\r\n  \n");
    ASSERT_EQ(kv.size(), 2u);
    EXPECT_EQ(kv[0], (std::pair<std::string, std::string>{"lr", "0.01"}));
    EXPECT_EQ(kv[1], (std::pair<std::string, std::string>{"batch", "4"}));
}

TEST(KeyValueParser, MalformedLines) {
    EXPECT_THROW(parse_key_values("lr 0.01\n"), ConfigError);
    EXPECT_THROW(parse_key_values(" = 3\n"), ConfigError);
    EXPECT_THROW(load_key_values("/nonexistent/tamiseg.cfg"), ConfigError);
}

TEST(TrainConfigKeys, AppliesValues) {
    TrainConfig c;
    apply_train_config(parse_key_values("phase = finetune\nlr = 3e-4\nbatch = 2\nmax_epochs = 7\npatience = 3\n"
                                        "lambda = 0.25\nuse_sed = false\nencoder_widths = 8, 16, 32, 64\n"
                                        "perturb.hue = 0.05\nfreeze_encoder = yes\nsynth.height = 128\n"),
                       c);
    EXPECT_EQ(c.phase, Phase::Finetune);
    EXPECT_DOUBLE_EQ(c.lr, 3e-4);
    EXPECT_EQ(c.batch, 2);
    EXPECT_EQ(c.max_epochs, 7);
    EXPECT_EQ(c.patience, 3);
    EXPECT_DOUBLE_EQ(c.loss.lambda, 0.25);
    EXPECT_FALSE(c.model.use_sed);
    EXPECT_EQ(c.model.encoder.widths, (std::array<int, 4>{8, 16, 32, 64}));
    EXPECT_DOUBLE_EQ(c.perturb.hue, 0.05);
    EXPECT_TRUE(c.freeze_encoder);
}

TEST(TrainConfigKeys, ArchResetsBeforeOtherModelKeys) {
    TrainConfig c;
    // Order in the file does not matter: arch applies first.
    apply_train_config(parse_key_values("head_width = 24\narch = full\n"), c);
    auto full = ModelConfig::full();
    full.encoder.head_width = 24;
    EXPECT_EQ(c.model, full);
}

TEST(TrainConfigKeys, Errors) {
    TrainConfig c;
    EXPECT_THROW(apply_train_config(parse_key_values("learning_rate = 1\n"), c), ConfigError);
    EXPECT_THROW(apply_train_config(parse_key_values("lr = fast\n"), c), ConfigError);
    EXPECT_THROW(apply_train_config(parse_key_values("batch = 2.5\n"), c), ConfigError);
    EXPECT_THROW(apply_train_config(parse_key_values("use_cma = maybe\n"), c), ConfigError);
    EXPECT_THROW(apply_train_config(parse_key_values("encoder_widths = 1,2,3\n"), c), ConfigError);
    EXPECT_THROW(apply_train_config(parse_key_values("arch = huge\n"), c), ConfigError);
    EXPECT_THROW(apply_train_config(parse_key_values("phase = warmup\n"), c), ConfigError);
}

TEST(SynthConfigKeys, AppliesOnlySynthKeys) {
    SynthConfig s;
    apply_synth_config(parse_key_values("synth.height = 128\nsynth.small = 0.1, 0.12\nlr = 1\n"), s);
    EXPECT_EQ(s.height, 128);
    EXPECT_DOUBLE_EQ(s.small.lo, 0.1);
    EXPECT_DOUBLE_EQ(s.small.hi, 0.12);
    EXPECT_THROW(apply_synth_config(parse_key_values("synth.colour = red\n"), s), ConfigError);
    EXPECT_THROW(apply_synth_config(parse_key_values("synth.large = 0.3\n"), s), ConfigError);
}

TEST(TrainConfigValidation, Defaults) {
    EXPECT_NO_THROW(TrainConfig::tiny(Phase::Pretrain).validate());
    EXPECT_NO_THROW(TrainConfig::full(Phase::Finetune).validate());
    auto c = TrainConfig::tiny(Phase::Pretrain);
    c.patience = c.max_epochs + 1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig::tiny(Phase::Pretrain);
    c.batch = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}
