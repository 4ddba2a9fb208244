#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "decoder.hpp"
#include "distill.hpp"
#include "encoder.hpp"
#include "text_align.hpp"

namespace tamiseg {

/// Architecture and frozen-component identities. Everything a checkpoint must agree on.
struct ModelConfig {
    EncoderConfig encoder;
    DecoderConfig decoder;
    int text_dim = 32;
    int teacher_dim = 32;
    bool use_cma = true;  // cross-modal alignment
    bool use_sed = true;  // semantic encoder distillation
    bool use_sad = true;  // scale-adaptive decoder (otherwise the FPN-style head)
    std::string teacher = "hash:0";
    std::string text_encoder = "hash:0";

    static ModelConfig tiny() { return {}; }
    static ModelConfig full() {
        ModelConfig m;
        m.encoder = EncoderConfig::full();
        m.decoder.branch_width = 128;
        m.decoder.psa_width = 16;
        m.text_dim = 768;
        m.teacher_dim = 768;
        return m;
    }

    void validate() const {
        encoder.validate();
        decoder.validate();
        if (text_dim <= 0 || teacher_dim <= 0) throw ConfigError("embedding widths must be positive");
    }

    bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::json to_json(const ModelConfig& m) {
    return {{"encoder_widths", m.encoder.widths},
            {"encoder_blocks", m.encoder.blocks},
            {"head_width", m.encoder.head_width},
            {"branch_width", m.decoder.branch_width},
            {"eca_kernel", m.decoder.eca_kernel},
            {"psa_width", m.decoder.psa_width},
            {"text_dim", m.text_dim},
            {"teacher_dim", m.teacher_dim},
            {"use_cma", m.use_cma},
            {"use_sed", m.use_sed},
            {"use_sad", m.use_sad},
            {"teacher", m.teacher},
            {"text_encoder", m.text_encoder}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig m;
    m.encoder.widths = j.at("encoder_widths").get<std::array<int, 4>>();
    m.encoder.blocks = j.at("encoder_blocks").get<std::array<int, 4>>();
    m.encoder.head_width = j.at("head_width");
    m.decoder.branch_width = j.at("branch_width");
    m.decoder.eca_kernel = j.at("eca_kernel");
    m.decoder.psa_width = j.at("psa_width");
    m.text_dim = j.at("text_dim");
    m.teacher_dim = j.at("teacher_dim");
    m.use_cma = j.at("use_cma");
    m.use_sed = j.at("use_sed");
    m.use_sad = j.at("use_sad");
    m.teacher = j.at("teacher");
    m.text_encoder = j.at("text_encoder");
    return m;
}

/// Encoder plus the lightweight head used for consistency pretraining.
template <typename T>
class PretrainModel {
public:
    PretrainModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg.validate();
        Rng enc_rng(derive_seed(seed, fnv1a("encoder")));
        Rng head_rng(derive_seed(seed, fnv1a("head")));
        encoder_ = std::make_unique<Encoder<T>>(store_, cfg.encoder, enc_rng);
        head_ = std::make_unique<PredictionHead<T>>(store_, cfg.encoder.widths, cfg.encoder.head_width, head_rng);
    }

    /// (N,3,H,W) images -> (N,1,H,W) probabilities.
    Var<T> operator()(const Tensor<T>& images) const {
        return (*head_)((*encoder_)(images), images.shape().h, images.shape().w);
    }

    ParamStore<T>& params() { return store_; }
    const ParamStore<T>& params() const { return store_; }
    const Encoder<T>& encoder() const { return *encoder_; }
    const PredictionHead<T>& head() const { return *head_; }
    const ModelConfig& config() const { return cfg_; }

private:
    ModelConfig cfg_;
    ParamStore<T> store_;
    std::unique_ptr<Encoder<T>> encoder_;
    std::unique_ptr<PredictionHead<T>> head_;
};

template <typename T>
struct SegOutput {
    FeaturePyramid<T> features;  // encoder maps (the distilled features once trained)
    FeaturePyramid<T> aligned;   // after cross-modal alignment (== features when disabled)
    Var<T> mask;                 // (N,1,H,W) probabilities
};

/// Full segmentation network: encoder, optional cross-modal alignment, and either the
/// scale-adaptive decoder or the FPN-style head. Distillation projections are built
/// when `use_sed` is set; they only feed the training loss.
template <typename T>
class SegModel {
public:
    SegModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg.validate();
        const auto& w = cfg.encoder.widths;
        Rng enc_rng(derive_seed(seed, fnv1a("encoder")));
        encoder_ = std::make_unique<Encoder<T>>(store_, cfg.encoder, enc_rng);
        if (cfg.use_cma) {
            Rng rng(derive_seed(seed, fnv1a("cma")));
            for (int i = 0; i < 4; ++i)
                cma_[i] = CrossAttnParams<T>(store_, "cma.level" + std::to_string(i + 1), w[i], cfg.text_dim, rng);
        }
        if (cfg.use_sad) {
            Rng rng(derive_seed(seed, fnv1a("sad")));
            sad_ = std::make_unique<ScaleAdaptiveDecoder<T>>(store_, w, cfg.decoder, rng);
        } else {
            Rng rng(derive_seed(seed, fnv1a("fpn")));
            fpn_ = std::make_unique<PredictionHead<T>>(store_, w, cfg.decoder.branch_width, rng, "fpn");
        }
        if (cfg.use_sed) {
            Rng rng(derive_seed(seed, fnv1a("distill")));
            projections_ = std::make_unique<ProjectionSet<T>>(store_, w, cfg.teacher_dim, rng);
        }
    }

    SegOutput<T> operator()(const Tensor<T>& images, const std::vector<TextEmbedding<T>>& texts) const {
        SegOutput<T> out;
        out.features = (*encoder_)(images);
        out.aligned = out.features;
        if (cfg_.use_cma)
            for (int i = 0; i < 4; ++i) out.aligned[i] = cross_modal_align(out.features[i], texts, cma_[i]);
        const int H = images.shape().h, W = images.shape().w;
        out.mask = sad_ ? (*sad_)(out.aligned, H, W) : (*fpn_)(out.aligned, H, W);
        return out;
    }

    bool has_projections() const { return static_cast<bool>(projections_); }
    const ProjectionSet<T>& projections() const { return *projections_; }
    const Encoder<T>& encoder() const { return *encoder_; }
    const CrossAttnParams<T>& cma(int level) const { return cma_[level]; }
    const ScaleAdaptiveDecoder<T>* sad() const { return sad_.get(); }
    ParamStore<T>& params() { return store_; }
    const ParamStore<T>& params() const { return store_; }
    const ModelConfig& config() const { return cfg_; }

private:
    ModelConfig cfg_;
    ParamStore<T> store_;
    std::unique_ptr<Encoder<T>> encoder_;
    std::array<CrossAttnParams<T>, 4> cma_;
    std::unique_ptr<ScaleAdaptiveDecoder<T>> sad_;
    std::unique_ptr<PredictionHead<T>> fpn_;
    std::unique_ptr<ProjectionSet<T>> projections_;
};

}  // namespace tamiseg
