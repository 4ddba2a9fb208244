#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "model.hpp"
#include "optim.hpp"

namespace tamiseg {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'T', 'A', 'M', 'I', 'C', 'K', 'P', 'T'};
inline constexpr int kCheckpointVersion = 1;

/// Everything needed to resume or evaluate a run.
///
/// On disk: 8-byte magic, uint64 LE header length, JSON header, then float32 LE
/// tensor blocks at the offsets listed in the header (relative to the data start).
struct Checkpoint {
    int version = kCheckpointVersion;
    std::string phase;  // "pretrain" or "finetune"
    ModelConfig model;
    std::string teacher_identity;
    std::string text_identity;
    int epoch = 0;
    double best_metric = 0;
    std::string rng_state;
    long long optimizer_step = 0;
    nlohmann::json train_config = nlohmann::json::object();
    std::vector<std::pair<std::string, Tensor<float>>> tensors;

    const Tensor<float>* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
};

namespace detail {

inline nlohmann::json checkpoint_header(const Checkpoint& c) {
    nlohmann::json tensors = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : c.tensors) {
        const std::uint64_t bytes = t.size() * sizeof(float);
        const Shape s = t.shape();
        tensors.push_back({{"name", name}, {"shape", {s.n, s.c, s.h, s.w}}, {"offset", offset}, {"bytes", bytes}});
        offset += bytes;
    }
    return {{"version", c.version},
            {"phase", c.phase},
            {"model", to_json(c.model)},
            {"teacher", c.teacher_identity},
            {"text_encoder", c.text_identity},
            {"epoch", c.epoch},
            {"best_metric", c.best_metric},
            {"rng_state", c.rng_state},
            {"optimizer_step", c.optimizer_step},
            {"train_config", c.train_config},
            {"tensors", tensors}};
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::string header = detail::checkpoint_header(c).dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    const std::uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [_, t] : c.tensors)
        out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!out) throw CheckpointError("short write to " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    char magic[sizeof kCheckpointMagic];
    std::uint64_t len = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
        throw CheckpointError(path.string() + " is not a checkpoint file");
    if (len > (1ull << 30)) throw CheckpointError("implausible header length in " + path.string());
    std::string header(len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(len));
    if (!in) throw CheckpointError("truncated header in " + path.string());

    Checkpoint c;
    try {
        const auto j = nlohmann::json::parse(header);
        c.version = j.at("version");
        if (c.version != kCheckpointVersion)
            throw CheckpointError("unsupported checkpoint version " + std::to_string(c.version));
        c.phase = j.at("phase");
        c.model = model_config_from_json(j.at("model"));
        c.teacher_identity = j.at("teacher");
        c.text_identity = j.at("text_encoder");
        c.epoch = j.at("epoch");
        c.best_metric = j.at("best_metric");
        c.rng_state = j.at("rng_state");
        c.optimizer_step = j.at("optimizer_step");
        c.train_config = j.at("train_config");
        const auto data_start = in.tellg();
        for (const auto& e : j.at("tensors")) {
            const auto dims = e.at("shape").get<std::array<int, 4>>();
            Tensor<float> t(Shape{dims[0], dims[1], dims[2], dims[3]});
            const std::uint64_t bytes = e.at("bytes"), offset = e.at("offset");
            if (bytes != t.size() * sizeof(float))
                throw CheckpointError("tensor " + e.at("name").get<std::string>() + " has inconsistent size");
            in.seekg(data_start + static_cast<std::streamoff>(offset));
            in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(bytes));
            if (!in) throw CheckpointError("truncated tensor data in " + path.string());
            c.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("malformed checkpoint header in " + path.string() + ": " + e.what());
    }
    return c;
}

/// Copy every parameter of `store` into `c.tensors` under its own name.
template <typename T>
void capture_params(const ParamStore<T>& store, Checkpoint& c) {
    for (const auto& [name, v] : store.items()) c.tensors.emplace_back(name, v.value().template cast<float>());
}

template <typename T>
void capture_optimizer(Adam<T>& opt, Checkpoint& c) {
    c.optimizer_step = opt.steps();
    const auto& params = opt.params();
    for (std::size_t k = 0; k < params.size(); ++k) {
        c.tensors.emplace_back("adam.m." + params[k].first, opt.first_moments()[k].template cast<float>());
        c.tensors.emplace_back("adam.v." + params[k].first, opt.second_moments()[k].template cast<float>());
    }
}

template <typename T>
void restore_optimizer(Adam<T>& opt, const Checkpoint& c) {
    const auto& params = opt.params();
    for (std::size_t k = 0; k < params.size(); ++k) {
        const auto* m = c.find("adam.m." + params[k].first);
        const auto* v = c.find("adam.v." + params[k].first);
        if (!m || !v) throw CheckpointError("optimizer state missing for " + params[k].first);
        if (m->shape() != params[k].second.shape() || v->shape() != params[k].second.shape())
            throw CheckpointError("optimizer state shape mismatch for " + params[k].first);
        opt.first_moments()[k] = m->template cast<T>();
        opt.second_moments()[k] = v->template cast<T>();
    }
    opt.set_steps(c.optimizer_step);
}

/// Load parameters whose names start with `prefix` (all when empty). Every such
/// parameter must be present with the same shape.
template <typename T>
void restore_params(ParamStore<T>& store, const Checkpoint& c, const std::string& prefix = "") {
    for (const auto& [name, v] : store.items()) {
        if (name.rfind(prefix, 0) != 0) continue;
        const auto* t = c.find(name);
        if (!t) throw CheckpointError("checkpoint has no tensor '" + name + "'");
        if (t->shape() != v.shape())
            throw CheckpointError("shape mismatch for '" + name + "': checkpoint " + t->shape().str() +
                                  ", model " + v.shape().str());
        auto var = v;
        var.mutable_value() = t->template cast<T>();
    }
}

/// Rebuild the full segmentation network stored in a fine-tuning checkpoint.
template <typename T>
SegModel<T> load_seg_model(const Checkpoint& c) {
    if (c.phase != "finetune")
        throw CheckpointError("expected a finetune checkpoint, got phase '" + c.phase + "'");
    SegModel<T> model(c.model, 0);
    restore_params(model.params(), c);
    return model;
}

template <typename T>
PretrainModel<T> load_pretrain_model(const Checkpoint& c) {
    if (c.phase != "pretrain")
        throw CheckpointError("expected a pretrain checkpoint, got phase '" + c.phase + "'");
    PretrainModel<T> model(c.model, 0);
    restore_params(model.params(), c);
    return model;
}

}  // namespace tamiseg
