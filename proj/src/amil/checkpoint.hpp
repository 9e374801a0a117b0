#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "amil/model.hpp"
#include "amil/tensor.hpp"

namespace amil {

// Checkpoints are a plain-text manifest plus a binary sidecar of little-endian
// 32-bit floats laid out in manifest order:
//
//   amil-checkpoint 1
//   binary model.ckpt.bin
//   meta pooling attention
//   meta patch_size 28
//   ...
//   tensor extractor.conv1.weight 20x3x5x5 0
//   tensor extractor.conv1.bias 20 1500
//
// Tensor offsets count floats from the start of the sidecar. Save followed by
// load reproduces every stored value bit for bit.

struct CheckpointTensor {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

struct Checkpoint {
    std::vector<std::pair<std::string, std::string>> meta;
    std::vector<CheckpointTensor> tensors;

    const CheckpointTensor* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }

    std::optional<std::string> meta_value(const std::string& key) const {
        for (const auto& [k, v] : meta)
            if (k == key) return v;
        return std::nullopt;
    }

    void set_meta(const std::string& key, const std::string& value) {
        for (auto& [k, v] : meta)
            if (k == key) {
                v = value;
                return;
            }
        meta.emplace_back(key, value);
    }
};

// path names the manifest; the sidecar sits next to it as `<path>.bin`.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

std::string format_double(double v);  // round-trip-exact decimal form

// ---------------------------------------------------------------------------
// model <-> checkpoint
// ---------------------------------------------------------------------------

template <std::floating_point S>
Checkpoint checkpoint_from_model(const Model<S>& model) {
    Checkpoint ckpt;
    ckpt.set_meta("pooling", pooling_name(model.config.pooling));
    ckpt.set_meta("patch_size", std::to_string(model.config.tiling.patch_size));
    ckpt.set_meta("stride", std::to_string(model.config.tiling.stride));
    ckpt.set_meta("attention_dim", std::to_string(model.config.attention_dim));
    for (const auto& p : model.parameters()) {
        CheckpointTensor t;
        t.name = p.name;
        t.shape = p.tensor.shape();
        t.values.resize(static_cast<std::size_t>(p.tensor.size()));
        for (std::int64_t i = 0; i < p.tensor.size(); ++i)
            t.values[static_cast<std::size_t>(i)] = static_cast<float>(p.tensor[i]);
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

template <std::floating_point S>
Model<S> model_from_checkpoint(const Checkpoint& ckpt) {
    auto need_meta = [&](const std::string& key) {
        auto v = ckpt.meta_value(key);
        if (!v) throw IoError("checkpoint is missing meta key `" + key + "`");
        return *v;
    };
    ModelConfig config;
    config.pooling = pooling_from_name(need_meta("pooling"));
    config.tiling.patch_size = std::stoll(need_meta("patch_size"));
    config.tiling.stride = std::stoll(need_meta("stride"));
    config.attention_dim = std::stoll(need_meta("attention_dim"));

    Model<S> model = make_model<S>(config, 0);
    for (const auto& p : model.parameters()) {
        const CheckpointTensor* t = ckpt.find(p.name);
        if (!t) throw IoError("checkpoint is missing tensor `" + p.name + "`");
        if (t->shape != p.tensor.shape())
            throw IoError("checkpoint tensor `" + p.name + "` has shape " + shape_str(t->shape) +
                          ", model expects " + shape_str(p.tensor.shape()));
        Tensor<S> dst = p.tensor;  // shared handle into the model
        for (std::int64_t i = 0; i < dst.size(); ++i)
            dst[i] = static_cast<S>(t->values[static_cast<std::size_t>(i)]);
    }
    return model;
}

}  // namespace amil
