#pragma once

#include <optional>
#include <string>
#include <vector>

#include "amil/bags.hpp"
#include "amil/rng.hpp"
#include "amil/tensor.hpp"

namespace amil {

// Feature extractor layout: two 5x5 valid convolutions with ReLU, each
// followed by a 2x2 maxpool, then one fully connected layer with ReLU down to
// a 500-long instance embedding. For 28x28 patches the activations run
// 3x28x28 -> 20x24x24 -> 20x12x12 -> 50x8x8 -> 50x4x4 -> 800 -> 500.
constexpr std::int64_t kConv1Channels = 20;
constexpr std::int64_t kConv2Channels = 50;
constexpr std::int64_t kKernelSize = 5;
constexpr std::int64_t kPoolWindow = 2;
constexpr std::int64_t kFeatureDim = 500;

// Spatial extent after both conv+pool stages; throws if the patch size does
// not survive the fixed geometry (needs patch >= 16 and patch % 4 == 0).
std::int64_t extractor_spatial_dim(std::int64_t patch_size);

inline std::int64_t extractor_flatten_dim(std::int64_t patch_size) {
    const std::int64_t d = extractor_spatial_dim(patch_size);
    return kConv2Channels * d * d;
}

enum class PoolingMode { attention, max, mean };

std::string pooling_name(PoolingMode mode);
PoolingMode pooling_from_name(const std::string& name);

template <std::floating_point S>
struct FeatureExtractorParams {
    Tensor<S> conv1_weight;  // [20 x 3 x 5 x 5]
    Tensor<S> conv1_bias;    // [20]
    Tensor<S> conv2_weight;  // [50 x 20 x 5 x 5]
    Tensor<S> conv2_bias;    // [50]
    Tensor<S> fc_weight;     // [flatten x 500], input-major
    Tensor<S> fc_bias;       // [1 x 500]
};

template <std::floating_point S>
struct AttentionParams {
    Tensor<S> V;  // [D x 500]
    Tensor<S> w;  // [D x 1]
};

template <std::floating_point S>
struct ClassifierParams {
    Tensor<S> weight;  // [500 x 1], input-major
    Tensor<S> bias;    // [1 x 1]
};

struct ModelConfig {
    TilingSpec tiling;
    std::int64_t attention_dim = 128;
    PoolingMode pooling = PoolingMode::attention;
};

template <std::floating_point S>
struct NamedParam {
    std::string name;
    Tensor<S> tensor;
};

// The complete model. The parameter count is independent of bag size: the
// same instance evaluates bags of one patch or four hundred.
template <std::floating_point S>
struct Model {
    FeatureExtractorParams<S> extractor;
    AttentionParams<S> attention;
    ClassifierParams<S> head;
    ModelConfig config;

    // Stable name -> tensor listing; checkpoints and optimizers follow this order.
    std::vector<NamedParam<S>> parameters() const {
        return {
            {"extractor.conv1.weight", extractor.conv1_weight},
            {"extractor.conv1.bias", extractor.conv1_bias},
            {"extractor.conv2.weight", extractor.conv2_weight},
            {"extractor.conv2.bias", extractor.conv2_bias},
            {"extractor.fc.weight", extractor.fc_weight},
            {"extractor.fc.bias", extractor.fc_bias},
            {"attention.V", attention.V},
            {"attention.w", attention.w},
            {"head.weight", head.weight},
            {"head.bias", head.bias},
        };
    }

    Model clone() const {
        Model m;
        m.config = config;
        m.extractor.conv1_weight = extractor.conv1_weight.clone();
        m.extractor.conv1_bias = extractor.conv1_bias.clone();
        m.extractor.conv2_weight = extractor.conv2_weight.clone();
        m.extractor.conv2_bias = extractor.conv2_bias.clone();
        m.extractor.fc_weight = extractor.fc_weight.clone();
        m.extractor.fc_bias = extractor.fc_bias.clone();
        m.attention.V = attention.V.clone();
        m.attention.w = attention.w.clone();
        m.head.weight = head.weight.clone();
        m.head.bias = head.bias.clone();
        return m;
    }
};

namespace detail {

template <std::floating_point S>
Tensor<S> glorot(Shape shape, std::int64_t fan_in, std::int64_t fan_out, Rng rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return Tensor<S>::uniform(std::move(shape), static_cast<S>(-limit), static_cast<S>(limit),
                              rng, true);
}

}  // namespace detail

// Fresh model with uniform +-sqrt(6/(fan_in+fan_out)) weights and zero
// biases. Every tensor draws from its own derived stream, so the layout of
// one parameter never shifts the values of another.
template <std::floating_point S>
Model<S> make_model(const ModelConfig& config, std::uint64_t seed) {
    const std::int64_t flat = extractor_flatten_dim(config.tiling.patch_size);
    if (config.attention_dim < 1)
        throw ContractError("attention_dim must be positive");
    const std::int64_t D = config.attention_dim;
    const std::int64_t kk = kKernelSize * kKernelSize;

    Model<S> m;
    m.config = config;
    m.extractor.conv1_weight =
        detail::glorot<S>(Shape{kConv1Channels, 3, kKernelSize, kKernelSize}, 3 * kk,
                          kConv1Channels * kk, rng_for(seed, {stream::kInit, 0}));
    m.extractor.conv1_bias = Tensor<S>(Shape{kConv1Channels}, true);
    m.extractor.conv2_weight =
        detail::glorot<S>(Shape{kConv2Channels, kConv1Channels, kKernelSize, kKernelSize},
                          kConv1Channels * kk, kConv2Channels * kk,
                          rng_for(seed, {stream::kInit, 1}));
    m.extractor.conv2_bias = Tensor<S>(Shape{kConv2Channels}, true);
    m.extractor.fc_weight =
        detail::glorot<S>(Shape{flat, kFeatureDim}, flat, kFeatureDim,
                          rng_for(seed, {stream::kInit, 2}));
    m.extractor.fc_bias = Tensor<S>(Shape{1, kFeatureDim}, true);
    m.attention.V = detail::glorot<S>(Shape{D, kFeatureDim}, kFeatureDim, D,
                                      rng_for(seed, {stream::kInit, 3}));
    m.attention.w = detail::glorot<S>(Shape{D, 1}, D, 1, rng_for(seed, {stream::kInit, 4}));
    m.head.weight = detail::glorot<S>(Shape{kFeatureDim, 1}, kFeatureDim, 1,
                                      rng_for(seed, {stream::kInit, 5}));
    m.head.bias = Tensor<S>(Shape{1, 1}, true);
    return m;
}

// ---------------------------------------------------------------------------
// forward pieces
// ---------------------------------------------------------------------------

// Per-patch embedding h_p of length 500.
template <std::floating_point S>
Tensor<S> extract_features(const Tensor<S>& patch, const FeatureExtractorParams<S>& p,
                           Tape<S>* tape) {
    if (patch.rank() != 3 || patch.dim(0) != 3 || patch.dim(1) != patch.dim(2))
        throw GeometryError("extract_features: expected a [3 x s x s] patch, got " +
                            shape_str(patch.shape()));
    Tensor<S> a = maxpool2d(relu(conv2d(patch, p.conv1_weight, p.conv1_bias, 1, tape), tape),
                            kPoolWindow, tape);
    Tensor<S> b = maxpool2d(relu(conv2d(a, p.conv2_weight, p.conv2_bias, 1, tape), tape),
                            kPoolWindow, tape);
    Tensor<S> flat = reshape(b, Shape{1, b.size()}, tape);
    Tensor<S> h = relu(add(matmul(flat, p.fc_weight, tape), p.fc_bias, tape), tape);
    return reshape(h, Shape{kFeatureDim}, tape);
}

// Softmax over per-instance scores w^T tanh(V h_p^T); a probability vector.
template <std::floating_point S>
Tensor<S> attention_weights(const Tensor<S>& H, const AttentionParams<S>& p, Tape<S>* tape) {
    if (H.rank() != 2 || H.dim(1) != p.V.dim(1))
        throw DimensionError("attention_weights: instance matrix " + shape_str(H.shape()) +
                             " does not match V " + shape_str(p.V.shape()));
    Tensor<S> vt = transpose(p.V, tape);                        // [L x D]
    Tensor<S> scores = matmul(tanh(matmul(H, vt, tape), tape), p.w, tape);  // [m x 1]
    return softmax(reshape(scores, Shape{H.dim(0)}, tape), tape);
}

// z = sum_p a_p h_p.
template <std::floating_point S>
Tensor<S> aggregate(const Tensor<S>& H, const Tensor<S>& a, Tape<S>* tape) {
    if (H.rank() != 2 || a.rank() != 1 || a.dim(0) != H.dim(0))
        throw DimensionError("aggregate: weights " + shape_str(a.shape()) +
                             " do not match instances " + shape_str(H.shape()));
    Tensor<S> z = matmul(transpose(H, tape), reshape(a, Shape{a.dim(0), 1}, tape), tape);
    return reshape(z, Shape{H.dim(1)}, tape);
}

template <std::floating_point S>
Tensor<S> pool_max(const Tensor<S>& H, Tape<S>* tape) {
    return colwise_max(H, tape);
}

template <std::floating_point S>
Tensor<S> pool_mean(const Tensor<S>& H, Tape<S>* tape) {
    return colwise_mean(H, tape);
}

// Bag label rule: positive iff any instance is positive.
inline int bag_label(const std::vector<int>& instance_labels) {
    if (instance_labels.empty()) throw ContractError("bag_label: empty instance list");
    for (int v : instance_labels) {
        if (v != 0 && v != 1)
            throw ContractError("bag_label: labels must be 0 or 1, got " + std::to_string(v));
        if (v == 1) return 1;
    }
    return 0;
}

template <std::floating_point S>
struct AttentionOutput {
    Tensor<S> weights;      // [m], non-negative, sums to 1
    Tensor<S> bag_feature;  // [500]
};

template <std::floating_point S>
struct ForwardResult {
    Tensor<S> probability;  // scalar in (0, 1)
    std::optional<AttentionOutput<S>> attention;  // present iff attention pooling
};

// Full bag pass: embed every patch, pool per the configured mode, classify.
template <std::floating_point S>
ForwardResult<S> forward_bag(const Bag<S>& bag, const Model<S>& model, Tape<S>* tape) {
    if (bag.patches.empty()) throw ContractError("forward_bag: empty bag");
    for (const auto& patch : bag.patches)
        if (patch.rank() != 3 || patch.dim(0) != 3 ||
            patch.dim(1) != model.config.tiling.patch_size ||
            patch.dim(2) != model.config.tiling.patch_size)
            throw GeometryError("forward_bag: patch " + shape_str(patch.shape()) +
                                " does not match the model's patch size " +
                                std::to_string(model.config.tiling.patch_size));

    std::vector<Tensor<S>> feats;
    feats.reserve(bag.patches.size());
    for (const auto& patch : bag.patches)
        feats.push_back(extract_features(patch, model.extractor, tape));
    Tensor<S> H = stack_rows<S>(feats, tape);  // [m x 500]

    ForwardResult<S> out;
    Tensor<S> z;
    if (model.config.pooling == PoolingMode::attention) {
        Tensor<S> a = attention_weights(H, model.attention, tape);
        z = aggregate(H, a, tape);
        out.attention = AttentionOutput<S>{a, z};
    } else if (model.config.pooling == PoolingMode::max) {
        z = pool_max(H, tape);
    } else {
        z = pool_mean(H, tape);
    }
    Tensor<S> logit = add(matmul(reshape(z, Shape{1, kFeatureDim}, tape), model.head.weight, tape),
                          model.head.bias, tape);
    out.probability = sigmoid(reshape(logit, Shape{1}, tape), tape);
    return out;
}

// Per-instance classifier logits head(h_p), no pooling. Used to compare a
// uniform-pooling model's implied localization against attention.
template <std::floating_point S>
std::vector<double> instance_scores(const Bag<S>& bag, const Model<S>& model) {
    if (bag.patches.empty()) throw ContractError("instance_scores: empty bag");
    std::vector<double> out;
    out.reserve(bag.patches.size());
    for (const auto& patch : bag.patches) {
        Tensor<S> h = extract_features(patch, model.extractor, static_cast<Tape<S>*>(nullptr));
        Tensor<S> logit = add(
            matmul(reshape(h, Shape{1, kFeatureDim}, static_cast<Tape<S>*>(nullptr)),
                   model.head.weight, static_cast<Tape<S>*>(nullptr)),
            model.head.bias, static_cast<Tape<S>*>(nullptr));
        out.push_back(static_cast<double>(logit.item()));
    }
    return out;
}

}  // namespace amil
