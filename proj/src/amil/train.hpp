#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <cmath>
#include <string>
#include <vector>

#include "amil/bags.hpp"
#include "amil/checkpoint.hpp"
#include "amil/model.hpp"
#include "amil/rng.hpp"

namespace amil {

enum class OptimizerKind { sgd, adam };

std::string optimizer_name(OptimizerKind kind);
OptimizerKind optimizer_from_name(const std::string& name);

// The optimization recipe: one bag per update (batch size is fixed at 1).
struct TrainConfig {
    double learning_rate = 0.001;
    int epochs = 1;
    std::uint64_t seed = 0;
    PoolingMode pooling = PoolingMode::attention;
    bool augment = true;
    OptimizerKind optimizer = OptimizerKind::adam;
    double weight_decay = 0.0;
    TilingSpec tiling{28, 28};
    std::int64_t attention_dim = 128;
    // Epoch wall time is always measured and reported on the console; it only
    // enters the metrics CSV when enabled, so the CSV stays byte-reproducible
    // under a fixed seed by default.
    bool record_timing = false;
};

struct Metrics {
    int epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
    double seconds = 0.0;
};

// CSV schema: epoch,train_loss,train_acc,val_acc,seconds
void write_metrics_csv(const std::string& path, const std::vector<Metrics>& metrics);

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

template <std::floating_point S>
struct OptimizerState {
    OptimizerKind kind = OptimizerKind::adam;
    std::int64_t step = 0;                // completed updates
    std::vector<std::vector<S>> m, v;     // adam moments, by parameters() order

    static OptimizerState make(OptimizerKind kind, const Model<S>& model) {
        OptimizerState st;
        st.kind = kind;
        if (kind == OptimizerKind::adam) {
            for (const auto& p : model.parameters()) {
                st.m.emplace_back(static_cast<std::size_t>(p.tensor.size()), S(0));
                st.v.emplace_back(static_cast<std::size_t>(p.tensor.size()), S(0));
            }
        }
        return st;
    }
};

namespace detail {

template <std::floating_point S>
void apply_update(Model<S>& model, OptimizerState<S>& opt, double lr, double weight_decay) {
    auto params = model.parameters();
    if (opt.kind == OptimizerKind::adam) {
        ++opt.step;
        const S b1 = static_cast<S>(kAdamBeta1), b2 = static_cast<S>(kAdamBeta2);
        const S corr1 = S(1) - static_cast<S>(std::pow(kAdamBeta1, static_cast<double>(opt.step)));
        const S corr2 = S(1) - static_cast<S>(std::pow(kAdamBeta2, static_cast<double>(opt.step)));
        const S eps = static_cast<S>(kAdamEps);
        const S slr = static_cast<S>(lr);
        const S wd = static_cast<S>(weight_decay);
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            Tensor<S> t = params[pi].tensor;
            const S* g0 = t.grad();
            S* m = opt.m[pi].data();
            S* v = opt.v[pi].data();
            S* w = t.data();
            for (std::int64_t i = 0; i < t.size(); ++i) {
                const S g = (g0 ? g0[i] : S(0)) + wd * w[i];
                m[i] = b1 * m[i] + (S(1) - b1) * g;
                v[i] = b2 * v[i] + (S(1) - b2) * g * g;
                const S mhat = m[i] / corr1;
                const S vhat = v[i] / corr2;
                w[i] -= slr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    } else {
        const S slr = static_cast<S>(lr);
        const S wd = static_cast<S>(weight_decay);
        for (auto& p : params) {
            Tensor<S> t = p.tensor;
            const S* g0 = t.grad();
            S* w = t.data();
            for (std::int64_t i = 0; i < t.size(); ++i)
                w[i] -= slr * ((g0 ? g0[i] : S(0)) + wd * w[i]);
        }
    }
}

template <std::floating_point S>
std::string grad_norm_report(const Model<S>& model) {
    std::string out;
    for (const auto& p : model.parameters()) {
        double sq = 0.0;
        if (const S* g = p.tensor.grad())
            for (std::int64_t i = 0; i < p.tensor.size(); ++i)
                sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
        out += " |" + p.name + "|=" + std::to_string(std::sqrt(sq));
    }
    return out;
}

}  // namespace detail

template <std::floating_point S>
struct StepResult {
    double loss = 0.0;         // pre-update loss on this bag
    double probability = 0.0;  // pre-update bag probability
};

// One forward, one backward, one parameter update on a single bag.
template <std::floating_point S>
StepResult<S> train_step(Model<S>& model, const Bag<S>& bag, int label, OptimizerState<S>& opt,
                         double lr, double weight_decay = 0.0) {
    for (auto& p : model.parameters()) p.tensor.zero_grad();
    Tape<S> tape;
    ForwardResult<S> fr = forward_bag(bag, model, &tape);
    Tensor<S> loss = bce_loss(fr.probability, label, &tape);
    tape.backward(loss);

    StepResult<S> result{static_cast<double>(loss.item()),
                         static_cast<double>(fr.probability.item())};
    bool finite = std::isfinite(result.loss);
    if (finite) {
        for (const auto& p : model.parameters()) {
            if (const S* g = p.tensor.grad()) {
                for (std::int64_t i = 0; i < p.tensor.size() && finite; ++i)
                    finite = std::isfinite(static_cast<double>(g[i]));
            }
            if (!finite) break;
        }
    }
    if (!finite)
        throw TrainingError("non-finite training step: loss=" + std::to_string(result.loss) +
                            ", grad norms:" + detail::grad_norm_report(model));

    detail::apply_update(model, opt, lr, weight_decay);
    return result;
}

// Fraction of bags whose thresholded probability (> 0.5) matches the label.
template <std::floating_point S>
double evaluate(const Model<S>& model, const std::vector<Bag<S>>& bags) {
    if (bags.empty()) throw ContractError("evaluate: no bags");
    std::int64_t correct = 0;
    for (const auto& bag : bags) {
        ForwardResult<S> fr = forward_bag(bag, model, static_cast<Tape<S>*>(nullptr));
        const int predicted = fr.probability.item() > S(0.5) ? 1 : 0;
        if (predicted == bag.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(bags.size());
}

// ---------------------------------------------------------------------------
// training checkpoints (model + optimizer state + progress meta)
// ---------------------------------------------------------------------------

template <std::floating_point S>
void save_training_checkpoint(const std::string& path, const Model<S>& model,
                              const OptimizerState<S>& opt, int epochs_done, double best_val,
                              int best_epoch) {
    Checkpoint ckpt = checkpoint_from_model(model);
    ckpt.set_meta("optimizer", optimizer_name(opt.kind));
    ckpt.set_meta("epochs_done", std::to_string(epochs_done));
    ckpt.set_meta("best_val_acc", format_double(best_val));
    ckpt.set_meta("best_epoch", std::to_string(best_epoch));
    if (opt.kind == OptimizerKind::adam) {
        ckpt.set_meta("adam_step", std::to_string(opt.step));
        auto params = model.parameters();
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            for (const char* slot : {"m", "v"}) {
                CheckpointTensor t;
                t.name = std::string("adam.") + slot + "." + params[pi].name;
                t.shape = params[pi].tensor.shape();
                const auto& src = slot[0] == 'm' ? opt.m[pi] : opt.v[pi];
                t.values.resize(src.size());
                for (std::size_t i = 0; i < src.size(); ++i)
                    t.values[i] = static_cast<float>(src[i]);
                ckpt.tensors.push_back(std::move(t));
            }
        }
    }
    save_checkpoint(path, ckpt);
}

template <std::floating_point S>
struct ResumeState {
    Model<S> model;
    OptimizerState<S> opt;
    int epochs_done = 0;
    double best_val = -1.0;
    int best_epoch = -1;
};

template <std::floating_point S>
ResumeState<S> load_training_checkpoint(const std::string& path) {
    const Checkpoint ckpt = load_checkpoint(path);
    ResumeState<S> st{model_from_checkpoint<S>(ckpt), {}, 0, -1.0, -1};
    const auto opt_name = ckpt.meta_value("optimizer");
    if (!opt_name) throw IoError("checkpoint has no optimizer state: " + path);
    st.opt = OptimizerState<S>::make(optimizer_from_name(*opt_name), st.model);
    if (st.opt.kind == OptimizerKind::adam) {
        st.opt.step = std::stoll(ckpt.meta_value("adam_step").value_or("0"));
        auto params = st.model.parameters();
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            for (const char* slot : {"m", "v"}) {
                const auto name = std::string("adam.") + slot + "." + params[pi].name;
                const CheckpointTensor* t = ckpt.find(name);
                if (!t) throw IoError("checkpoint is missing optimizer tensor `" + name + "`");
                auto& dst = slot[0] == 'm' ? st.opt.m[pi] : st.opt.v[pi];
                if (t->values.size() != dst.size())
                    throw IoError("optimizer tensor `" + name + "` has the wrong size");
                for (std::size_t i = 0; i < dst.size(); ++i)
                    dst[i] = static_cast<S>(t->values[i]);
            }
        }
    }
    st.epochs_done = std::stoi(ckpt.meta_value("epochs_done").value_or("0"));
    st.best_val = std::stod(ckpt.meta_value("best_val_acc").value_or("-1"));
    st.best_epoch = std::stoi(ckpt.meta_value("best_epoch").value_or("-1"));
    return st;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct FitOptions {
    std::string checkpoint_dir;  // when set, writes last.ckpt (+state) and best.ckpt
    std::string resume_from;     // path to a last.ckpt from an earlier run
    bool log_progress = false;   // one console line per epoch
};

template <std::floating_point S>
struct FitResult {
    Model<S> model;       // parameters after the final epoch
    Model<S> best_model;  // parameters at the best validation epoch
    std::vector<Metrics> metrics;
    double best_val = -1.0;
    int best_epoch = -1;
};

// Trains for config.epochs total passes (a resumed run continues its count).
// Each epoch reshuffles the training bags and, when augmentation is on,
// redraws one whole-image transform per image before tiling. Every random
// stream derives from (seed, purpose, epoch, item), so a run resumed from a
// checkpoint replays exactly the bags an uninterrupted run would see.
template <std::floating_point S>
FitResult<S> fit(const std::vector<SourceImage>& train_images,
                 const std::vector<SourceImage>& val_images, const TrainConfig& config,
                 const FitOptions& options = {}) {
    if (train_images.empty() || val_images.empty())
        throw ContractError("fit: train and validation sets must be non-empty");
    if (config.epochs < 1) throw ContractError("fit: epochs must be >= 1");
    if (!(config.learning_rate > 0)) throw ContractError("fit: learning rate must be positive");

    FitResult<S> result;
    OptimizerState<S> opt;
    int start_epoch = 0;
    if (!options.resume_from.empty()) {
        ResumeState<S> st = load_training_checkpoint<S>(options.resume_from);
        result.model = std::move(st.model);
        opt = std::move(st.opt);
        start_epoch = st.epochs_done;
        result.best_val = st.best_val;
        result.best_epoch = st.best_epoch;
        const auto best_path =
            std::filesystem::path(options.resume_from).parent_path() / "best.ckpt";
        if (std::filesystem::exists(best_path))
            result.best_model = model_from_checkpoint<S>(load_checkpoint(best_path.string()));
        else
            result.best_model = result.model.clone();
    } else {
        result.model =
            make_model<S>(ModelConfig{config.tiling, config.attention_dim, config.pooling},
                          config.seed);
        opt = OptimizerState<S>::make(config.optimizer, result.model);
        result.best_model = result.model.clone();
    }

    std::vector<Bag<S>> val_bags;
    val_bags.reserve(val_images.size());
    for (const auto& img : val_images) val_bags.push_back(tile<S>(img, config.tiling));

    // without augmentation the training bags never change; tile them once
    std::vector<Bag<S>> cached_train;
    if (!config.augment) {
        cached_train.reserve(train_images.size());
        for (const auto& img : train_images) cached_train.push_back(tile<S>(img, config.tiling));
    }

    const std::size_t n = train_images.size();
    for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng =
            rng_for(config.seed, {stream::kShuffle, static_cast<std::uint64_t>(epoch)});
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        std::int64_t correct = 0;
        for (std::size_t i : order) {
            Bag<S> bag;
            if (config.augment) {
                Rng aug_rng = rng_for(config.seed, {stream::kAugment,
                                                    static_cast<std::uint64_t>(epoch),
                                                    static_cast<std::uint64_t>(i)});
                const Transform t =
                    static_cast<Transform>(aug_rng.below(static_cast<std::uint64_t>(kNumTransforms)));
                bag = tile<S>(augment(train_images[i], t), config.tiling);
            } else {
                bag = cached_train[i];
            }
            StepResult<S> step = train_step(result.model, bag, bag.label, opt,
                                            config.learning_rate, config.weight_decay);
            loss_sum += step.loss;
            if ((step.probability > 0.5 ? 1 : 0) == bag.label) ++correct;
        }

        Metrics m;
        m.epoch = epoch;
        m.train_loss = loss_sum / static_cast<double>(n);
        m.train_acc = static_cast<double>(correct) / static_cast<double>(n);
        m.val_acc = evaluate(result.model, val_bags);
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
        m.seconds = config.record_timing ? elapsed : 0.0;
        result.metrics.push_back(m);

        if (m.val_acc > result.best_val) {
            result.best_val = m.val_acc;
            result.best_epoch = epoch;
            result.best_model = result.model.clone();
            if (!options.checkpoint_dir.empty())
                save_checkpoint((std::filesystem::path(options.checkpoint_dir) / "best.ckpt")
                                    .string(),
                                checkpoint_from_model(result.best_model));
        }
        if (!options.checkpoint_dir.empty())
            save_training_checkpoint(
                (std::filesystem::path(options.checkpoint_dir) / "last.ckpt").string(),
                result.model, opt, epoch + 1, result.best_val, result.best_epoch);
        if (options.log_progress)
            std::printf("epoch %d  loss %.4f  train_acc %.4f  val_acc %.4f  (%.1fs)\n", epoch,
                        m.train_loss, m.train_acc, m.val_acc, elapsed);
    }
    return result;
}

}  // namespace amil
