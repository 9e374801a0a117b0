#pragma once

// Whole-model gradient checking. Central differences need two forward passes
// per parameter coordinate, so the checker stages the forward: perturbing a
// tensor only recomputes from that tensor's layer onward (the function value
// is identical, upstream activations cannot depend on the perturbed tensor).
// The analytic gradients of the staged functions are cross-checked against
// one full end-to-end backward before being trusted.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "amil/bags.hpp"
#include "amil/gradcheck.hpp"
#include "amil/model.hpp"

namespace testsupport {

using amil::Bag;
using amil::Model;
using amil::Shape;
using amil::Tape;
using DT = amil::Tensor<double>;

struct ModelFdReport {
    double max_rel_err = 0.0;                    // worst coordinate over all tensors
    double max_backward_gap = 0.0;               // staged vs full-graph analytic grads
    std::map<std::string, double> per_tensor;
};

// Central differences around a relu kink or a maxpool tie measure the wrong
// slope, so finite-difference runs need inputs in general position. The
// clearance of a (model, bag) pair is the smallest |pre-activation| over
// every relu input plus the smallest in-window runner-up gap over every
// maxpool window; a clearance comfortably above the perturbation scale means
// no evaluation can cross a kink. Seeds used by tests are chosen (and
// asserted) to clear this bar rather than nudged after the fact.
inline double fd_clearance(const Model<double>& model, const Bag<double>& bag) {
    double clearance = 1e300;
    auto scan_relu = [&](const DT& pre) {
        for (std::int64_t i = 0; i < pre.size(); ++i)
            clearance = std::min(clearance, std::abs(pre[i]));
    };
    auto scan_pool_ties = [&](const DT& act) {
        const std::int64_t C = act.dim(0), H = act.dim(1), W = act.dim(2);
        const std::int64_t win = amil::kPoolWindow;
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t oh = 0; oh + win <= H; oh += win)
                for (std::int64_t ow = 0; ow + win <= W; ow += win) {
                    double best = -1e300, second = -1e300;
                    for (std::int64_t i = 0; i < win; ++i)
                        for (std::int64_t j = 0; j < win; ++j) {
                            const double v = act[(c * H + oh + i) * W + ow + j];
                            if (v > best) {
                                second = best;
                                best = v;
                            } else if (v > second) {
                                second = v;
                            }
                        }
                    // ties between relu-clipped zeros cannot reroute gradient
                    if (second > -1e300 && best > 0.0)
                        clearance = std::min(clearance, best - second);
                }
    };
    auto np = static_cast<amil::Tape<double>*>(nullptr);
    for (const auto& patch : bag.patches) {
        DT pre1 = amil::conv2d(patch, model.extractor.conv1_weight, model.extractor.conv1_bias,
                               1, np);
        scan_relu(pre1);
        DT act1 = amil::relu(pre1, np);
        scan_pool_ties(act1);
        DT pool1 = amil::maxpool2d(act1, amil::kPoolWindow, np);
        DT pre2 = amil::conv2d(pool1, model.extractor.conv2_weight, model.extractor.conv2_bias,
                               1, np);
        scan_relu(pre2);
        DT act2 = amil::relu(pre2, np);
        scan_pool_ties(act2);
        DT flat = amil::reshape(amil::maxpool2d(act2, amil::kPoolWindow, np),
                                Shape{1, amil::extractor_flatten_dim(patch.dim(1))}, np);
        DT prefc = amil::add(amil::matmul(flat, model.extractor.fc_weight, np),
                             model.extractor.fc_bias, np);
        scan_relu(prefc);
    }
    return clearance;
}

inline ModelFdReport model_fd_check(Model<double>& model, const Bag<double>& bag, int label,
                                    double step) {
    // Full-graph analytic gradients, one backward over the whole bag loss.
    std::map<std::string, std::vector<double>> full_grads;
    {
        for (auto& p : model.parameters()) p.tensor.zero_grad();
        Tape<double> tape;
        auto fr = amil::forward_bag(bag, model, &tape);
        tape.backward(amil::bce_loss(fr.probability, label, &tape));
        for (auto& p : model.parameters()) {
            const double* g = p.tensor.grad();
            std::vector<double> v(static_cast<std::size_t>(p.tensor.size()), 0.0);
            if (g) v.assign(g, g + p.tensor.size());
            full_grads[p.name] = std::move(v);
        }
    }

    const std::int64_t m = bag.size();

    // Stage caches from the unperturbed model.
    auto run_pool1 = [&](std::int64_t i, Tape<double>* tape) {
        return amil::maxpool2d(
            amil::relu(amil::conv2d(bag.patches[static_cast<std::size_t>(i)],
                                    model.extractor.conv1_weight, model.extractor.conv1_bias, 1,
                                    tape),
                       tape),
            amil::kPoolWindow, tape);
    };
    auto run_flat = [&](const DT& pool1, Tape<double>* tape) {
        DT b = amil::maxpool2d(
            amil::relu(amil::conv2d(pool1, model.extractor.conv2_weight,
                                    model.extractor.conv2_bias, 1, tape),
                       tape),
            amil::kPoolWindow, tape);
        return amil::reshape(b, Shape{1, b.size()}, tape);
    };
    auto run_feature = [&](const DT& flat, Tape<double>* tape) {
        DT h = amil::relu(amil::add(amil::matmul(flat, model.extractor.fc_weight, tape),
                                    model.extractor.fc_bias, tape),
                          tape);
        return amil::reshape(h, Shape{amil::kFeatureDim}, tape);
    };
    auto run_from_H = [&](const DT& H, Tape<double>* tape) {
        DT z;
        if (model.config.pooling == amil::PoolingMode::attention) {
            DT a = amil::attention_weights(H, model.attention, tape);
            z = amil::aggregate(H, a, tape);
        } else if (model.config.pooling == amil::PoolingMode::max) {
            z = amil::pool_max(H, tape);
        } else {
            z = amil::pool_mean(H, tape);
        }
        return z;
    };
    auto run_head = [&](const DT& z, Tape<double>* tape) {
        DT logit = amil::add(amil::matmul(amil::reshape(z, Shape{1, amil::kFeatureDim}, tape),
                                          model.head.weight, tape),
                             model.head.bias, tape);
        DT p = amil::sigmoid(amil::reshape(logit, Shape{1}, tape), tape);
        return amil::bce_loss(p, label, tape);
    };

    std::vector<DT> pool1_cache, flat_cache, feat_cache;
    for (std::int64_t i = 0; i < m; ++i) {
        pool1_cache.push_back(run_pool1(i, nullptr));
        flat_cache.push_back(run_flat(pool1_cache.back(), nullptr));
        feat_cache.push_back(run_feature(flat_cache.back(), nullptr));
    }
    DT H_cache = amil::stack_rows<double>(feat_cache, nullptr);
    DT z_cache = run_from_H(H_cache, nullptr);

    // Staged loss functions; each recomputes only what its tensor can affect.
    auto from_conv1 = [&](const DT&, Tape<double>* tape) {
        std::vector<DT> feats;
        for (std::int64_t i = 0; i < m; ++i)
            feats.push_back(run_feature(run_flat(run_pool1(i, tape), tape), tape));
        return run_head(run_from_H(amil::stack_rows<double>(feats, tape), tape), tape);
    };
    auto from_conv2 = [&](const DT&, Tape<double>* tape) {
        std::vector<DT> feats;
        for (std::int64_t i = 0; i < m; ++i)
            feats.push_back(run_feature(run_flat(pool1_cache[static_cast<std::size_t>(i)], tape), tape));
        return run_head(run_from_H(amil::stack_rows<double>(feats, tape), tape), tape);
    };
    auto from_fc = [&](const DT&, Tape<double>* tape) {
        std::vector<DT> feats;
        for (std::int64_t i = 0; i < m; ++i)
            feats.push_back(run_feature(flat_cache[static_cast<std::size_t>(i)], tape));
        return run_head(run_from_H(amil::stack_rows<double>(feats, tape), tape), tape);
    };
    auto from_attention = [&](const DT&, Tape<double>* tape) {
        return run_head(run_from_H(H_cache, tape), tape);
    };
    auto from_head = [&](const DT&, Tape<double>* tape) { return run_head(z_cache, tape); };

    using StageFn = std::function<DT(const DT&, Tape<double>*)>;
    std::vector<std::pair<std::string, StageFn>> stages = {
        {"extractor.conv1.weight", from_conv1}, {"extractor.conv1.bias", from_conv1},
        {"extractor.conv2.weight", from_conv2}, {"extractor.conv2.bias", from_conv2},
        {"extractor.fc.weight", from_fc},       {"extractor.fc.bias", from_fc},
        {"attention.V", from_attention},        {"attention.w", from_attention},
        {"head.weight", from_head},             {"head.bias", from_head},
    };

    ModelFdReport report;
    for (auto& p : model.parameters()) {
        if (model.config.pooling != amil::PoolingMode::attention &&
            (p.name == "attention.V" || p.name == "attention.w"))
            continue;  // unused by the loss in max/mean modes
        StageFn stage;
        for (auto& [name, fn] : stages)
            if (name == p.name) stage = fn;

        // staged analytic must agree with the full-graph backward
        {
            for (auto& q : model.parameters()) q.tensor.zero_grad();
            Tape<double> tape;
            tape.backward(stage(p.tensor, &tape));
            const double* g = p.tensor.grad();
            const auto& full = full_grads[p.name];
            for (std::int64_t i = 0; i < p.tensor.size(); ++i) {
                const double staged = g ? g[i] : 0.0;
                const double gap = std::abs(staged - full[static_cast<std::size_t>(i)]) /
                                   std::max(1.0, std::abs(full[static_cast<std::size_t>(i)]));
                report.max_backward_gap = std::max(report.max_backward_gap, gap);
            }
        }

        const double err = amil::finite_diff_check<double>(stage, p.tensor, step);
        report.per_tensor[p.name] = err;
        report.max_rel_err = std::max(report.max_rel_err, err);
    }
    return report;
}

}  // namespace testsupport
