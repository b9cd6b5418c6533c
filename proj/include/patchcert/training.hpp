#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "patchcert/adam.hpp"
#include "patchcert/checkpoint.hpp"
#include "patchcert/data.hpp"
#include "patchcert/evaluation.hpp"
#include "patchcert/io.hpp"
#include "patchcert/loss.hpp"
#include "patchcert/model.hpp"

namespace patchcert {

struct TrainConfig {
    double margin = 0.5;           // M = 2R / (w_out * h_out)
    double one_hot_weight = 0.0;   // sigma
    double learning_rate = 1e-3;
    int batch_size = 32;
    int epochs = 30;
    int warmup_epochs = 3;
    std::uint64_t seed = 0;
    Activation mode = Activation::heaviside_st;
    bool flip = true;
    bool crop = true;
    int crop_padding = 4;
    double holdout_fraction = 0.1;
    int eval_patch_h = 3;
    int eval_patch_w = 3;

    void validate() const {
        auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
        if (!(margin > 0.0 && margin <= 1.0)) fail("margin must be in (0,1]");
        if (!(one_hot_weight >= 0.0)) fail("one-hot weight must be >= 0");
        if (!(learning_rate > 0.0)) fail("learning rate must be positive");
        if (batch_size < 1) fail("batch size must be >= 1");
        if (epochs < 1) fail("epochs must be >= 1");
        if (warmup_epochs < 0 || warmup_epochs >= epochs) fail("warmup must be in [0, epochs)");
        if (mode == Activation::relu) fail("relu is not a head activation");
        if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) fail("holdout fraction must be in (0,1)");
        if (eval_patch_h < 1 || eval_patch_w < 1) fail("evaluation patch must be at least 1x1");
        if (crop_padding < 0) fail("crop padding must be >= 0");
    }
};

struct EpochMetrics {
    int epoch = 0;
    double clean_acc = 0.0;
    double cert_sum_acc = 0.0;    // sum-aggregation condition, per-region
    double cert_cheap_acc = 0.0;  // global-margin condition
    double loss = 0.0;
    double lr = 0.0;
    double seconds = 0.0;
};

struct MetricsLog {
    std::vector<EpochMetrics> rows;

    static constexpr const char* header = "epoch,clean_acc,cert32_acc,cert33_acc,loss,lr,seconds";

    std::string to_csv() const {
        std::ostringstream out;
        out << header << '\n';
        for (const auto& r : rows) {
            out << r.epoch << ',' << fixed6(r.clean_acc) << ',' << fixed6(r.cert_sum_acc) << ','
                << fixed6(r.cert_cheap_acc) << ',' << fixed6(r.loss) << ',' << fixed6(r.lr) << ','
                << fixed6(r.seconds) << '\n';
        }
        return out.str();
    }
};

struct TrainResult {
    Parameters params;  // final, or the last good snapshot if training diverged
    MetricsLog log;
    std::uint64_t steps = 0;
    std::optional<std::string> failure;

    Checkpoint checkpoint(const NetworkSpec& spec) const { return {spec, params, steps}; }
};

/// End-to-end training of the region scorer on the certification margin loss.
/// A seeded holdout split (config.holdout_fraction) is evaluated after every epoch.
inline TrainResult train(const TrainConfig& config, const Dataset& dataset, const NetworkSpec& spec,
                         const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
    config.validate();
    spec.validate();
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    for (const auto& item : dataset.items) {
        if (item.label < 0 || item.label >= spec.classes) {
            throw std::invalid_argument("train: label " + std::to_string(item.label) +
                                        " outside the spec's " + std::to_string(spec.classes) +
                                        " classes");
        }
    }
    const auto [train_set, holdout] = split_holdout(dataset, config.holdout_fraction, config.seed);
    const PatchPlan plan = PatchPlan::make(spec.geometry(), config.eval_patch_h, config.eval_patch_w);

    TrainResult result;
    result.params = build_model(spec, config.seed);
    Parameters last_good = result.params;
    AdamState<float> adam;
    std::mt19937_64 rng(config.seed + 1);
    const AugmentOptions aug{config.flip, config.crop, config.crop_padding};

    const long per_epoch =
        (static_cast<long>(train_set.size()) + config.batch_size - 1) / config.batch_size;
    const long total = per_epoch * config.epochs;
    const long warmup = per_epoch * config.warmup_epochs;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto started = std::chrono::steady_clock::now();

    long step = 0;
    double lr = 0.0;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        long batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            std::vector<Tensor> xs;
            std::vector<int> labels;
            for (std::size_t i = start; i < end; ++i) {
                const auto img = augment(train_set.items[order[i]], rng, aug);
                xs.push_back(img.pixels);
                labels.push_back(img.label);
            }
            GradTape<float> tape;
            const auto g = record_forward(tape, result.params, spec, stack<float>(xs), config.mode, true);
            const auto loss = batch_loss(tape.value(g.head), labels, config.margin, config.one_hot_weight);
            if (!std::isfinite(loss.value)) {
                result.params = last_good;
                result.failure = "loss diverged at epoch " + std::to_string(epoch) + ", step " +
                                 std::to_string(step);
                return result;
            }
            tape.backward(g.head, loss.head_grad);
            std::vector<Tensor> grads;
            grads.reserve(g.params.size());
            for (auto v : g.params) grads.push_back(tape.grad(v));
            std::vector<ParamRef<float>> refs;
            for (std::size_t k = 0; k < grads.size(); ++k) {
                refs.push_back({result.params.names[k], &result.params.tensors[k], &grads[k]});
            }
            lr = lr_schedule(step, total, warmup, config.learning_rate);
            try {
                adam_step<float>(refs, adam, lr);
            } catch (const NonFiniteGradient& e) {
                result.params = last_good;
                result.failure = std::string(e.what()) + " at epoch " + std::to_string(epoch);
                return result;
            }
            ++step;
            loss_sum += loss.value;
            ++batches;
        }
        if (!result.params.all_finite()) {
            result.params = last_good;
            result.failure = "parameters became non-finite in epoch " + std::to_string(epoch);
            return result;
        }
        Accuracy acc;
        try {
            acc = evaluate(result.params, spec, holdout, config.mode, plan);
        } catch (const NonFiniteOutput& e) {
            result.params = last_good;
            result.failure = std::string(e.what()) + " after epoch " + std::to_string(epoch);
            return result;
        }
        EpochMetrics m;
        m.epoch = epoch;
        m.clean_acc = acc.clean_rate();
        m.cert_sum_acc = acc.sum_rate();
        m.cert_cheap_acc = acc.cheap_rate();
        m.loss = loss_sum / static_cast<double>(batches);
        m.lr = lr;
        m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        last_good = result.params;
        result.steps = static_cast<std::uint64_t>(step);
        result.log.rows.push_back(m);
        if (on_epoch) on_epoch(m);
    }
    return result;
}

}  // namespace patchcert
