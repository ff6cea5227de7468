#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dflat/data.hpp"
#include "dflat/errors.hpp"
#include "dflat/metrics.hpp"
#include "dflat/model.hpp"
#include "dflat/store.hpp"
#include "dflat/tape.hpp"

namespace dflat {

enum class Optimizer { sgd, adam };

inline const char* optimizer_name(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }

inline Optimizer optimizer_from_name(const std::string& s) {
    if (s == "sgd") return Optimizer::sgd;
    if (s == "adam") return Optimizer::adam;
    throw ConfigError("unknown optimizer: " + s + " (want sgd|adam)");
}

struct TrainConfig {
    std::size_t steps = 500;
    std::size_t batch_size = 4;
    double learning_rate = 1e-3;
    Optimizer optimizer = Optimizer::adam;
    Task task = Task::stripes;
    std::size_t train_samples = 32;
    std::size_t holdout_samples = 8;
    std::size_t eval_every = 50;

    void validate() const {
        if (steps < 1) {
            throw ConfigError("train: steps must be >= 1");
        }
        if (learning_rate < 0.0) {
            throw ConfigError("train: learning_rate must be >= 0");
        }
        if (batch_size < 1 || train_samples < 1 || holdout_samples < 1) {
            throw ConfigError("train: batch and sample counts must be >= 1");
        }
        if (eval_every < 1) {
            throw ConfigError("train: eval_every must be >= 1");
        }
    }
};

// The held-out set lives on its own seed stream, derived from the training
// seed so train and eval regenerate the identical samples.
inline std::uint64_t holdout_seed(std::uint64_t seed) { return seed ^ 0x9e3779b97f4a7c15ull; }

struct MetricsRecord {
    std::size_t step = 0;
    double loss = 0.0;
    std::optional<double> miou;
};

struct EvalResult {
    double miou = 0.0;
    double mean_loss = 0.0;
    std::vector<std::vector<std::size_t>> predictions;
};

inline EvalResult evaluate(Model& model, const std::vector<SyntheticSample>& samples) {
    MiouAccumulator acc(model.config().n_classes);
    EvalResult r;
    for (const auto& sample : samples) {
        Graph g(model.store());
        ModelOutput out = model.forward(g, sample.image);
        const Tensor& logits = g.value(out.logits);
        std::vector<std::size_t> pred = argmax_rows(logits);
        acc.add(pred, sample.mask);
        r.mean_loss += cross_entropy_value(logits, sample.mask);
        r.predictions.push_back(std::move(pred));
    }
    r.mean_loss /= static_cast<double>(samples.size());
    r.miou = acc.result().miou;
    return r;
}

struct TrainResult {
    std::vector<MetricsRecord> history;
    double final_loss = 0.0;
    double final_miou = 0.0;
};

// Cross-entropy loss of one sample as a reusable closure: forward from the
// store's current values, optionally with a backward pass. This is the shape
// gradcheck wants.
inline std::function<double(bool)> make_sample_loss(Model& model, const SyntheticSample& sample) {
    return [&model, &sample](bool with_grad) {
        Graph g(model.store());
        ModelOutput out = model.forward(g, sample.image);
        Var loss = g.cross_entropy_mean(out.logits, sample.mask);
        if (with_grad) {
            g.backward(loss);
        }
        return g.value(loss)[0];
    };
}

// Plain step loop: cyclic contiguous batches, fixed accumulation order, loss
// recorded every step, held-out mIoU every eval_every steps and at the end.
inline TrainResult train(Model& model, const TrainConfig& tcfg) {
    tcfg.validate();
    const ModelConfig& mcfg = model.config();
    const auto train_set = generate(tcfg.task, tcfg.train_samples, mcfg.H, mcfg.W,
                                    mcfg.n_classes, mcfg.seed);
    const auto holdout = generate(tcfg.task, tcfg.holdout_samples, mcfg.H, mcfg.W,
                                  mcfg.n_classes, holdout_seed(mcfg.seed));

    std::unique_ptr<Sgd> sgd;
    std::unique_ptr<Adam> adam;
    if (tcfg.optimizer == Optimizer::sgd) {
        sgd = std::make_unique<Sgd>(tcfg.learning_rate);
    } else {
        adam = std::make_unique<Adam>(tcfg.learning_rate);
    }

    TrainResult result;
    const double inv_batch = 1.0 / static_cast<double>(tcfg.batch_size);
    for (std::size_t step = 1; step <= tcfg.steps; ++step) {
        model.store().zero_grad();
        double loss_sum = 0.0;
        const std::size_t base = (step - 1) * tcfg.batch_size;
        for (std::size_t b = 0; b < tcfg.batch_size; ++b) {
            const SyntheticSample& sample = train_set[(base + b) % train_set.size()];
            Graph g(model.store());
            ModelOutput out = model.forward(g, sample.image);
            Var loss = g.cross_entropy_mean(out.logits, sample.mask);
            loss_sum += g.value(loss)[0];
            g.backward(g.scale(loss, inv_batch));
        }
        const double mean_loss = loss_sum * inv_batch;
        if (!std::isfinite(mean_loss)) {
            throw DivergenceError("training diverged at step " + std::to_string(step) +
                                  ": loss is not finite");
        }
        if (sgd) {
            sgd->step(model.store());
        } else {
            adam->step(model.store());
        }
        MetricsRecord rec{step, mean_loss, std::nullopt};
        if (step % tcfg.eval_every == 0 || step == tcfg.steps) {
            rec.miou = evaluate(model, holdout).miou;
        }
        result.history.push_back(rec);
    }
    result.final_loss = result.history.back().loss;
    result.final_miou = result.history.back().miou.value();
    return result;
}

}  // namespace dflat
