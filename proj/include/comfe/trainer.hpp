#pragma once

// Minibatch training loop: shuffle, per-image forward/backward, ordered
// gradient reduction, clipping, AdamW and the warmup-cosine schedule.

#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>
#include <vector>

#include "comfe/dataset.hpp"
#include "comfe/errors.hpp"
#include "comfe/evaluate.hpp"
#include "comfe/losses.hpp"
#include "comfe/optimizer.hpp"
#include "comfe/train_state.hpp"

namespace comfe {

struct ItemGradient {
    GradientBuffers grads;
    LossBreakdown loss;
};

// Loss and parameter gradients of a single image.
inline ItemGradient item_gradient(const ComfeModel &model, const ExampleRef<float> &ex,
                                  std::mt19937_64 *dropout_rng = nullptr) {
    Tape<float> tape;
    auto params = bind_params<float>(tape, model.params, true);
    auto phi = tape.constant(model.phi.cast<float>());
    auto terms = image_loss(tape, params, phi, ex, model.config, dropout_rng);
    if (!std::isfinite(terms.total.item())) throw NumericError("non-finite loss");
    tape.backward(terms.total);
    ItemGradient out;
    out.loss = LossBreakdown::from(terms);
    params.for_each([&](const std::string &, const Var<float> &v, ParamRole) {
        out.grads.push_back(tape.grad_of(v).storage());
    });
    return out;
}

// Mean loss and gradient over a batch. Per-item results are summed in batch
// order, so the result does not depend on the thread count.
inline ItemGradient batch_gradient(const ComfeModel &model, const EmbeddingDataset &ds,
                                   const std::vector<std::size_t> &items, std::uint64_t seed, std::uint64_t step,
                                   std::size_t threads = 1) {
    if (items.empty()) throw DataError("empty batch");
    std::vector<ItemGradient> per_item(items.size());
    auto work = [&](std::size_t i) {
        std::mt19937_64 *rng = nullptr;
        std::mt19937_64 local;
        if (model.config.dropout > 0) {
            std::seed_seq seq{std::uint64_t(seed), std::uint64_t(step), std::uint64_t(items[i])};
            local.seed(seq);
            rng = &local;
        }
        per_item[i] = item_gradient(model, ds.example(items[i]), rng);
    };
    if (threads <= 1) {
        for (std::size_t i = 0; i < items.size(); ++i) work(i);
    } else {
        std::vector<std::exception_ptr> errors(threads);
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                try {
                    for (std::size_t i = t; i < items.size(); i += threads) work(i);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
        for (auto &th : pool) th.join();
        for (auto &e : errors)
            if (e) std::rethrow_exception(e);
    }
    ItemGradient out = std::move(per_item[0]);
    for (std::size_t i = 1; i < per_item.size(); ++i) {
        out.loss += per_item[i].loss;
        for (std::size_t p = 0; p < out.grads.size(); ++p) {
            auto &dst = out.grads[p];
            const auto &src = per_item[i].grads[p];
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        }
    }
    const float inv = 1.0f / float(items.size());
    for (auto &g : out.grads)
        for (auto &x : g) x *= inv;
    out.loss *= 1.0 / double(items.size());
    return out;
}

inline std::size_t steps_per_epoch(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

inline void check_training_data(const EmbeddingDataset &ds, const ModelConfig &cfg, const char *what) {
    ds.validate();
    if (ds.size() == 0) throw DataError(std::string(what) + " set is empty");
    if (ds.num_classes != cfg.num_classes) {
        throw DataError(std::string(what) + " set has " + std::to_string(ds.num_classes) + " classes, config has " +
                        std::to_string(cfg.num_classes));
    }
    if (ds.dim != cfg.dim) {
        throw DataError(std::string(what) + " set has width " + std::to_string(ds.dim) + ", config has " +
                        std::to_string(cfg.dim));
    }
}

// Fills num_classes/dim from the data when they were left at zero.
inline TrainConfig resolve_config(TrainConfig cfg, const EmbeddingDataset &ds) {
    if (cfg.model.num_classes == 0) cfg.model.num_classes = ds.num_classes;
    if (cfg.model.dim == 0) cfg.model.dim = ds.dim;
    return cfg;
}

// Continues training `state` for its configured number of epochs.
inline void run_epochs(TrainState &state, const EmbeddingDataset &train_ds, const EmbeddingDataset *eval_ds,
                       std::ostream *log) {
    const auto &cfg = state.config;
    const std::size_t n = train_ds.size();
    const std::size_t per_epoch = steps_per_epoch(n, cfg.batch_size);
    const std::size_t total = per_epoch * cfg.epochs;
    const auto hyper = adamw_hyper(cfg);
    const auto names = param_names(state.model.params);
    std::vector<std::size_t> order(n);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t(0));
        for (std::size_t i = n; i > 1; --i) {
            std::uniform_int_distribution<std::size_t> pick(0, i - 1);
            std::swap(order[i - 1], order[pick(state.rng)]);
        }
        double epoch_loss = 0;
        for (std::size_t b = 0; b < per_epoch; ++b) {
            const std::vector<std::size_t> items(order.begin() + b * cfg.batch_size,
                                                 order.begin() + std::min(n, (b + 1) * cfg.batch_size));
            const std::size_t step = state.optimizer.step;
            auto g = batch_gradient(state.model, train_ds, items, cfg.seed, step, cfg.threads);
            clip_gradients(g.grads, names, cfg.clip_norm);
            const double lr = lr_at(step, total, cfg.base_lr, cfg.warmup_fraction);
            optimizer_step(state.model.params, state.optimizer, g.grads, lr, hyper);
            epoch_loss += g.loss.total * double(items.size());
            if (log) {
                char buf[256];
                std::snprintf(buf, sizeof buf,
                              "step=%zu lr=%.6g cluster=%.6f discrim=%.6f p_discrim=%.6f contrast=%.6f carl=%.6f "
                              "total=%.6f\n",
                              step + 1, lr, g.loss.cluster, g.loss.discrim, g.loss.p_discrim, g.loss.contrast,
                              g.loss.carl, g.loss.total);
                *log << buf;
            }
        }
        EpochMetrics m;
        m.epoch = std::uint32_t(state.history.size() + 1);
        m.train_loss = epoch_loss / double(n);
        if (eval_ds) m.eval_accuracy = accuracy(state.model, *eval_ds);
        state.history.push_back(m);
        if (log) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "epoch=%u train_loss=%.6f eval_acc=%.6f\n", m.epoch, m.train_loss,
                          m.eval_accuracy);
            *log << buf << std::flush;
        }
    }
}

// Validates everything up front, initializes from cfg.seed and trains.
inline TrainState train(const EmbeddingDataset &train_ds, const TrainConfig &config,
                        const EmbeddingDataset *eval_ds = nullptr, std::ostream *log = nullptr) {
    const auto cfg = resolve_config(config, train_ds);
    cfg.validate();
    check_training_data(train_ds, cfg.model, "training");
    if (eval_ds) check_training_data(*eval_ds, cfg.model, "evaluation");
    auto state = init_train_state(cfg);
    run_epochs(state, train_ds, eval_ds, log);
    return state;
}

}  // namespace comfe
