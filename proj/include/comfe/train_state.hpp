#pragma once

// Everything needed to resume or reproduce a training run.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "comfe/config.hpp"
#include "comfe/model.hpp"
#include "comfe/optimizer.hpp"

namespace comfe {

struct EpochMetrics {
    std::uint32_t epoch = 0;  // 1-based
    double train_loss = 0;
    double eval_accuracy = std::nan("");  // NaN when no eval set was given

    friend bool operator==(const EpochMetrics &a, const EpochMetrics &b) {
        auto same = [](double x, double y) { return x == y || (std::isnan(x) && std::isnan(y)); };
        return a.epoch == b.epoch && same(a.train_loss, b.train_loss) && same(a.eval_accuracy, b.eval_accuracy);
    }
};

struct TrainState {
    TrainConfig config;
    ComfeModel model;
    AdamWState optimizer;
    std::mt19937_64 rng;  // drives the per-epoch shuffle
    std::vector<EpochMetrics> history;
};

inline TrainState init_train_state(const TrainConfig &cfg) {
    cfg.validate();
    TrainState s;
    s.config = cfg;
    s.model = ComfeModel::init(cfg.model, cfg.seed);
    s.optimizer = init_adamw(s.model.params);
    s.rng.seed(cfg.seed);
    return s;
}

inline AdamWHyper adamw_hyper(const TrainConfig &cfg) {
    return {cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay};
}

}  // namespace comfe
