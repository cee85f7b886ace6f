#pragma once

// AdamW with decoupled weight decay, warmup-cosine schedule and global-norm
// gradient clipping.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "comfe/errors.hpp"
#include "comfe/model.hpp"

namespace comfe {

using GradientBuffers = std::vector<std::vector<float>>;

// Linear ramp 0 -> base_lr over the first floor(warmup_fraction * total)
// steps, then half-cosine decay to 0 at total_steps.
inline double lr_at(std::size_t step, std::size_t total_steps, double base_lr, double warmup_fraction) {
    if (total_steps == 0) return 0.0;
    step = std::min(step, total_steps);
    const auto warmup = std::size_t(warmup_fraction * double(total_steps));
    if (step < warmup) return base_lr * double(step) / double(warmup);
    const double progress = double(step - warmup) / double(total_steps - warmup);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

inline double global_grad_norm(const GradientBuffers &grads, const std::vector<NamedParam> &names) {
    double sq = 0;
    for (std::size_t p = 0; p < grads.size(); ++p) {
        for (float g : grads[p]) {
            if (!std::isfinite(g)) {
                throw NumericError("non-finite gradient in " + (p < names.size() ? names[p].name : std::to_string(p)));
            }
            sq += double(g) * double(g);
        }
    }
    return std::sqrt(sq);
}

// Rescales all gradients so their global L2 norm is at most clip_norm.
// Returns the factor that was applied (1 when no clipping was needed).
inline double clip_gradients(GradientBuffers &grads, const std::vector<NamedParam> &names, double clip_norm) {
    if (!(clip_norm > 0)) throw ConfigError("clip_norm must be positive");
    const double norm = global_grad_norm(grads, names);
    if (norm <= clip_norm) return 1.0;
    const double factor = clip_norm / norm;
    for (auto &g : grads)
        for (auto &x : g) x = float(double(x) * factor);
    return factor;
}

struct AdamWHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

struct AdamWState {
    std::uint64_t step = 0;
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
};

// One AdamW update of a single buffer. `step` is the 1-based step number used
// for bias correction. Decay acts on the pre-update value.
inline void adamw_update(std::span<float> param, std::span<const float> grad, std::span<float> m, std::span<float> v,
                         std::uint64_t step, double lr, double weight_decay, const AdamWHyper &h) {
    const double bc1 = 1.0 - std::pow(h.beta1, double(step));
    const double bc2 = 1.0 - std::pow(h.beta2, double(step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        const double mi = h.beta1 * m[i] + (1.0 - h.beta1) * g;
        const double vi = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
        m[i] = float(mi);
        v[i] = float(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        const double p = param[i];
        param[i] = float(p - lr * mhat / (std::sqrt(vhat) + h.eps) - lr * weight_decay * p);
    }
}

inline AdamWState init_adamw(const HeadParams<Tensor<float>> &params) {
    AdamWState s;
    params.for_each([&](const std::string &, const Tensor<float> &t, ParamRole) {
        s.m.emplace_back(t.size(), 0.0f);
        s.v.emplace_back(t.size(), 0.0f);
    });
    return s;
}

// Applies one step to every parameter; weight decay reaches decoder
// projection matrices only.
inline void optimizer_step(HeadParams<Tensor<float>> &params, AdamWState &state, const GradientBuffers &grads,
                           double lr, const AdamWHyper &h) {
    ++state.step;
    std::size_t p = 0;
    params.for_each([&](const std::string &name, Tensor<float> &t, ParamRole role) {
        if (p >= grads.size() || grads[p].size() != t.size() || state.m[p].size() != t.size()) {
            throw DimensionError("optimizer buffers do not match parameter " + name);
        }
        adamw_update(t.data(), grads[p], state.m[p], state.v[p], state.step, lr, decays(role) ? h.weight_decay : 0.0,
                     h);
        ++p;
    });
}

}  // namespace comfe
