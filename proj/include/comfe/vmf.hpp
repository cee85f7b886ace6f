#pragma once

// Posterior computations of the hierarchical von-Mises-Fisher mixture.
//
// All densities enter only through their log-kernel x·mu/tau; the normalizer
// C_d(tau) cancels inside every softmax and is never evaluated.
//
// Each operation exists twice: on tape variables (used by training, so it is
// differentiable) and on plain tensors (used by inference and tests). The
// plain overloads validate their inputs and evaluate through a throwaway tape,
// so there is exactly one numeric implementation.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "comfe/errors.hpp"
#include "comfe/tensor.hpp"

namespace comfe {

inline constexpr double kUnitTolerance = 1e-5;
inline constexpr double kRowSumTolerance = 1e-6;

template <typename T>
void require_unit_rows(const Tensor<T> &x, const char *what, double tol = kUnitTolerance) {
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double s = 0;
        for (auto v : x.row(i)) s += double(v) * double(v);
        if (std::abs(std::sqrt(s) - 1.0) > tol) {
            throw NormalizationError(std::string(what) + " row " + std::to_string(i) + " has norm " +
                                     std::to_string(std::sqrt(s)));
        }
    }
}

template <typename T>
void require_stochastic_rows(const Tensor<T> &phi, double tol = kRowSumTolerance) {
    for (std::size_t i = 0; i < phi.rows(); ++i) {
        double s = 0;
        for (auto v : phi.row(i)) s += double(v);
        if (std::abs(s - 1.0) > tol) {
            throw AssociationError("row " + std::to_string(i) + " sums to " + std::to_string(s));
        }
    }
}

// Log-density of a vMF kernel up to the additive log C_d(tau).
template <typename T>
double vmf_log_kernel(std::span<const T> x_hat, std::span<const T> mu_hat, double tau) {
    if (x_hat.size() != mu_hat.size()) {
        throw DimensionError("vmf_log_kernel: vector lengths " + std::to_string(x_hat.size()) + " and " +
                             std::to_string(mu_hat.size()));
    }
    if (!(tau > 0)) throw ConfigError("vmf_log_kernel: tau must be positive");
    double nx = 0, nm = 0, dot = 0;
    for (std::size_t i = 0; i < x_hat.size(); ++i) {
        nx += double(x_hat[i]) * double(x_hat[i]);
        nm += double(mu_hat[i]) * double(mu_hat[i]);
        dot += double(x_hat[i]) * double(mu_hat[i]);
    }
    if (std::abs(std::sqrt(nx) - 1.0) > kUnitTolerance || std::abs(std::sqrt(nm) - 1.0) > kUnitTolerance) {
        throw NormalizationError("vmf_log_kernel expects unit vectors");
    }
    return dot / tau;
}

// ---------------------------------------------------------------- tape form

// p(P_j | Z_i): row-wise softmax of Ẑ·P̂ᵀ / tau1.   [N_Z × N_P]
template <typename T>
Var<T> patch_to_prototype_posterior(const Var<T> &z_hat, const Var<T> &p_hat, T tau1) {
    return softmax(matmul_nt(z_hat, p_hat), 1, tau1);
}

// Raw similarity softmax of each image prototype over the class prototypes.  [N_P × M]
template <typename T>
Var<T> prototype_similarity(const Var<T> &p_hat, const Var<T> &c_hat, T tau2) {
    return softmax(matmul_nt(p_hat, c_hat), 1, tau2);
}

// p(nu | P_j): prototype softmax aggregated into label space by phi.  [N_P × L]
template <typename T>
Var<T> prototype_to_class_posterior(const Var<T> &p_hat, const Var<T> &c_hat, const Var<T> &phi, T tau2) {
    if (phi.rows() != c_hat.rows()) {
        throw DimensionError("association matrix " + shape_str(phi.shape()) + " does not match " +
                             std::to_string(c_hat.rows()) + " class prototypes");
    }
    return matmul(prototype_similarity(p_hat, c_hat, tau2), phi);
}

// p(nu | Z_i) with image prototypes marginalized out.  [N_Z × L]
template <typename T>
Var<T> patch_class_posterior(const Var<T> &patch_to_prototype, const Var<T> &prototype_to_class) {
    return matmul(patch_to_prototype, prototype_to_class);
}

// Max-pool over rows: per-label image score plus the row that attained it.
template <typename T>
MaxAlong<T> image_label_scores(const Var<T> &posterior) {
    return max_along(posterior, 0);
}

// ---------------------------------------------------------------- plain form

template <typename T>
Tensor<T> patch_to_prototype_posterior(const Tensor<T> &z_hat, const Tensor<T> &p_hat, double tau1) {
    require_unit_rows(z_hat, "patch embedding");
    require_unit_rows(p_hat, "image prototype");
    Tape<T> tape;
    return patch_to_prototype_posterior(tape.constant(z_hat), tape.constant(p_hat), T(tau1)).value();
}

template <typename T>
Tensor<T> prototype_to_class_posterior(const Tensor<T> &p_hat, const Tensor<T> &c_hat, const Tensor<T> &phi,
                                       double tau2) {
    require_unit_rows(p_hat, "image prototype");
    require_unit_rows(c_hat, "class prototype");
    require_stochastic_rows(phi);
    Tape<T> tape;
    return prototype_to_class_posterior(tape.constant(p_hat), tape.constant(c_hat), tape.constant(phi), T(tau2))
        .value();
}

template <typename T>
Tensor<T> patch_class_posterior(const Tensor<T> &z_hat, const Tensor<T> &p_hat, const Tensor<T> &c_hat,
                                const Tensor<T> &phi, double tau1, double tau2) {
    require_unit_rows(z_hat, "patch embedding");
    require_unit_rows(p_hat, "image prototype");
    require_unit_rows(c_hat, "class prototype");
    require_stochastic_rows(phi);
    Tape<T> tape;
    auto pz = patch_to_prototype_posterior(tape.constant(z_hat), tape.constant(p_hat), T(tau1));
    auto pc = prototype_to_class_posterior(tape.constant(p_hat), tape.constant(c_hat), tape.constant(phi), T(tau2));
    return patch_class_posterior(pz, pc).value();
}

template <typename T>
struct LabelScores {
    std::vector<T> scores;
    std::vector<std::size_t> argmax;  // patch index attaining each score
};

template <typename T>
LabelScores<T> image_label_scores(const Tensor<T> &posterior) {
    Tape<T> tape;
    auto pooled = image_label_scores(tape.constant(posterior));
    const auto v = pooled.values.value().data();
    return {std::vector<T>(v.begin(), v.end()), std::move(pooled.indices)};
}

}  // namespace comfe
