#pragma once

// Training objective: clustering, discriminative, prototype-discriminative,
// contrastive and view-consistency terms, evaluated after every decoder layer
// and averaged.

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "comfe/config.hpp"
#include "comfe/decoder.hpp"
#include "comfe/model.hpp"
#include "comfe/prototypes.hpp"
#include "comfe/tensor.hpp"
#include "comfe/vmf.hpp"

namespace comfe {

// Scores are clamped to [eps, 1 - eps] before any log.
inline constexpr double kScoreEps = 1e-7;
// Floor for the view-agreement mass inside the CARL log.
inline constexpr double kAgreementFloor = 1e-30;

// -(1/N_Z) Σ_i log Σ_j exp(Ẑ_i·P̂_j / tau1). The vMF normalizer and the
// uniform prototype prior only shift this by a constant and are dropped.
template <typename T>
Var<T> cluster_loss(const Var<T> &z_hat, const Var<T> &p_hat, T tau1) {
    return -mean(log_sum_exp(matmul_nt(z_hat, p_hat), 1, tau1));
}

// Multi-label binary cross-entropy summed over labels.
template <typename T>
Var<T> bce_loss(const Var<T> &target, const Var<T> &scores) {
    if (target.size() != scores.size()) {
        throw DimensionError("bce: target " + shape_str(target.shape()) + " vs scores " + shape_str(scores.shape()));
    }
    auto s = clamp(scores, T(kScoreEps), T(1.0 - kScoreEps));
    auto &tape = target.tape();
    Tensor<T> inv(target.shape());
    for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = T(1) - target.value()[i];
    auto pos = mul(target, log(s));
    auto neg = mul(tape.constant(std::move(inv)), log(affine(s, T(-1), T(1))));
    return -sum(add(pos, neg));
}

template <typename T>
Var<T> discrim_loss(const Var<T> &target, const Var<T> &patch_scores) {
    return bce_loss(target, patch_scores);
}

// Same BCE on prototype-level max-pooled scores.
template <typename T>
Var<T> p_discrim_loss(const Var<T> &target, const Var<T> &prototype_scores) {
    return bce_loss(target, prototype_scores);
}

// -Σ_i log softmax_j(X̂_i·X̂_j / tau)[i] for one set of unit rows.
template <typename T>
Var<T> contrast_term(const Var<T> &x_hat, T tau_c) {
    auto logp = log_softmax(matmul_nt(x_hat, x_hat), 1, tau_c);
    auto diag = x_hat.tape().constant(Tensor<T>::identity(x_hat.rows()));
    return -sum(mul(logp, diag));
}

template <typename T>
Var<T> contrast_loss(const Var<T> &p_hat, const Var<T> &c_hat, T tau_c) {
    return add(contrast_term(c_hat, tau_c), contrast_term(p_hat, tau_c));
}

// Agreement between the patch-to-prototype posteriors of two views.
//   dot:     -(1/N_Z) Σ_i log Σ_j a_ij b_ij
//   literal: -(1/N_Z) Σ_i Σ_j log(a_ij b_ij)
template <typename T>
Var<T> carl_loss(const Var<T> &post_a, const Var<T> &post_b, CarlForm form = CarlForm::dot) {
    if (post_a.shape() != post_b.shape()) {
        throw DimensionError("carl: posterior shapes " + shape_str(post_a.shape()) + " and " +
                             shape_str(post_b.shape()) + " differ");
    }
    const T rows = T(post_a.rows());
    if (form == CarlForm::dot) {
        auto agreement = sum_along(mul(post_a, post_b), 1);
        auto floored = clamp(agreement, T(kAgreementFloor), std::numeric_limits<T>::max());
        return affine(sum(log(floored)), T(-1) / rows);
    }
    const T hi = std::numeric_limits<T>::max();
    auto la = log(clamp(post_a, T(kAgreementFloor), hi));
    auto lb = log(clamp(post_b, T(kAgreementFloor), hi));
    return affine(sum(add(la, lb)), T(-1) / rows);
}

template <typename T>
struct LossTerms {
    Var<T> cluster, discrim, p_discrim, contrast, carl, total;
};

struct LossBreakdown {
    double cluster = 0, discrim = 0, p_discrim = 0, contrast = 0, carl = 0, total = 0;

    LossBreakdown &operator+=(const LossBreakdown &o) {
        cluster += o.cluster;
        discrim += o.discrim;
        p_discrim += o.p_discrim;
        contrast += o.contrast;
        carl += o.carl;
        total += o.total;
        return *this;
    }
    LossBreakdown &operator*=(double s) {
        cluster *= s;
        discrim *= s;
        p_discrim *= s;
        contrast *= s;
        carl *= s;
        total *= s;
        return *this;
    }

    template <typename T>
    static LossBreakdown from(const LossTerms<T> &t) {
        return {double(t.cluster.item()), double(t.discrim.item()), double(t.p_discrim.item()),
                double(t.contrast.item()), double(t.carl.item()),     double(t.total.item())};
    }
};

// One training example as seen by the loss: patch embeddings, an optional
// paired view with identical patch indexing, and the class index.
template <typename T>
struct ExampleRef {
    const Tensor<T> *view = nullptr;
    const Tensor<T> *paired = nullptr;
    std::size_t label = 0;
};

// Every loss term for one image, averaged over decoder layers and weighted.
template <typename T>
LossTerms<T> image_loss(Tape<T> &tape, const HeadParams<Var<T>> &params, const Var<T> &phi, const ExampleRef<T> &ex,
                        const ModelConfig &cfg, std::mt19937_64 *dropout_rng = nullptr) {
    const auto layout = cfg.layout();
    const auto dcfg = decoder_config(cfg);
    const T tau1 = T(cfg.tau1), tau2 = T(cfg.tau2), tau_c = T(cfg.tau_c);
    const auto target = tape.constant(extend_label(ex.label, layout).template as_row<T>());
    if (phi.cols() != target.cols()) {
        throw DimensionError("association matrix has " + std::to_string(phi.cols()) + " labels, target has " +
                             std::to_string(target.cols()));
    }

    auto z_hat = l2_normalize_rows(tape.constant(*ex.view));
    auto layers = decoder_forward(z_hat, params.queries, params.decoder, dcfg, dropout_rng);
    std::optional<Var<T>> z_hat_b;
    std::vector<Var<T>> layers_b;
    const bool use_carl = ex.paired != nullptr && cfg.weights.carl != 0.0;
    if (use_carl) {
        if (ex.paired->shape() != ex.view->shape()) {
            throw DimensionError("paired view " + shape_str(ex.paired->shape()) + " does not match " +
                                 shape_str(ex.view->shape()));
        }
        z_hat_b = l2_normalize_rows(tape.constant(*ex.paired));
        layers_b = decoder_forward(*z_hat_b, params.queries, params.decoder, dcfg, dropout_rng);
    }
    auto c_hat = l2_normalize_rows(params.class_prototypes);
    auto class_contrast = contrast_term(c_hat, tau_c);

    std::vector<Var<T>> cl, di, pd, co, ca;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto p_hat = l2_normalize_rows(layers[l]);
        auto patch_proto = patch_to_prototype_posterior(z_hat, p_hat, tau1);
        auto proto_class = prototype_to_class_posterior(p_hat, c_hat, phi, tau2);
        auto patch_class = patch_class_posterior(patch_proto, proto_class);

        cl.push_back(cluster_loss(z_hat, p_hat, tau1));
        di.push_back(discrim_loss(target, image_label_scores(patch_class).values));
        pd.push_back(p_discrim_loss(target, image_label_scores(proto_class).values));
        co.push_back(add(class_contrast, contrast_term(p_hat, tau_c)));
        if (use_carl) {
            auto p_hat_b = l2_normalize_rows(layers_b[l]);
            auto patch_proto_b = patch_to_prototype_posterior(*z_hat_b, p_hat_b, tau1);
            ca.push_back(carl_loss(patch_proto, patch_proto_b, cfg.carl_form));
        }
    }

    auto layer_mean = [&](const std::vector<Var<T>> &terms, double weight) {
        if (terms.empty()) return tape.constant(Tensor<T>({1}));
        Var<T> acc = terms.front();
        for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
        return affine(acc, T(weight) / T(terms.size()));
    };
    LossTerms<T> out;
    out.cluster = layer_mean(cl, cfg.weights.cluster);
    out.discrim = layer_mean(di, cfg.weights.discrim);
    out.p_discrim = layer_mean(pd, cfg.weights.p_discrim);
    out.contrast = layer_mean(co, cfg.weights.contrast);
    out.carl = layer_mean(ca, cfg.weights.carl);
    out.total = add(add(add(add(out.cluster, out.discrim), out.p_discrim), out.contrast), out.carl);
    return out;
}

// Batch-mean of the per-image objective on one tape.
template <typename T>
LossTerms<T> batch_loss(Tape<T> &tape, const HeadParams<Var<T>> &params, const Var<T> &phi,
                        const std::vector<ExampleRef<T>> &batch, const ModelConfig &cfg) {
    if (batch.empty()) throw DataError("empty batch");
    LossTerms<T> acc;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        auto t = image_loss(tape, params, phi, batch[i], cfg);
        if (i == 0) {
            acc = t;
        } else {
            acc.cluster = add(acc.cluster, t.cluster);
            acc.discrim = add(acc.discrim, t.discrim);
            acc.p_discrim = add(acc.p_discrim, t.p_discrim);
            acc.contrast = add(acc.contrast, t.contrast);
            acc.carl = add(acc.carl, t.carl);
            acc.total = add(acc.total, t.total);
        }
    }
    const T s = T(1) / T(batch.size());
    return {affine(acc.cluster, s), affine(acc.discrim, s), affine(acc.p_discrim, s),
            affine(acc.contrast, s), affine(acc.carl, s),    affine(acc.total, s)};
}

// Loss breakdown of a batch under the stored (float) model parameters.
inline LossBreakdown total_loss(const std::vector<ExampleRef<float>> &batch, const ComfeModel &model) {
    Tape<float> tape;
    auto params = bind_params<float>(tape, model.params, false);
    auto phi = tape.constant(model.phi.cast<float>());
    return LossBreakdown::from(batch_loss(tape, params, phi, batch, model.config));
}

}  // namespace comfe
