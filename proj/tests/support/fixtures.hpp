#pragma once

// Small randomized configurations shared by unit and acceptance tests.

#include <random>
#include <vector>

#include "comfe/losses.hpp"
#include "comfe/model.hpp"
#include "support/gradcheck.hpp"

namespace comfe::testkit {

// d ≤ 16, N_Z ≤ 8, N_P ≤ 3, c ≤ 3.
inline ModelConfig random_small_config(std::mt19937_64 &rng) {
    auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
    ModelConfig cfg;
    cfg.num_classes = pick(1, 3);
    cfg.heads = pick(1, 2);
    cfg.dim = cfg.heads * 2 * pick(1, 4);
    cfg.n_prototypes = pick(1, 3);
    cfg.per_class = pick(1, 2);
    cfg.n_background = pick(1, 3);
    cfg.background = pick(0, 3) != 0;
    cfg.layers = pick(1, 2);
    cfg.d_ff = pick(2, 8);
    cfg.carl_form = pick(0, 1) ? CarlForm::dot : CarlForm::literal;
    return cfg;
}

inline HeadParams<Tensor<double>> to_double(const HeadParams<Tensor<float>> &p) {
    return map_params<Tensor<double>>(p, [](const std::string &, const Tensor<float> &t, ParamRole) {
        return t.cast<double>();
    });
}

inline std::vector<Tensor<double>> flatten(const HeadParams<Tensor<double>> &p) {
    std::vector<Tensor<double>> out;
    p.for_each([&](const std::string &, const Tensor<double> &t, ParamRole) { out.push_back(t); });
    return out;
}

inline HeadParams<Var<double>> rebuild(const HeadParams<Tensor<double>> &layout, const std::vector<Var<double>> &vars) {
    std::size_t i = 0;
    return map_params<Var<double>>(layout, [&](const std::string &, const Tensor<double> &, ParamRole) {
        return vars[i++];
    });
}

struct LossGradCase {
    ModelConfig cfg;
    HeadParams<Tensor<double>> params;
    Tensor<double> phi;
    std::vector<Tensor<double>> views, paired;
    std::vector<std::size_t> labels;
};

inline LossGradCase random_loss_case(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    LossGradCase c;
    c.cfg = random_small_config(rng);
    auto model = ComfeModel::init(c.cfg, seed);
    c.params = to_double(model.params);
    // Perturb gains and biases away from their trivial initial values.
    c.params.for_each([&](const std::string &, Tensor<double> &t, ParamRole role) {
        if (role == ParamRole::norm_gain || role == ParamRole::norm_bias || role == ParamRole::bias) {
            for (auto &v : t.data()) v += 0.2 * std::normal_distribution<double>()(rng);
        }
    });
    c.phi = model.phi;
    const std::size_t batch = std::uniform_int_distribution<std::size_t>(1, 2)(rng);
    const std::size_t nz = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
    for (std::size_t b = 0; b < batch; ++b) {
        c.views.push_back(random_tensor({nz, c.cfg.dim}, rng));
        c.paired.push_back(random_tensor({nz, c.cfg.dim}, rng));
        c.labels.push_back(std::uniform_int_distribution<std::size_t>(0, c.cfg.num_classes - 1)(rng));
    }
    return c;
}

// Central-difference check of the full batch objective with respect to every
// learnable parameter.
inline GradCheck total_loss_gradcheck(const LossGradCase &c, double h = 1e-6) {
    std::vector<ExampleRef<double>> batch;
    for (std::size_t i = 0; i < c.views.size(); ++i) batch.push_back({&c.views[i], &c.paired[i], c.labels[i]});
    auto f = [&](Tape<double> &tape, const std::vector<Var<double>> &v) {
        return batch_loss(tape, rebuild(c.params, v), tape.constant(c.phi), batch, c.cfg).total;
    };
    return check_gradients(f, flatten(c.params), h);
}

// Largest gap between each weighted loss term and the mean of the same term
// recomputed layer by layer from the raw decoder outputs.
inline double layer_average_discrepancy(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ModelConfig cfg;
    cfg.num_classes = 3;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.layers = 3;
    cfg.n_prototypes = 3;
    const auto model = ComfeModel::init(cfg, seed);
    const auto params = to_double(model.params);
    const auto view = random_tensor({6, 8}, rng);
    const auto paired = random_tensor({6, 8}, rng);
    const std::size_t label = seed % 3;

    Tape<double> tape;
    auto bound = bind_params<double>(tape, params, false);
    auto phi = tape.constant(model.phi);
    auto terms = image_loss(tape, bound, phi, ExampleRef<double>{&view, &paired, label}, cfg);

    auto target = tape.constant(extend_label(label, cfg.layout()).as_row<double>());
    auto za = l2_normalize_rows(tape.constant(view));
    auto zb = l2_normalize_rows(tape.constant(paired));
    auto la = decoder_forward(za, bound.queries, bound.decoder, decoder_config(cfg));
    auto lb = decoder_forward(zb, bound.queries, bound.decoder, decoder_config(cfg));
    auto c_hat = l2_normalize_rows(bound.class_prototypes);
    double cl = 0, di = 0, pd = 0, co = 0, ca = 0;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        auto p = l2_normalize_rows(la[l]);
        auto pa = patch_to_prototype_posterior(za, p, 0.1);
        auto pc = prototype_to_class_posterior(p, c_hat, phi, 0.02);
        cl += cluster_loss(za, p, 0.1).item();
        di += bce_loss(target, image_label_scores(patch_class_posterior(pa, pc)).values).item();
        pd += bce_loss(target, image_label_scores(pc).values).item();
        co += contrast_term(c_hat, 0.02).item() + contrast_term(p, 0.02).item();
        auto pb = patch_to_prototype_posterior(zb, l2_normalize_rows(lb[l]), 0.1);
        ca += carl_loss(pa, pb).item();
    }
    const double n = double(cfg.layers);
    const double gaps[] = {terms.cluster.item() - cl / n, terms.discrim.item() - di / n,
                           terms.p_discrim.item() - pd / n, terms.contrast.item() - co / n,
                           terms.carl.item() - ca / n, terms.total.item() - (cl + di + pd + co + ca) / n};
    double worst = 0;
    for (double g : gaps) worst = std::max(worst, std::abs(g));
    return worst;
}

}  // namespace comfe::testkit
