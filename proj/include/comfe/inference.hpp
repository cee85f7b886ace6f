#pragma once

// Prediction and explanation artifacts for a trained head.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "comfe/dataset.hpp"
#include "comfe/errors.hpp"
#include "comfe/model.hpp"
#include "comfe/tensor.hpp"
#include "comfe/vmf.hpp"

namespace comfe {

struct ForwardResult {
    std::vector<Tensor<float>> layer_prototypes;  // raw P after each decoder layer
    Tensor<float> z_hat;                          // N_Z × d
    Tensor<float> p_hat;                          // final layer, N_P × d
    Tensor<float> c_hat;                          // M × d
    Tensor<float> patch_to_prototype;             // N_Z × N_P
    Tensor<float> prototype_similarity;           // N_P × M, raw softmax over class prototypes
    Tensor<float> prototype_to_class;             // N_P × L
    Tensor<float> patch_to_class;                 // N_Z × L
    LabelScores<float> scores;                    // max-pooled over patches
};

// Evaluates the head on one image's patch embeddings; every explanation is
// read off the final decoder layer.
inline ForwardResult run_forward(const ComfeModel &model, const Tensor<float> &patches) {
    validate_model(model);
    if (patches.rank() != 2 || patches.cols() != model.config.dim) {
        throw DimensionError("patch embeddings " + shape_str(patches.shape()) + " do not have width " +
                             std::to_string(model.config.dim));
    }
    const auto &cfg = model.config;
    Tape<float> tape;
    auto params = bind_params<float>(tape, model.params, false);
    auto phi = tape.constant(model.phi.cast<float>());
    auto z_hat = l2_normalize_rows(tape.constant(patches));
    auto layers = decoder_forward(z_hat, params.queries, params.decoder, decoder_config(cfg));
    auto p_hat = l2_normalize_rows(layers.back());
    auto c_hat = l2_normalize_rows(params.class_prototypes);
    auto pz = patch_to_prototype_posterior(z_hat, p_hat, float(cfg.tau1));
    auto sim = prototype_similarity(p_hat, c_hat, float(cfg.tau2));
    auto pc = matmul(sim, phi);
    auto patch_class = patch_class_posterior(pz, pc);

    ForwardResult r;
    for (const auto &l : layers) r.layer_prototypes.push_back(l.value());
    r.z_hat = z_hat.value();
    r.p_hat = p_hat.value();
    r.c_hat = c_hat.value();
    r.patch_to_prototype = pz.value();
    r.prototype_similarity = sim.value();
    r.prototype_to_class = pc.value();
    r.patch_to_class = patch_class.value();
    r.scores = image_label_scores(r.patch_to_class);
    return r;
}

struct Prediction {
    std::optional<std::size_t> label;  // empty means "background / no class"
    std::size_t best_foreground = 0;
    std::vector<float> scores;  // length L; background score last when enabled
};

// Arg-max over foreground labels only (lowest index on ties). With a
// threshold t, a class is reported only when its score exceeds t.
inline Prediction predict_from_scores(const std::vector<float> &scores, std::size_t num_classes,
                                      std::optional<double> threshold = std::nullopt) {
    Prediction p;
    p.scores = scores;
    for (std::size_t l = 1; l < num_classes; ++l) {
        if (scores[l] > scores[p.best_foreground]) p.best_foreground = l;
    }
    if (!threshold || double(scores[p.best_foreground]) > *threshold) p.label = p.best_foreground;
    return p;
}

inline Prediction predict(const ComfeModel &model, const Tensor<float> &patches,
                          std::optional<double> threshold = std::nullopt) {
    const auto r = run_forward(model, patches);
    return predict_from_scores(r.scores.scores, model.config.num_classes, threshold);
}

inline void require_grid(std::size_t n_patches, std::size_t grid_h, std::size_t grid_w) {
    if (grid_h * grid_w != n_patches) {
        throw DimensionError("grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) + " does not hold " +
                             std::to_string(n_patches) + " patches");
    }
}

// Per-patch posterior of `label`, laid out on the patch grid.
inline Tensor<float> class_confidence_map(const ForwardResult &r, std::size_t label, std::size_t grid_h,
                                          std::size_t grid_w) {
    const auto &post = r.patch_to_class;
    require_grid(post.rows(), grid_h, grid_w);
    if (label >= post.cols()) {
        throw LabelError("label " + std::to_string(label) + " outside [0, " + std::to_string(post.cols()) + ")");
    }
    Tensor<float> grid({grid_h, grid_w});
    for (std::size_t i = 0; i < post.rows(); ++i) grid[i] = post(i, label);
    return grid;
}

inline Tensor<float> class_confidence_map(const ComfeModel &model, const Tensor<float> &patches, std::size_t label,
                                          std::size_t grid_h, std::size_t grid_w) {
    return class_confidence_map(run_forward(model, patches), label, grid_h, grid_w);
}

// Index of the image prototype most likely to have generated each patch.
inline Tensor<std::uint32_t> component_feature_map(const ForwardResult &r, std::size_t grid_h, std::size_t grid_w) {
    const auto &post = r.patch_to_prototype;
    require_grid(post.rows(), grid_h, grid_w);
    Tensor<std::uint32_t> grid({grid_h, grid_w});
    for (std::size_t i = 0; i < post.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < post.cols(); ++j) {
            if (post(i, j) > post(i, best)) best = j;
        }
        grid[i] = std::uint32_t(best);
    }
    return grid;
}

inline Tensor<std::uint32_t> component_feature_map(const ComfeModel &model, const Tensor<float> &patches,
                                                   std::size_t grid_h, std::size_t grid_w) {
    return component_feature_map(run_forward(model, patches), grid_h, grid_w);
}

// Label-space similarity of each image prototype: softmax over class
// prototypes aggregated through phi.
inline Tensor<float> similarity_scores(const Tensor<float> &p_hat, const ClassPrototypeBank &bank, double tau2) {
    Tape<float> tape;
    auto c_hat = l2_normalize_rows(tape.constant(bank.prototypes));
    return prototype_to_class_posterior(p_hat, c_hat.value(), bank.phi.cast<float>(), tau2);
}

struct Explanation {
    Prediction prediction;
    std::vector<float> class_scores;
    std::size_t grid_h = 0, grid_w = 0;
    Tensor<float> confidence_map;          // predicted (best foreground) label
    Tensor<std::uint32_t> feature_map;     // prototype index per patch
    Tensor<float> similarity;              // N_P × L
    Tensor<float> prototype_similarity;    // N_P × M raw softmax entries
};

inline Explanation explain(const ComfeModel &model, const Tensor<float> &patches, std::size_t grid_h,
                           std::size_t grid_w, std::optional<double> threshold = std::nullopt) {
    const auto r = run_forward(model, patches);
    Explanation e;
    e.prediction = predict_from_scores(r.scores.scores, model.config.num_classes, threshold);
    e.class_scores = r.scores.scores;
    e.grid_h = grid_h;
    e.grid_w = grid_w;
    e.confidence_map = class_confidence_map(r, e.prediction.best_foreground, grid_h, grid_w);
    e.feature_map = component_feature_map(r, grid_h, grid_w);
    e.similarity = r.prototype_to_class;
    e.prototype_similarity = r.prototype_similarity;
    return e;
}

// ---------------------------------------------------------------- exemplars

struct ExemplarEntry {
    std::size_t image = 0;
    std::size_t slot = 0;  // image-prototype row
    double cosine = 0;

    friend bool operator==(const ExemplarEntry &, const ExemplarEntry &) = default;
};

// Orders by similarity, then image, then slot.
inline bool exemplar_before(const ExemplarEntry &a, const ExemplarEntry &b) {
    if (a.cosine != b.cosine) return a.cosine > b.cosine;
    if (a.image != b.image) return a.image < b.image;
    return a.slot < b.slot;
}

struct ExemplarIndex {
    std::size_t k = 0;
    std::vector<std::size_t> prototype_label;               // label each class prototype is tied to
    std::vector<std::vector<ExemplarEntry>> per_prototype;  // sorted best-first
};

inline double cosine_similarity(std::span<const float> a, std::span<const float> b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += double(a[i]) * double(b[i]);
        na += double(a[i]) * double(a[i]);
        nb += double(b[i]) * double(b[i]);
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// For each class prototype, the k final-layer image prototypes of the
// training set with the highest cosine similarity.
inline ExemplarIndex extract_exemplars(const ComfeModel &model, const EmbeddingDataset &train, std::size_t k) {
    if (train.images.empty()) throw DataError("exemplar extraction needs a non-empty training set");
    if (k < 1) throw ConfigError("k must be at least 1");
    const auto &C = model.params.class_prototypes;
    const std::size_t M = C.rows();

    // Min-heap of the current best k per class prototype; top() is the worst kept entry.
    auto worse_first = [](const ExemplarEntry &a, const ExemplarEntry &b) { return exemplar_before(a, b); };
    using Heap = std::priority_queue<ExemplarEntry, std::vector<ExemplarEntry>, decltype(worse_first)>;
    std::vector<Heap> heaps(M, Heap(worse_first));

    for (std::size_t i = 0; i < train.images.size(); ++i) {
        const auto r = run_forward(model, train.images[i].view);
        const auto &P = r.layer_prototypes.back();
        for (std::size_t j = 0; j < P.rows(); ++j) {
            for (std::size_t m = 0; m < M; ++m) {
                ExemplarEntry e{i, j, cosine_similarity(P.row(j), C.row(m))};
                auto &h = heaps[m];
                if (h.size() < k) {
                    h.push(e);
                } else if (exemplar_before(e, h.top())) {
                    h.pop();
                    h.push(e);
                }
            }
        }
    }
    ExemplarIndex index;
    index.k = k;
    for (std::size_t m = 0; m < M; ++m) {
        index.prototype_label.push_back(model.layout.assigned_label(m));
        std::vector<ExemplarEntry> list;
        while (!heaps[m].empty()) {
            list.push_back(heaps[m].top());
            heaps[m].pop();
        }
        std::reverse(list.begin(), list.end());
        index.per_prototype.push_back(std::move(list));
    }
    return index;
}

}  // namespace comfe
