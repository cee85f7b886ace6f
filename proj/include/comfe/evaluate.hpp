#pragma once

// Accuracy and patch-assignment metrics over an embedding dataset.

#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "comfe/config.hpp"
#include "comfe/dataset.hpp"
#include "comfe/errors.hpp"
#include "comfe/inference.hpp"

namespace comfe {

struct EvalReport {
    std::size_t images = 0;
    double top1 = 0;
    std::vector<double> per_class;            // NaN for classes absent from the set
    std::optional<double> background_rate;    // share of true background patches assigned to background
    std::optional<double> foreground_rate;    // share of informative patches assigned to a foreground label
};

inline void require_label_space(const ComfeModel &model, const EmbeddingDataset &ds) {
    if (ds.num_classes != model.config.num_classes) {
        throw DataError("dataset has " + std::to_string(ds.num_classes) + " classes, model has " +
                        std::to_string(model.config.num_classes));
    }
    if (ds.dim != model.config.dim) {
        throw DataError("dataset width " + std::to_string(ds.dim) + " differs from model width " +
                        std::to_string(model.config.dim));
    }
}

// Top-1 over foreground labels. With masks, a patch counts as background-
// assigned when its posterior arg-max is the background label.
inline EvalReport evaluate(const ComfeModel &model, const EmbeddingDataset &ds, const PatchMasks *masks = nullptr) {
    require_label_space(model, ds);
    if (ds.size() == 0) throw DataError("empty dataset");
    if (masks && masks->masks.size() != ds.size()) throw DataError("mask count does not match image count");
    const std::size_t c = model.config.num_classes;
    const bool has_bg = model.layout.has_background();
    const std::size_t bg = model.layout.background_label();

    EvalReport r;
    r.images = ds.size();
    std::vector<std::size_t> hits(c, 0), totals(c, 0);
    std::size_t correct = 0, bg_total = 0, bg_hits = 0, fg_total = 0, fg_hits = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto &img = ds.images[i];
        const auto fwd = run_forward(model, img.view);
        const auto p = predict_from_scores(fwd.scores.scores, c);
        ++totals[img.label];
        if (p.best_foreground == img.label) {
            ++correct;
            ++hits[img.label];
        }
        if (!masks) continue;
        const auto &post = fwd.patch_to_class;
        const auto &mask = masks->masks[i];
        if (mask.size() != post.rows()) throw DataError("mask " + std::to_string(i) + " has wrong length");
        for (std::size_t k = 0; k < post.rows(); ++k) {
            std::size_t best = 0;
            for (std::size_t l = 1; l < post.cols(); ++l)
                if (post(k, l) > post(k, best)) best = l;
            const bool assigned_bg = has_bg && best == bg;
            if (mask[k]) {
                ++fg_total;
                fg_hits += !assigned_bg;
            } else {
                ++bg_total;
                bg_hits += assigned_bg;
            }
        }
    }
    r.top1 = double(correct) / double(ds.size());
    for (std::size_t l = 0; l < c; ++l) {
        r.per_class.push_back(totals[l] ? double(hits[l]) / double(totals[l]) : std::nan(""));
    }
    if (masks) {
        if (bg_total) r.background_rate = double(bg_hits) / double(bg_total);
        if (fg_total) r.foreground_rate = double(fg_hits) / double(fg_total);
    }
    return r;
}

inline void write_report(const EvalReport &r, std::ostream &os) {
    using detail::format_double;
    os << "images=" << r.images << "\n";
    os << "top1=" << format_double(r.top1) << "\n";
    for (std::size_t l = 0; l < r.per_class.size(); ++l) {
        os << "class" << l << "=" << format_double(r.per_class[l]) << "\n";
    }
    if (r.background_rate) os << "background_rate=" << format_double(*r.background_rate) << "\n";
    if (r.foreground_rate) os << "foreground_rate=" << format_double(*r.foreground_rate) << "\n";
}

// Top-1 only; used for per-epoch tracking.
inline double accuracy(const ComfeModel &model, const EmbeddingDataset &ds) { return evaluate(model, ds).top1; }

}  // namespace comfe
