#pragma once

// Class prototypes, their fixed label associations, and query initialization.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "comfe/errors.hpp"
#include "comfe/tensor.hpp"

namespace comfe {

// Shape of the prototype-to-label assignment. Prototypes are laid out in
// blocks: per_class consecutive rows per foreground class, then the
// background rows.
struct AssociationLayout {
    std::size_t num_classes = 0;
    std::size_t per_class = 1;
    std::size_t n_background = 0;
    double alpha = 0.0;

    std::size_t foreground_prototypes() const { return per_class * num_classes; }
    std::size_t total_prototypes() const { return foreground_prototypes() + n_background; }
    bool has_background() const { return n_background > 0; }
    // Foreground labels plus the background label when present.
    std::size_t label_count() const { return num_classes + (has_background() ? 1 : 0); }
    std::size_t background_label() const { return num_classes; }

    // Label a prototype row is assigned to.
    std::size_t assigned_label(std::size_t row) const {
        return row < foreground_prototypes() ? row / per_class : background_label();
    }
};

// Row-stochastic smoothed one-hot association matrix:
// assigned entry 1 - alpha + alpha/L, every other entry alpha/L, where L is
// the number of label columns.
inline Tensor<double> build_association_matrix(const AssociationLayout &layout) {
    if (!(layout.alpha >= 0.0 && layout.alpha < 1.0)) {
        throw ConfigError("alpha must lie in [0, 1), got " + std::to_string(layout.alpha));
    }
    if (layout.per_class < 1) throw ConfigError("per_class must be at least 1");
    if (layout.num_classes < 1) throw ConfigError("need at least one foreground class");
    const std::size_t rows = layout.total_prototypes();
    const std::size_t labels = layout.label_count();
    const double off = layout.alpha / double(labels);
    const double on = 1.0 - layout.alpha + off;
    Tensor<double> phi({rows, labels}, off);
    for (std::size_t l = 0; l < rows; ++l) phi(l, layout.assigned_label(l)) = on;
    return phi;
}

inline Tensor<double> build_association_matrix(std::size_t num_classes, std::size_t per_class,
                                               std::size_t n_background, double alpha) {
    return build_association_matrix(AssociationLayout{num_classes, per_class, n_background, alpha});
}

// Rows are i.i.d. standard normal draws scaled to unit length, i.e. uniform
// on the sphere.
inline Tensor<float> init_class_prototypes(std::size_t count, std::size_t dim, std::uint64_t seed) {
    if (dim < 2) throw ConfigError("class prototypes need dimension >= 2");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor<float> out({count, dim});
    std::vector<double> row(dim);
    for (std::size_t i = 0; i < count; ++i) {
        double norm = 0;
        do {
            norm = 0;
            for (auto &x : row) {
                x = normal(rng);
                norm += x * x;
            }
            norm = std::sqrt(norm);
        } while (norm < 1e-12);
        for (std::size_t j = 0; j < dim; ++j) out(i, j) = float(row[j] / norm);
    }
    return out;
}

inline Tensor<float> init_queries(std::size_t n_prototypes, std::size_t dim, std::uint64_t seed) {
    if (n_prototypes < 1) throw ConfigError("need at least one image prototype");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor<float> out({n_prototypes, dim});
    for (auto &x : out.data()) x = float(normal(rng));
    return out;
}

struct ClassPrototypeBank {
    Tensor<float> prototypes;  // (N_C + N_N) × d
    Tensor<double> phi;        // (N_C + N_N) × L
    AssociationLayout layout;

    static ClassPrototypeBank create(const AssociationLayout &layout, std::size_t dim, std::uint64_t seed) {
        ClassPrototypeBank bank;
        bank.layout = layout;
        bank.phi = build_association_matrix(layout);
        bank.prototypes = init_class_prototypes(layout.total_prototypes(), dim, seed);
        return bank;
    }
};

// Equivalent bank without background prototypes: background rows are
// dropped and phi is rebuilt over the foreground labels only.
inline ClassPrototypeBank disable_background(const ClassPrototypeBank &bank) {
    ClassPrototypeBank out;
    out.layout = bank.layout;
    out.layout.n_background = 0;
    out.phi = build_association_matrix(out.layout);
    const std::size_t rows = out.layout.foreground_prototypes();
    const std::size_t dim = bank.prototypes.cols();
    const auto src = bank.prototypes.data().subspan(0, rows * dim);
    out.prototypes = Tensor<float>({rows, dim}, std::vector<float>(src.begin(), src.end()));
    return out;
}

// Binary multi-label target over foreground labels, with the background
// entry appended (always 1) when background prototypes are enabled.
struct MultiLabel {
    std::vector<std::uint8_t> bits;

    std::size_t size() const { return bits.size(); }

    template <typename T>
    Tensor<T> as_row() const {
        Tensor<T> row({1, bits.size()});
        for (std::size_t i = 0; i < bits.size(); ++i) row[i] = bits[i] ? T(1) : T(0);
        return row;
    }
};

inline MultiLabel extend_label(std::size_t y, std::size_t num_classes, bool with_background = true) {
    if (y >= num_classes) {
        throw LabelError("class " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
    }
    MultiLabel label;
    label.bits.assign(num_classes + (with_background ? 1 : 0), 0);
    label.bits[y] = 1;
    if (with_background) label.bits.back() = 1;
    return label;
}

inline MultiLabel extend_label(std::size_t y, const AssociationLayout &layout) {
    return extend_label(y, layout.num_classes, layout.has_background());
}

}  // namespace comfe
