#pragma once

// Synthetic patch-embedding generator with known informative/background
// structure, and the nearest-mean baseline measured against it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "comfe/config.hpp"
#include "comfe/dataset.hpp"
#include "comfe/errors.hpp"
#include "comfe/tensor.hpp"

namespace comfe {

struct SyntheticSpec {
    std::size_t classes = 5;
    std::size_t dim = 64;
    std::size_t grid_h = 8;
    std::size_t grid_w = 8;
    double informative_fraction = 0.25;
    double kappa = 50.0;
    std::size_t background_modes = 4;
    std::size_t train_per_class = 100;
    std::size_t eval_per_class = 50;
    std::uint64_t seed = 0;
    bool scatter = false;  // informative patches at random cells instead of one block
    double max_cosine = 0.5;

    std::size_t n_patches() const { return grid_h * grid_w; }
    std::size_t informative_count() const {
        return std::size_t(std::ceil(informative_fraction * double(n_patches()) - 1e-9));
    }

    void validate() const {
        if (classes < 1) throw ConfigError("classes must be at least 1");
        if (dim < 2) throw ConfigError("dim must be at least 2");
        if (grid_h < 1 || grid_w < 1) throw ConfigError("grid must be non-empty");
        if (!(informative_fraction > 0 && informative_fraction < 1)) {
            throw ConfigError("informative_fraction must lie in (0, 1)");
        }
        if (!(kappa > 0)) throw ConfigError("kappa must be positive");
        if (background_modes < 1) throw ConfigError("background_modes must be at least 1");
    }
};

struct SyntheticData {
    EmbeddingDataset train;
    EmbeddingDataset eval;
    PatchMasks train_masks;
    PatchMasks eval_masks;
    Tensor<float> class_means;       // classes × d, unit rows
    Tensor<float> background_means;  // modes × d, unit rows
};

namespace detail {

inline std::vector<double> random_unit(std::size_t d, std::mt19937_64 &rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> v(d);
    double norm = 0;
    do {
        norm = 0;
        for (auto &x : v) {
            x = n(rng);
            norm += x * x;
        }
    } while (norm == 0);
    norm = std::sqrt(norm);
    for (auto &x : v) x /= norm;
    return v;
}

// Directions drawn uniformly on the sphere, each accepted only if its cosine
// with every earlier one is below max_cosine.
inline std::vector<std::vector<double>> separated_directions(std::size_t count, std::size_t d, double max_cosine,
                                                             std::mt19937_64 &rng) {
    constexpr std::size_t kMaxTries = 10000;
    std::vector<std::vector<double>> out;
    for (std::size_t i = 0; i < count; ++i) {
        bool placed = false;
        for (std::size_t attempt = 0; attempt < kMaxTries && !placed; ++attempt) {
            auto v = random_unit(d, rng);
            bool ok = true;
            for (const auto &u : out) {
                double dot = 0;
                for (std::size_t k = 0; k < d; ++k) dot += u[k] * v[k];
                if (dot >= max_cosine) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                out.push_back(std::move(v));
                placed = true;
            }
        }
        if (!placed) {
            throw ConfigError("could not place direction " + std::to_string(i) + " of " + std::to_string(count) +
                              " in d=" + std::to_string(d) + " after 10000 tries");
        }
    }
    return out;
}

inline void noisy_patch(std::span<float> out, const std::vector<double> &mean, double sigma, std::mt19937_64 &rng) {
    std::normal_distribution<double> n(0.0, sigma);
    std::vector<double> v(mean.size());
    double norm = 0;
    for (std::size_t k = 0; k < v.size(); ++k) {
        v[k] = mean[k] + n(rng);
        norm += v[k] * v[k];
    }
    norm = std::sqrt(norm);
    for (std::size_t k = 0; k < v.size(); ++k) out[k] = float(v[k] / norm);
}

}  // namespace detail

inline SyntheticData generate(const SyntheticSpec &spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    const std::size_t d = spec.dim, n = spec.n_patches(), n_inf = spec.informative_count();
    auto dirs = detail::separated_directions(spec.classes + spec.background_modes, d, spec.max_cosine, rng);

    SyntheticData out;
    out.class_means = Tensor<float>({spec.classes, d});
    out.background_means = Tensor<float>({spec.background_modes, d});
    for (std::size_t c = 0; c < spec.classes; ++c)
        for (std::size_t k = 0; k < d; ++k) out.class_means(c, k) = float(dirs[c][k]);
    for (std::size_t b = 0; b < spec.background_modes; ++b)
        for (std::size_t k = 0; k < d; ++k) out.background_means(b, k) = float(dirs[spec.classes + b][k]);

    const double sigma = 1.0 / std::sqrt(spec.kappa);
    std::size_t block_w = std::min(spec.grid_w, std::size_t(std::ceil(std::sqrt(double(n_inf)))));
    while ((n_inf + block_w - 1) / block_w > spec.grid_h) ++block_w;
    auto make_split = [&](std::size_t per_class, EmbeddingDataset &ds, PatchMasks &masks) {
        ds.num_classes = spec.classes;
        ds.n_patches = n;
        ds.dim = d;
        ds.grid_h = spec.grid_h;
        ds.grid_w = spec.grid_w;
        ds.views = 2;
        masks.grid_h = spec.grid_h;
        masks.grid_w = spec.grid_w;
        for (std::size_t i = 0; i < per_class; ++i) {
            for (std::size_t c = 0; c < spec.classes; ++c) {
                std::vector<std::uint8_t> mask(n, 0);
                if (spec.scatter) {
                    std::vector<std::size_t> cells(n);
                    for (std::size_t k = 0; k < n; ++k) cells[k] = k;
                    for (std::size_t k = 0; k < n_inf; ++k) {
                        std::uniform_int_distribution<std::size_t> pick(k, n - 1);
                        std::swap(cells[k], cells[pick(rng)]);
                        mask[cells[k]] = 1;
                    }
                } else {
                    // Near-square block, filled row by row (the last row may be partial).
                    const auto bw = block_w, bh = (n_inf + bw - 1) / bw;
                    std::uniform_int_distribution<std::size_t> r0(0, spec.grid_h - bh), c0(0, spec.grid_w - bw);
                    const auto top = r0(rng), left = c0(rng);
                    for (std::size_t k = 0; k < n_inf; ++k) mask[(top + k / bw) * spec.grid_w + left + k % bw] = 1;
                }
                std::uniform_int_distribution<std::size_t> mode(0, spec.background_modes - 1);
                std::vector<const std::vector<double> *> means(n);
                for (std::size_t k = 0; k < n; ++k) means[k] = mask[k] ? &dirs[c] : &dirs[spec.classes + mode(rng)];

                EmbeddedImage img;
                img.label = std::uint32_t(c);
                img.view = Tensor<float>({n, d});
                img.paired.emplace(Shape{n, d});
                for (std::size_t k = 0; k < n; ++k) detail::noisy_patch(img.view.row(k), *means[k], sigma, rng);
                for (std::size_t k = 0; k < n; ++k) detail::noisy_patch(img.paired->row(k), *means[k], sigma, rng);
                ds.images.push_back(std::move(img));
                masks.masks.push_back(std::move(mask));
            }
        }
    };
    make_split(spec.train_per_class, out.train, out.train_masks);
    make_split(spec.eval_per_class, out.eval, out.eval_masks);
    return out;
}

// Class means re-estimated from the training informative patches; each eval
// image is labelled by majority vote (lowest class on ties) of the nearest
// mean over its informative patches.
inline double nearest_mean_oracle(const EmbeddingDataset &train, const PatchMasks &train_masks,
                                  const EmbeddingDataset &eval, const PatchMasks &eval_masks) {
    if (train_masks.masks.size() != train.size() || eval_masks.masks.size() != eval.size()) {
        throw DataError("mask count does not match image count");
    }
    if (eval.size() == 0) throw DataError("empty evaluation set");
    const std::size_t c = train.num_classes, d = train.dim;
    std::vector<std::vector<double>> means(c, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < train.size(); ++i) {
        const auto &img = train.images[i];
        for (std::size_t k = 0; k < train.n_patches; ++k) {
            if (!train_masks.masks[i][k]) continue;
            auto row = img.view.row(k);
            for (std::size_t j = 0; j < d; ++j) means[img.label][j] += row[j];
        }
    }
    for (auto &m : means) {
        double norm = 0;
        for (double x : m) norm += x * x;
        norm = std::sqrt(norm);
        if (norm > 0)
            for (auto &x : m) x /= norm;
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < eval.size(); ++i) {
        const auto &img = eval.images[i];
        std::vector<std::size_t> votes(c, 0);
        for (std::size_t k = 0; k < eval.n_patches; ++k) {
            if (!eval_masks.masks[i][k]) continue;
            auto row = img.view.row(k);
            std::size_t best = 0;
            double best_dot = -INFINITY;
            for (std::size_t cl = 0; cl < c; ++cl) {
                double dot = 0;
                for (std::size_t j = 0; j < d; ++j) dot += means[cl][j] * row[j];
                if (dot > best_dot) {
                    best_dot = dot;
                    best = cl;
                }
            }
            ++votes[best];
        }
        std::size_t winner = 0;
        for (std::size_t cl = 1; cl < c; ++cl)
            if (votes[cl] > votes[winner]) winner = cl;
        if (winner == img.label) ++correct;
    }
    return double(correct) / double(eval.size());
}

inline double nearest_mean_oracle(const SyntheticData &data) {
    return nearest_mean_oracle(data.train, data.train_masks, data.eval, data.eval_masks);
}

// Reads a spec from key=value text; unknown keys are rejected.
inline SyntheticSpec synthetic_spec_from(const KeyValues &kv) {
    SyntheticSpec s;
    using namespace detail;
    for (const auto &[k, v] : kv) {
        if (k == "classes") s.classes = parse_uint(k, v);
        else if (k == "dim") s.dim = parse_uint(k, v);
        else if (k == "grid_h") s.grid_h = parse_uint(k, v);
        else if (k == "grid_w") s.grid_w = parse_uint(k, v);
        else if (k == "informative_fraction") s.informative_fraction = parse_double(k, v);
        else if (k == "kappa") s.kappa = parse_double(k, v);
        else if (k == "background_modes") s.background_modes = parse_uint(k, v);
        else if (k == "train_per_class") s.train_per_class = parse_uint(k, v);
        else if (k == "eval_per_class") s.eval_per_class = parse_uint(k, v);
        else if (k == "seed") s.seed = parse_uint(k, v);
        else if (k == "scatter") s.scatter = parse_bool(k, v);
        else if (k == "max_cosine") s.max_cosine = parse_double(k, v);
        else throw ConfigError("unknown key '" + k + "'");
    }
    s.validate();
    return s;
}

}  // namespace comfe
