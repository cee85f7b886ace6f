#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "comfe/synth.hpp"

using namespace comfe;

TEST(Synth, DefaultSpecShapes) {
    SyntheticSpec spec;
    spec.train_per_class = 2;
    spec.eval_per_class = 1;
    EXPECT_EQ(spec.informative_count(), 16u);
    const auto data = generate(spec);
    EXPECT_EQ(data.train.size(), 10u);
    EXPECT_EQ(data.eval.size(), 5u);
    EXPECT_EQ(data.train.n_patches, 64u);
    EXPECT_EQ(data.train.views, 2u);
    data.train.validate();
    for (const auto &m : data.train_masks.masks) {
        std::size_t on = 0;
        for (auto b : m) on += b;
        EXPECT_EQ(on, 16u);
    }
}

TEST(Synth, PatchesAreUnitNorm) {
    SyntheticSpec spec;
    spec.classes = 2;
    spec.dim = 12;
    spec.train_per_class = 3;
    spec.eval_per_class = 1;
    const auto data = generate(spec);
    for (const auto &img : data.train.images) {
        for (std::size_t i = 0; i < img.view.rows(); ++i) {
            double s = 0;
            for (auto v : img.view.row(i)) s += double(v) * v;
            EXPECT_NEAR(std::sqrt(s), 1.0, 1e-5);
        }
    }
}

TEST(Synth, InformativePatchesFormOneBlock) {
    SyntheticSpec spec;
    spec.train_per_class = 4;
    spec.eval_per_class = 1;
    const auto data = generate(spec);
    for (const auto &m : data.train_masks.masks) {
        std::size_t r0 = 99, r1 = 0, c0 = 99, c1 = 0;
        for (std::size_t k = 0; k < m.size(); ++k) {
            if (!m[k]) continue;
            r0 = std::min(r0, k / 8);
            r1 = std::max(r1, k / 8);
            c0 = std::min(c0, k % 8);
            c1 = std::max(c1, k % 8);
        }
        EXPECT_EQ((r1 - r0 + 1) * (c1 - c0 + 1), 16u);
    }
}

TEST(Synth, InformativePatchesSitNearTheirClassMean) {
    SyntheticSpec spec;
    spec.classes = 3;
    spec.train_per_class = 4;
    spec.eval_per_class = 1;
    const auto data = generate(spec);
    // Isotropic noise of variance 1/kappa per coordinate puts the expected
    // cosine to the mean near 1 / sqrt(1 + d / kappa).
    const double expected = 1.0 / std::sqrt(1.0 + 64.0 / spec.kappa);
    double total = 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < data.train.size(); ++i) {
        const auto &img = data.train.images[i];
        for (std::size_t k = 0; k < 64; ++k) {
            if (!data.train_masks.masks[i][k]) continue;
            std::vector<double> dots(3, 0.0);
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t j = 0; j < 64; ++j) dots[c] += double(img.view(k, j)) * data.class_means(c, j);
            for (std::size_t c = 0; c < 3; ++c)
                if (c != img.label) EXPECT_GT(dots[img.label], dots[c]);
            total += dots[img.label];
            ++count;
        }
    }
    EXPECT_NEAR(total / double(count), expected, 0.02);
}

TEST(Synth, SeededAndSeparated) {
    SyntheticSpec spec;
    spec.train_per_class = 1;
    spec.eval_per_class = 1;
    const auto a = generate(spec), b = generate(spec);
    EXPECT_EQ(a.train.images[3].view, b.train.images[3].view);
    spec.seed = 1;
    EXPECT_FALSE(generate(spec).train.images[3].view == a.train.images[3].view);
    const std::size_t n = a.class_means.rows() + a.background_means.rows();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            auto row = [&](std::size_t r) {
                return r < 5 ? a.class_means.row(r) : a.background_means.row(r - 5);
            };
            double dot = 0;
            for (std::size_t k = 0; k < 64; ++k) dot += double(row(i)[k]) * row(j)[k];
            EXPECT_LT(dot, 0.5);
        }
    }
}

TEST(Synth, OracleIsNearPerfectOnDefaults) {
    SyntheticSpec spec;
    spec.train_per_class = 10;
    spec.eval_per_class = 10;
    EXPECT_GE(nearest_mean_oracle(generate(spec)), 0.98);
}

TEST(Synth, SpecFromKeyValues) {
    std::istringstream in("classes = 4\ndim=32\nkappa=20\nscatter=true\n");
    const auto s = synthetic_spec_from(parse_key_values(in));
    EXPECT_EQ(s.classes, 4u);
    EXPECT_EQ(s.dim, 32u);
    EXPECT_EQ(s.kappa, 20.0);
    EXPECT_TRUE(s.scatter);
    std::istringstream bad("colour=red\n");
    EXPECT_THROW(synthetic_spec_from(parse_key_values(bad)), ConfigError);
    SyntheticSpec invalid;
    invalid.informative_fraction = 1.0;
    EXPECT_THROW(generate(invalid), ConfigError);
}
