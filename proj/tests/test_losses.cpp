#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "comfe/losses.hpp"
#include "support/fixtures.hpp"

using namespace comfe;

TEST(Bce, UniformScoresCostLn2PerLabel) {
    for (std::size_t c = 1; c <= 6; ++c) {
        Tape<double> tape;
        auto target = tape.constant(extend_label(0, c).as_row<double>());
        auto scores = tape.constant(Tensor<double>({1, c + 1}, 0.5));
        EXPECT_NEAR(bce_loss(target, scores).item(), double(c + 1) * std::log(2.0), 1e-12);
    }
}

TEST(Bce, GradientWithRespectToScores) {
    const auto y = Tensor<double>::matrix(1, 4, {1, 0, 0, 1});
    const auto s = Tensor<double>::matrix(1, 4, {0.7, 0.2, 0.9, 0.05});
    Tape<double> tape;
    auto sv = tape.leaf(s, true);
    tape.backward(bce_loss(tape.constant(y), sv));
    const auto g = tape.grad_of(sv);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(g[i], (s[i] - y[i]) / (s[i] * (1 - s[i])), 1e-9);
}

TEST(Bce, SaturatedScoresStayFinite) {
    Tape<double> tape;
    auto target = tape.constant(Tensor<double>::matrix(1, 2, {1, 0}));
    auto loss = bce_loss(target, tape.constant(Tensor<double>::matrix(1, 2, {0, 1}))).item();
    EXPECT_TRUE(std::isfinite(loss));
    EXPECT_NEAR(loss, -2 * std::log(kScoreEps), 1e-6);
    EXPECT_THROW(bce_loss(target, tape.constant(Tensor<double>({1, 3}, 0.5))), DimensionError);
}

TEST(Carl, MatchingOneHotIsZero) {
    Tape<double> tape;
    auto a = tape.constant(Tensor<double>::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
    EXPECT_NEAR(carl_loss(a, a).item(), 0.0, 1e-12);
}

TEST(Carl, UniformIsLogPrototypeCount) {
    for (std::size_t np = 1; np <= 8; ++np) {
        Tape<double> tape;
        auto u = tape.constant(Tensor<double>({5, np}, 1.0 / double(np)));
        EXPECT_NEAR(carl_loss(u, u).item(), std::log(double(np)), 1e-12);
    }
}

TEST(Carl, LiteralFormAndShapeCheck) {
    Tape<double> tape;
    auto u = tape.constant(Tensor<double>({2, 4}, 0.25));
    EXPECT_NEAR(carl_loss(u, u, CarlForm::literal).item(), 8 * std::log(4.0), 1e-12);
    EXPECT_THROW(carl_loss(u, tape.constant(Tensor<double>({2, 3}, 0.25))), DimensionError);
}

TEST(Contrast, DuplicateRowCostsLn2) {
    // Rows 0 and 1 coincide; row 2 is orthogonal and drops out at small tau.
    Tape<double> tape;
    auto x = tape.constant(Tensor<double>::matrix(3, 2, {1, 0, 1, 0, 0, 1}));
    const double tau = 0.02;
    EXPECT_NEAR(contrast_term(x, tau).item() / 2.0, std::log(2.0), 1e-4);
    auto pair = tape.constant(Tensor<double>::matrix(2, 2, {1, 0, 1, 0}));
    EXPECT_NEAR(contrast_term(pair, tau).item(), 2 * std::log(2.0), 1e-12);
}

TEST(Contrast, OrthogonalRowsAreNearlyFree) {
    Tape<double> tape;
    auto x = tape.constant(Tensor<double>::identity(4));
    const double expect = 4 * std::log(1 + 3 * std::exp(-50.0));
    EXPECT_NEAR(contrast_term(x, 0.02).item(), expect, 1e-15);
}

TEST(Cluster, SinglePrototypeOnEveryPatch) {
    Tape<double> tape;
    auto z = tape.constant(Tensor<double>::matrix(2, 2, {1, 0, 1, 0}));
    auto p = tape.constant(Tensor<double>::matrix(1, 2, {1, 0}));
    EXPECT_NEAR(cluster_loss(z, p, 0.1).item(), -10.0, 1e-12);
}

TEST(ImageLoss, LayerAveragingMatchesIndependentLayers) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) EXPECT_LT(testkit::layer_average_discrepancy(seed), 1e-6);
}

TEST(ImageLoss, WeightsScaleTerms) {
    std::mt19937_64 rng(22);
    ModelConfig cfg;
    cfg.num_classes = 2;
    cfg.dim = 4;
    cfg.heads = 2;
    auto model = ComfeModel::init(cfg, 1);
    const auto view = testkit::random_tensor({5, 4}, rng);
    auto eval = [&](const ModelConfig &c) {
        Tape<double> tape;
        auto p = bind_params<double>(tape, testkit::to_double(model.params), false);
        return LossBreakdown::from(image_loss(tape, p, tape.constant(model.phi), ExampleRef<double>{&view, nullptr, 0}, c));
    };
    auto base = eval(cfg);
    auto weighted = cfg;
    weighted.weights.cluster = 2.0;
    weighted.weights.contrast = 0.0;
    auto w = eval(weighted);
    EXPECT_NEAR(w.cluster, 2 * base.cluster, 1e-9);
    EXPECT_EQ(w.contrast, 0.0);
    EXPECT_EQ(base.carl, 0.0);
    EXPECT_NEAR(w.total, base.total + base.cluster - base.contrast, 1e-9);
}

TEST(BatchLoss, IsMeanOfImageLosses) {
    std::mt19937_64 rng(23);
    ModelConfig cfg;
    cfg.num_classes = 2;
    cfg.dim = 4;
    cfg.heads = 1;
    auto model = ComfeModel::init(cfg, 2);
    std::vector<Tensor<double>> views{testkit::random_tensor({3, 4}, rng), testkit::random_tensor({3, 4}, rng)};
    Tape<double> tape;
    auto p = bind_params<double>(tape, testkit::to_double(model.params), false);
    auto phi = tape.constant(model.phi);
    std::vector<ExampleRef<double>> batch{{&views[0], nullptr, 0}, {&views[1], nullptr, 1}};
    const double total = batch_loss(tape, p, phi, batch, cfg).total.item();
    const double a = image_loss(tape, p, phi, batch[0], cfg).total.item();
    const double b = image_loss(tape, p, phi, batch[1], cfg).total.item();
    EXPECT_NEAR(total, (a + b) / 2, 1e-12);
    EXPECT_THROW(batch_loss(tape, p, phi, {}, cfg), DataError);
}

TEST(TotalLoss, GradientsMatchFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const auto c = testkit::random_loss_case(seed);
        EXPECT_LT(testkit::total_loss_gradcheck(c).rel_error, 1e-3) << "seed " << seed;
    }
}

TEST(TotalLoss, FloatBreakdownTracksDouble) {
    std::mt19937_64 rng(24);
    ModelConfig cfg;
    cfg.num_classes = 3;
    cfg.dim = 8;
    cfg.heads = 2;
    auto model = ComfeModel::init(cfg, 3);
    const auto view = testkit::random_tensor({6, 8}, rng);
    const auto vf = view.cast<float>();
    auto f = total_loss({ExampleRef<float>{&vf, nullptr, 2}}, model);
    Tape<double> tape;
    auto p = bind_params<double>(tape, testkit::to_double(model.params), false);
    auto d = LossBreakdown::from(image_loss(tape, p, tape.constant(model.phi), ExampleRef<double>{&view, nullptr, 2}, cfg));
    EXPECT_NEAR(f.total, d.total, 1e-3 * std::abs(d.total));
}
