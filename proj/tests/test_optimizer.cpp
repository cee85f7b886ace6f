#include <gtest/gtest.h>

#include <cmath>

#include "comfe/optimizer.hpp"

using namespace comfe;

TEST(AdamW, FirstStepMovesByLearningRate) {
    std::vector<float> p{1.0f}, g{0.5f}, m{0}, v{0};
    adamw_update(p, g, m, v, 1, 0.1, 0.0, AdamWHyper{});
    EXPECT_NEAR(p[0], 1.0 - 0.1, 1e-6);
    EXPECT_NEAR(m[0], 0.05, 1e-7);
    EXPECT_NEAR(v[0], 0.00025, 1e-9);
}

TEST(AdamW, DecayActsOnPreUpdateValue) {
    std::vector<float> p{2.0f}, g{0.0f}, m{0}, v{0};
    adamw_update(p, g, m, v, 1, 0.1, 0.04, AdamWHyper{});
    EXPECT_NEAR(p[0], 2.0 - 0.1 * 0.04 * 2.0, 1e-6);
}

TEST(AdamW, StepDecaysOnlyProjectionWeights) {
    ModelConfig cfg;
    cfg.num_classes = 2;
    cfg.dim = 4;
    cfg.heads = 2;
    auto model = ComfeModel::init(cfg, 1);
    auto before = model.params;
    auto state = init_adamw(model.params);
    GradientBuffers zeros;
    model.params.for_each([&](const std::string &, const Tensor<float> &t, ParamRole) { zeros.emplace_back(t.size(), 0.0f); });
    optimizer_step(model.params, state, zeros, 0.5, AdamWHyper{0.9, 0.999, 1e-8, 0.1});
    EXPECT_EQ(state.step, 1u);
    std::vector<const Tensor<float> *> old;
    before.for_each([&](const std::string &, const Tensor<float> &t, ParamRole) { old.push_back(&t); });
    std::size_t i = 0;
    model.params.for_each([&](const std::string &name, const Tensor<float> &t, ParamRole role) {
        const auto &o = *old[i++];
        for (std::size_t k = 0; k < t.size(); ++k) {
            if (role == ParamRole::weight) EXPECT_FLOAT_EQ(t[k], float(o[k] * (1 - 0.05))) << name;
            else EXPECT_EQ(t[k], o[k]) << name;
        }
    });
    zeros.pop_back();
    EXPECT_THROW(optimizer_step(model.params, state, zeros, 0.5, AdamWHyper{}), DimensionError);
}

TEST(Schedule, WarmupAndCosineBoundaries) {
    EXPECT_EQ(lr_at(0, 100, 1e-3, 0.1), 0.0);
    EXPECT_NEAR(lr_at(5, 100, 1e-3, 0.1), 5e-4, 1e-15);
    EXPECT_NEAR(lr_at(10, 100, 1e-3, 0.1), 1e-3, 1e-15);
    EXPECT_NEAR(lr_at(55, 100, 1e-3, 0.1), 5e-4, 1e-15);
    EXPECT_NEAR(lr_at(100, 100, 1e-3, 0.1), 0.0, 1e-15);
    EXPECT_EQ(lr_at(0, 100, 1e-3, 0.0), 1e-3);
    EXPECT_EQ(lr_at(3, 0, 1e-3, 0.1), 0.0);
    for (std::size_t s = 10; s < 100; ++s) EXPECT_GE(lr_at(s, 100, 1e-3, 0.1), lr_at(s + 1, 100, 1e-3, 0.1));
}

TEST(Clip, ScalesToNormAndIsIdempotent) {
    GradientBuffers g{{3.0f, 0.0f}, {4.0f}};
    std::vector<NamedParam> names{{"a", ParamRole::weight}, {"b", ParamRole::bias}};
    EXPECT_NEAR(clip_gradients(g, names, 0.5), 0.1, 1e-12);
    EXPECT_NEAR(g[0][0], 0.3f, 1e-7);
    EXPECT_NEAR(g[1][0], 0.4f, 1e-7);
    EXPECT_NEAR(global_grad_norm(g, names), 0.5, 1e-6);
    const auto once = g;
    EXPECT_NEAR(clip_gradients(g, names, 0.5), 1.0, 1e-6);
    EXPECT_EQ(g, once);
}

TEST(Clip, RejectsNonFiniteGradients) {
    GradientBuffers g{{1.0f, NAN}};
    std::vector<NamedParam> names{{"decoder.layer0.ff.w1", ParamRole::weight}};
    try {
        clip_gradients(g, names, 1.0);
        FAIL();
    } catch (const NumericError &e) {
        EXPECT_NE(std::string(e.what()).find("ff.w1"), std::string::npos);
    }
}
