#include <gtest/gtest.h>

#include <random>

#include "comfe/decoder.hpp"
#include "support/gradcheck.hpp"

using namespace comfe;

namespace {

DecoderConfig small_config(std::size_t layers = 2, std::size_t heads = 2, std::size_t d = 8) {
    DecoderConfig cfg;
    cfg.layers = layers;
    cfg.heads = heads;
    cfg.d_model = d;
    cfg.d_ff = 2 * d;
    return cfg;
}

std::vector<Tensor<double>> flatten(const DecoderParams<Tensor<float>> &params) {
    std::vector<Tensor<double>> out;
    DecoderParams<Tensor<float>>::visit(params, [&](const std::string &, const Tensor<float> &t, ParamRole) {
        out.push_back(t.cast<double>());
    });
    return out;
}

DecoderParams<Var<double>> rebuild(const std::vector<Var<double>> &vars, std::size_t offset, std::size_t layers) {
    DecoderParams<Var<double>> p;
    p.layers.resize(layers);
    std::size_t i = offset;
    DecoderParams<Var<double>>::visit(p, [&](const std::string &, Var<double> &v, ParamRole) { v = vars[i++]; });
    return p;
}

DecoderParams<Var<double>> bind(Tape<double> &tape, const DecoderParams<Tensor<float>> &params) {
    std::vector<Var<double>> vars;
    for (auto &t : flatten(params)) vars.push_back(tape.constant(t));
    return rebuild(vars, 0, params.layers.size());
}

}  // namespace

TEST(Decoder, InitShapesAndRoles) {
    const auto cfg = small_config();
    auto params = init_decoder(cfg, 3);
    ASSERT_EQ(params.layers.size(), 2u);
    std::size_t count = 0;
    DecoderParams<Tensor<float>>::visit(params, [&](const std::string &name, const Tensor<float> &t, ParamRole role) {
        ++count;
        EXPECT_EQ(t.shape(), decoder_param_shape(cfg, name, role)) << name;
        if (role == ParamRole::norm_gain) {
            for (auto v : t.data()) EXPECT_EQ(v, 1.0f);
        } else if (role != ParamRole::weight) {
            for (auto v : t.data()) EXPECT_EQ(v, 0.0f);
        }
    });
    EXPECT_EQ(count, 2u * 26u);
    EXPECT_EQ(flatten(init_decoder(cfg, 3))[2], flatten(params)[2]);
}

TEST(Decoder, OutputsOnePrototypeSetPerLayer) {
    for (std::size_t layers : {1u, 2u, 4u}) {
        const auto cfg = small_config(layers);
        std::mt19937_64 rng(layers);
        Tape<double> tape;
        auto z = tape.constant(testkit::random_unit_rows(7, 8, rng));
        auto q = tape.constant(testkit::random_tensor({3, 8}, rng));
        auto out = decoder_forward(z, q, bind(tape, init_decoder(cfg, 1)), cfg);
        ASSERT_EQ(out.size(), layers);
        for (const auto &o : out) EXPECT_EQ(o.shape(), (Shape{3, 8}));
    }
}

TEST(Decoder, ZeroBranchesPassQueriesThrough) {
    const auto cfg = small_config();
    auto params = init_decoder(cfg, 5);
    DecoderParams<Tensor<float>>::visit(params, [](const std::string &, Tensor<float> &t, ParamRole role) {
        if (role == ParamRole::weight) t = Tensor<float>(t.shape(), 0.0f);
    });
    std::mt19937_64 rng(6);
    Tape<double> tape;
    const auto qv = testkit::random_tensor({4, 8}, rng);
    auto out = decoder_forward(tape.constant(testkit::random_unit_rows(5, 8, rng)), tape.constant(qv),
                               bind(tape, params), cfg);
    for (const auto &o : out) EXPECT_EQ(o.value(), qv);
}

TEST(Decoder, InvariantToPatchOrder) {
    const auto cfg = small_config();
    auto params = init_decoder(cfg, 7);
    std::mt19937_64 rng(8);
    auto z = testkit::random_unit_rows(6, 8, rng);
    auto q = testkit::random_tensor({3, 8}, rng);
    Tensor<double> zr(z.shape());
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t c = 0; c < 8; ++c) zr(r, c) = z(5 - r, c);
    Tape<double> tape;
    auto a = decoder_forward(tape.constant(z), tape.constant(q), bind(tape, params), cfg).back().value();
    auto b = decoder_forward(tape.constant(zr), tape.constant(q), bind(tape, params), cfg).back().value();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Decoder, EquivariantToQueryOrder) {
    const auto cfg = small_config();
    auto params = init_decoder(cfg, 9);
    std::mt19937_64 rng(10);
    auto z = testkit::random_unit_rows(6, 8, rng);
    auto q = testkit::random_tensor({3, 8}, rng);
    Tensor<double> qr(q.shape());
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 8; ++c) qr(r, c) = q(2 - r, c);
    Tape<double> tape;
    auto a = decoder_forward(tape.constant(z), tape.constant(q), bind(tape, params), cfg).back().value();
    auto b = decoder_forward(tape.constant(z), tape.constant(qr), bind(tape, params), cfg).back().value();
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(a(r, c), b(2 - r, c), 1e-12);
}

TEST(Decoder, RejectsBadShapesAndConfigs) {
    const auto cfg = small_config();
    auto params = init_decoder(cfg, 1);
    Tape<double> tape;
    auto bound = bind(tape, params);
    auto q = tape.constant(Tensor<double>({3, 8}, 0.5));
    EXPECT_THROW(decoder_forward(tape.constant(Tensor<double>({4, 6}, 0.5)), q, bound, cfg), DimensionError);
    EXPECT_THROW(decoder_forward(tape.constant(Tensor<double>({4, 8}, 0.5)), tape.constant(Tensor<double>({3, 4}, 0.5)),
                                 bound, cfg),
                 DimensionError);
    auto three = small_config(3);
    EXPECT_THROW(decoder_forward(tape.constant(Tensor<double>({4, 8}, 0.5)), q, bound, three), DimensionError);
    auto bad_heads = small_config(2, 3);
    EXPECT_THROW(bad_heads.validate(), ConfigError);
    EXPECT_THROW(init_decoder(bad_heads, 0), ConfigError);
}

TEST(Decoder, GradientsMatchFiniteDifferences) {
    const auto cfg = small_config(2, 2, 4);
    auto params = init_decoder(cfg, 11);
    std::mt19937_64 rng(12);
    std::vector<Tensor<double>> inputs{testkit::random_unit_rows(3, 4, rng), testkit::random_tensor({2, 4}, rng)};
    for (auto &t : flatten(params)) {
        // Non-trivial biases and gains so their gradients are exercised too.
        for (auto &v : t.data()) v += 0.1 * std::normal_distribution<double>()(rng);
        inputs.push_back(t);
    }
    const auto w = testkit::random_tensor({2, 4}, rng);
    auto f = [&](Tape<double> &tape, const std::vector<Var<double>> &v) {
        auto out = decoder_forward(v[0], v[1], rebuild(v, 2, cfg.layers), cfg);
        return sum(mul(add(out[0], out[1]), tape.constant(w)));
    };
    const auto r = testkit::check_gradients(f, inputs, 1e-5);
    EXPECT_LT(r.rel_error, 1e-5);
}

TEST(Decoder, DropoutOnlyWithGenerator) {
    auto cfg = small_config();
    cfg.dropout = 0.5;
    auto params = init_decoder(cfg, 13);
    std::mt19937_64 rng(14);
    auto z = testkit::random_unit_rows(5, 8, rng);
    auto q = testkit::random_tensor({3, 8}, rng);
    Tape<double> tape;
    auto a = decoder_forward(tape.constant(z), tape.constant(q), bind(tape, params), cfg).back().value();
    auto b = decoder_forward(tape.constant(z), tape.constant(q), bind(tape, params), cfg).back().value();
    EXPECT_EQ(a, b);
    std::mt19937_64 drop(15);
    auto c = decoder_forward(tape.constant(z), tape.constant(q), bind(tape, params), cfg, &drop).back().value();
    EXPECT_FALSE(a == c);
}
