#include <gtest/gtest.h>

#include <sstream>

#include "comfe/checkpoint.hpp"
#include "comfe/synth.hpp"
#include "comfe/trainer.hpp"

using namespace comfe;

namespace {

TrainState trained_state() {
    SyntheticSpec spec;
    spec.classes = 2;
    spec.dim = 8;
    spec.grid_h = 2;
    spec.grid_w = 4;
    spec.train_per_class = 4;
    spec.eval_per_class = 2;
    const auto data = generate(spec);
    TrainConfig cfg;
    cfg.model.heads = 2;
    cfg.epochs = 1;
    cfg.batch_size = 3;
    return train(data.train, cfg, &data.eval);
}

std::string bytes_of(const TrainState &s) {
    std::ostringstream os;
    save_checkpoint(s, os);
    return os.str();
}

TrainState load_bytes(const std::string &b) {
    std::istringstream is(b);
    return load_checkpoint(is);
}

}  // namespace

TEST(Checkpoint, RoundTripIsByteIdentical) {
    const auto s = trained_state();
    const auto bytes = bytes_of(s);
    const auto back = load_bytes(bytes);
    EXPECT_EQ(bytes_of(back), bytes);
    EXPECT_EQ(back.history, s.history);
    EXPECT_EQ(back.optimizer.step, s.optimizer.step);
    EXPECT_EQ(back.model.params.queries, s.model.params.queries);
    EXPECT_EQ(back.model.phi, s.model.phi);
}

TEST(Checkpoint, ResumedRngContinuesIdentically) {
    auto s = trained_state();
    auto back = load_bytes(bytes_of(s));
    EXPECT_EQ(s.rng(), back.rng());
}

TEST(Checkpoint, BadMagicAndVersion) {
    auto bytes = bytes_of(trained_state());
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(load_bytes(bad), CheckpointError);
    bad = bytes;
    bad[4] = 7;
    try {
        load_bytes(bad);
        FAIL();
    } catch (const CheckpointError &e) {
        EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
    }
}

TEST(Checkpoint, TruncationAndTrailingBytes) {
    const auto bytes = bytes_of(trained_state());
    for (std::size_t cut : {std::size_t(3), std::size_t(20), bytes.size() / 2, bytes.size() - 1}) {
        EXPECT_THROW(load_bytes(bytes.substr(0, cut)), CheckpointError) << cut;
    }
    EXPECT_THROW(load_bytes(bytes + "x"), CheckpointError);
}

TEST(Checkpoint, NonFiniteParameterIsRejected) {
    auto s = trained_state();
    s.model.params.queries[0] = NAN;
    EXPECT_THROW(load_bytes(bytes_of(s)), CheckpointError);
}

TEST(Checkpoint, AssociationMustMatchLayout) {
    auto s = trained_state();
    s.model.phi(0, 0) = 0.5;
    EXPECT_THROW(load_bytes(bytes_of(s)), CheckpointError);
}

TEST(Checkpoint, MissingFile) {
    EXPECT_THROW(load_checkpoint(std::string("/nonexistent/model.comf")), CheckpointError);
}
