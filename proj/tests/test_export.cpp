#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "comfe/export.hpp"

using namespace comfe;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path &p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

fs::path scratch(const std::string &name) {
    auto dir = fs::temp_directory_path() / ("comfe_export_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST(Upsample, ConstantStaysConstant) {
    const Tensor<float> g({3, 5}, 0.375f);
    const auto up = upsample_bilinear(g, 17, 9);
    for (auto v : up.data()) EXPECT_FLOAT_EQ(v, 0.375f);
}

TEST(Upsample, IdentityAtSameSizeAndWithinRange) {
    const auto g = Tensor<float>::matrix(2, 2, {0, 1, 0.5f, 0.25f});
    EXPECT_EQ(upsample_bilinear(g, 2, 2), g);
    const auto up = upsample_bilinear(g, 13, 7);
    for (auto v : up.data()) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(Upsample, NearestIntroducesNoNewIndices) {
    Tensor<std::uint32_t> g({2, 2});
    g[0] = 3;
    g[1] = 1;
    g[2] = 4;
    g[3] = 1;
    const auto up = upsample_nearest(g, 4, 4);
    EXPECT_EQ(up(0, 0), 3u);
    EXPECT_EQ(up(0, 3), 1u);
    EXPECT_EQ(up(3, 0), 4u);
    EXPECT_EQ(up(3, 3), 1u);
}

TEST(Pgm, SixteenBitBigEndianBytes) {
    const auto dir = scratch("pgm");
    write_pgm16(Tensor<float>::matrix(1, 3, {0.0f, 1.0f, 0.5f}), (dir / "a.pgm").string());
    const auto bytes = slurp(dir / "a.pgm");
    const std::string header = "P5\n3 1\n65535\n";
    ASSERT_EQ(bytes.size(), header.size() + 6);
    EXPECT_EQ(bytes.substr(0, header.size()), header);
    const auto px = bytes.substr(header.size());
    EXPECT_EQ(px, std::string("\x00\x00\xff\xff\x80\x00", 6));
}

TEST(Ppm, PaletteColours) {
    const auto dir = scratch("ppm");
    Tensor<std::uint32_t> idx({1, 2});
    idx[0] = 0;
    idx[1] = 11;
    write_ppm_palette(idx, (dir / "b.ppm").string());
    const auto bytes = slurp(dir / "b.ppm");
    const std::string header = "P6\n2 1\n255\n";
    ASSERT_EQ(bytes.size(), header.size() + 6);
    const auto px = bytes.substr(header.size());
    EXPECT_EQ(std::uint8_t(px[0]), kFeaturePalette[0][0]);
    EXPECT_EQ(std::uint8_t(px[3]), kFeaturePalette[1][0]);
    EXPECT_EQ(std::uint8_t(px[5]), kFeaturePalette[1][2]);
}

TEST(Explanation, WritesTheFullFileSet) {
    ModelConfig cfg;
    cfg.num_classes = 2;
    cfg.dim = 8;
    cfg.heads = 2;
    const auto model = ComfeModel::init(cfg, 3);
    Tensor<float> z({6, 8});
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = float(std::sin(double(i)));
    const auto e = explain(model, z, 2, 3);
    const auto dir = scratch("full");
    write_explanation(e, 2, dir.string(), 32);
    for (const auto &f : kExplanationFiles) EXPECT_TRUE(fs::exists(dir / f)) << f;
    EXPECT_EQ(slurp(dir / "confidence.pgm").size(), std::string("P5\n32 32\n65535\n").size() + 32 * 32 * 2);
    EXPECT_EQ(slurp(dir / "features.ppm").size(), std::string("P6\n32 32\n255\n").size() + 32 * 32 * 3);
    const auto scores = slurp(dir / "scores.txt");
    EXPECT_TRUE(scores.starts_with("predicted="));
    EXPECT_NE(scores.find("background "), std::string::npos);
    EXPECT_TRUE(slurp(dir / "grid.txt").starts_with("confidence 2 3\n"));
    EXPECT_TRUE(slurp(dir / "similarity.txt").starts_with("label_posterior 5 3\n"));
}
