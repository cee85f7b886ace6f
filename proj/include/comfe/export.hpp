#pragma once

// Explanation export: upsampling and portable-anymap writers.
//
// write_explanation() creates these files in the target directory:
//   scores.txt      one "label score" line per label (background last)
//   confidence.pgm  P5, 16-bit, predicted-class confidence scaled to 0..65535
//   features.ppm    P6, component-feature map in a fixed 10-colour palette
//   grid.txt        patch-grid dumps of both maps as text matrices
//   similarity.txt  per image prototype: label-space posterior and raw
//                   per-class-prototype softmax entries

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "comfe/config.hpp"
#include "comfe/errors.hpp"
#include "comfe/inference.hpp"
#include "comfe/tensor.hpp"

namespace comfe {

inline constexpr std::array<std::array<std::uint8_t, 3>, 10> kFeaturePalette = {{
    {230, 25, 75},
    {60, 180, 75},
    {255, 225, 25},
    {0, 130, 200},
    {245, 130, 48},
    {145, 30, 180},
    {70, 240, 240},
    {240, 50, 230},
    {210, 245, 60},
    {250, 190, 212},
}};

inline const std::vector<std::string> kExplanationFiles = {"scores.txt", "confidence.pgm", "features.ppm",
                                                          "grid.txt", "similarity.txt"};

// Bilinear resampling with pixel centres at half-integer positions and edge
// clamping, so a constant grid stays constant.
inline Tensor<float> upsample_bilinear(const Tensor<float> &grid, std::size_t out_h, std::size_t out_w) {
    if (grid.rank() != 2 || out_h == 0 || out_w == 0) throw DimensionError("upsample needs a 2-D grid and target");
    const std::size_t h = grid.rows(), w = grid.cols();
    Tensor<float> out({out_h, out_w});
    auto axis = [](std::size_t o, std::size_t out_n, std::size_t in_n, std::size_t &i0, std::size_t &i1, double &t) {
        double s = (double(o) + 0.5) * double(in_n) / double(out_n) - 0.5;
        s = std::clamp(s, 0.0, double(in_n - 1));
        i0 = std::size_t(std::floor(s));
        i1 = std::min(i0 + 1, in_n - 1);
        t = s - double(i0);
    };
    for (std::size_t y = 0; y < out_h; ++y) {
        std::size_t y0, y1;
        double ty;
        axis(y, out_h, h, y0, y1, ty);
        for (std::size_t x = 0; x < out_w; ++x) {
            std::size_t x0, x1;
            double tx;
            axis(x, out_w, w, x0, x1, tx);
            const double top = (1 - tx) * grid(y0, x0) + tx * grid(y0, x1);
            const double bot = (1 - tx) * grid(y1, x0) + tx * grid(y1, x1);
            out(y, x) = float((1 - ty) * top + ty * bot);
        }
    }
    return out;
}

// Index maps are resized by nearest neighbour so no new indices appear.
inline Tensor<std::uint32_t> upsample_nearest(const Tensor<std::uint32_t> &grid, std::size_t out_h, std::size_t out_w) {
    Tensor<std::uint32_t> out({out_h, out_w});
    for (std::size_t y = 0; y < out_h; ++y)
        for (std::size_t x = 0; x < out_w; ++x) out(y, x) = grid(y * grid.rows() / out_h, x * grid.cols() / out_w);
    return out;
}

inline void write_pgm16(const Tensor<float> &img, const std::string &path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot create " + path);
    os << "P5\n" << img.cols() << " " << img.rows() << "\n65535\n";
    for (float v : img.data()) {
        const auto q = std::uint16_t(std::lround(std::clamp(double(v), 0.0, 1.0) * 65535.0));
        const char bytes[2] = {char(q >> 8), char(q & 0xff)};
        os.write(bytes, 2);
    }
    if (!os) throw DataError("write failed: " + path);
}

inline void write_ppm_palette(const Tensor<std::uint32_t> &indices, const std::string &path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot create " + path);
    os << "P6\n" << indices.cols() << " " << indices.rows() << "\n255\n";
    for (auto idx : indices.data()) {
        const auto &c = kFeaturePalette[idx % kFeaturePalette.size()];
        os.write(reinterpret_cast<const char *>(c.data()), 3);
    }
    if (!os) throw DataError("write failed: " + path);
}

inline void write_explanation(const Explanation &e, std::size_t num_classes, const std::string &dir,
                              std::size_t resolution = 224) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create directory " + dir + ": " + ec.message());
    const auto at = [&](const char *name) { return (fs::path(dir) / name).string(); };
    using detail::format_double;

    {
        std::ofstream os(at("scores.txt"));
        os << "predicted=" << (e.prediction.label ? std::to_string(*e.prediction.label) : std::string("none")) << "\n";
        for (std::size_t l = 0; l < e.class_scores.size(); ++l) {
            os << (l < num_classes ? std::to_string(l) : std::string("background")) << " "
               << format_double(e.class_scores[l]) << "\n";
        }
        if (!os) throw DataError("write failed: " + at("scores.txt"));
    }
    write_pgm16(upsample_bilinear(e.confidence_map, resolution, resolution), at("confidence.pgm"));
    write_ppm_palette(upsample_nearest(e.feature_map, resolution, resolution), at("features.ppm"));
    {
        std::ofstream os(at("grid.txt"));
        os << "confidence " << e.grid_h << " " << e.grid_w << "\n";
        for (std::size_t y = 0; y < e.grid_h; ++y) {
            for (std::size_t x = 0; x < e.grid_w; ++x) os << (x ? " " : "") << format_double(e.confidence_map(y, x));
            os << "\n";
        }
        os << "features " << e.grid_h << " " << e.grid_w << "\n";
        for (std::size_t y = 0; y < e.grid_h; ++y) {
            for (std::size_t x = 0; x < e.grid_w; ++x) os << (x ? " " : "") << e.feature_map(y, x);
            os << "\n";
        }
        if (!os) throw DataError("write failed: " + at("grid.txt"));
    }
    {
        std::ofstream os(at("similarity.txt"));
        auto dump = [&](const char *tag, const Tensor<float> &t) {
            os << tag << " " << t.rows() << " " << t.cols() << "\n";
            for (std::size_t r = 0; r < t.rows(); ++r) {
                for (std::size_t c = 0; c < t.cols(); ++c) os << (c ? " " : "") << format_double(t(r, c));
                os << "\n";
            }
        };
        dump("label_posterior", e.similarity);
        dump("class_prototype_softmax", e.prototype_similarity);
        if (!os) throw DataError("write failed: " + at("similarity.txt"));
    }
}

}  // namespace comfe
