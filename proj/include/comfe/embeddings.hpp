#pragma once

// CFEB embedding container.
//
//   offset  size  field
//   0       4     magic "CFEB"
//   4       4     version (u32, currently 1)
//   8       4     image count (u32)
//   12      4     N_Z patches per image (u32)
//   16      4     d embedding width (u32)
//   20      2     grid height H_p (u16)
//   22      2     grid width W_p (u16)
//   24      1     views per image (u8, 1 or 2)
//   25      4     label-space size c (u32)
//   29      ...   per image: label (u32), then views × N_Z × d f32, row-major
//
// All integers and floats are little-endian; there is no padding.

#include <cstdint>
#include <fstream>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>

#include "comfe/binary_io.hpp"
#include "comfe/dataset.hpp"
#include "comfe/errors.hpp"

namespace comfe {

inline constexpr char kEmbeddingMagic[4] = {'C', 'F', 'E', 'B'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;
inline constexpr std::uint64_t kEmbeddingHeaderBytes = 29;

struct EmbeddingHeader {
    std::uint32_t images = 0;
    std::uint32_t n_patches = 0;
    std::uint32_t dim = 0;
    std::uint16_t grid_h = 0;
    std::uint16_t grid_w = 0;
    std::uint8_t views = 1;
    std::uint32_t num_classes = 0;

    std::uint64_t image_bytes() const { return 4 + std::uint64_t(views) * n_patches * dim * 4; }
    std::uint64_t file_bytes() const { return kEmbeddingHeaderBytes + std::uint64_t(images) * image_bytes(); }
};

inline void write_embeddings(const EmbeddingDataset &ds, std::ostream &os) {
    ds.validate();
    if (ds.grid_h > 0xffff || ds.grid_w > 0xffff) throw DataError("grid dimensions exceed u16");
    BinaryWriter w(os);
    w.bytes(std::string_view(kEmbeddingMagic, 4));
    w.u32(kEmbeddingVersion);
    w.u32(std::uint32_t(ds.images.size()));
    w.u32(std::uint32_t(ds.n_patches));
    w.u32(std::uint32_t(ds.dim));
    w.u16(std::uint16_t(ds.grid_h));
    w.u16(std::uint16_t(ds.grid_w));
    w.u8(std::uint8_t(ds.views));
    w.u32(std::uint32_t(ds.num_classes));
    for (const auto &img : ds.images) {
        w.u32(img.label);
        w.f32_array(img.view.data());
        if (img.paired) w.f32_array(img.paired->data());
    }
    if (!w.ok()) throw DataError("write failed");
}

inline void write_embeddings(const EmbeddingDataset &ds, const std::string &path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot create " + path);
    write_embeddings(ds, os);
}

// Streaming reader: validates the header and total length up front, then
// yields one image at a time.
class EmbeddingReader {
   public:
    explicit EmbeddingReader(std::istream &is) : is_(is), reader_(is) { open(); }

    explicit EmbeddingReader(const std::string &path)
        : owned_(std::make_unique<std::ifstream>(path, std::ios::binary)), is_(*owned_), reader_(is_) {
        if (!*owned_) throw DataError("cannot open " + path);
        open();
    }

    const EmbeddingHeader &header() const { return header_; }
    std::size_t remaining() const { return header_.images - consumed_; }

    std::optional<EmbeddedImage> next() {
        if (consumed_ == header_.images) return std::nullopt;
        EmbeddedImage img;
        const auto label_at = reader_.offset();
        img.label = reader_.u32();
        if (img.label >= header_.num_classes) {
            throw FormatError(FormatError::Kind::inconsistent, label_at,
                              "label " + std::to_string(img.label) + " outside label space of " +
                                  std::to_string(header_.num_classes));
        }
        img.view = Tensor<float>({header_.n_patches, header_.dim});
        reader_.f32_array(img.view.data());
        if (header_.views == 2) {
            img.paired.emplace(Shape{header_.n_patches, header_.dim});
            reader_.f32_array(img.paired->data());
        }
        ++consumed_;
        return img;
    }

   private:
    void open() {
        is_.seekg(0, std::ios::end);
        const auto end = is_.tellg();
        is_.seekg(0, std::ios::beg);
        const std::uint64_t size = end < 0 ? 0 : std::uint64_t(end);

        if (reader_.bytes(4) != std::string_view(kEmbeddingMagic, 4)) {
            throw FormatError(FormatError::Kind::bad_magic, 0, "expected CFEB");
        }
        const auto version = reader_.u32();
        if (version != kEmbeddingVersion) {
            throw FormatError(FormatError::Kind::version_mismatch, 4,
                              "file version " + std::to_string(version) + ", reader supports " +
                                  std::to_string(kEmbeddingVersion));
        }
        header_.images = reader_.u32();
        header_.n_patches = reader_.u32();
        header_.dim = reader_.u32();
        header_.grid_h = reader_.u16();
        header_.grid_w = reader_.u16();
        header_.views = reader_.u8();
        header_.num_classes = reader_.u32();

        if (header_.n_patches == 0 || header_.dim == 0) {
            throw FormatError(FormatError::Kind::inconsistent, 12, "zero patches or zero width");
        }
        if (std::uint64_t(header_.grid_h) * header_.grid_w != header_.n_patches) {
            throw FormatError(FormatError::Kind::inconsistent, 20,
                              "grid " + std::to_string(header_.grid_h) + "x" + std::to_string(header_.grid_w) +
                                  " does not cover N_Z = " + std::to_string(header_.n_patches));
        }
        if (header_.views != 1 && header_.views != 2) {
            throw FormatError(FormatError::Kind::inconsistent, 24,
                              "views must be 1 or 2, got " + std::to_string(header_.views));
        }
        if (header_.num_classes == 0) {
            throw FormatError(FormatError::Kind::inconsistent, 25, "empty label space");
        }
        const auto expected = header_.file_bytes();
        if (size < expected) {
            throw FormatError(FormatError::Kind::truncated, size,
                              "header promises " + std::to_string(expected) + " bytes");
        }
        if (size > expected) {
            throw FormatError(FormatError::Kind::inconsistent, expected,
                              std::to_string(size - expected) + " trailing bytes");
        }
    }

    std::unique_ptr<std::ifstream> owned_;
    std::istream &is_;
    BinaryReader reader_;
    EmbeddingHeader header_;
    std::uint32_t consumed_ = 0;
};

inline EmbeddingDataset read_embeddings(EmbeddingReader &reader) {
    EmbeddingDataset ds;
    const auto &h = reader.header();
    ds.num_classes = h.num_classes;
    ds.n_patches = h.n_patches;
    ds.dim = h.dim;
    ds.grid_h = h.grid_h;
    ds.grid_w = h.grid_w;
    ds.views = h.views;
    ds.images.reserve(h.images);
    while (auto img = reader.next()) ds.images.push_back(std::move(*img));
    return ds;
}

inline EmbeddingDataset read_embeddings(std::istream &is) {
    EmbeddingReader reader(is);
    return read_embeddings(reader);
}

inline EmbeddingDataset read_embeddings(const std::string &path) {
    EmbeddingReader reader(path);
    return read_embeddings(reader);
}

// ---------------------------------------------------------------- patch masks
//
// Text format: a header line "masks <H_p> <W_p> <images>", then one line per
// image of N_Z characters '0'/'1' in row-major patch order.

inline void write_masks(const PatchMasks &m, std::ostream &os) {
    os << "masks " << m.grid_h << " " << m.grid_w << " " << m.masks.size() << "\n";
    for (const auto &row : m.masks) {
        for (auto b : row) os << (b ? '1' : '0');
        os << "\n";
    }
}

inline void write_masks(const PatchMasks &m, const std::string &path) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot create " + path);
    write_masks(m, os);
}

inline PatchMasks read_masks(std::istream &is) {
    PatchMasks m;
    std::string tag;
    std::size_t count = 0;
    if (!(is >> tag >> m.grid_h >> m.grid_w >> count) || tag != "masks") throw DataError("malformed mask header");
    const std::size_t n = m.grid_h * m.grid_w;
    for (std::size_t i = 0; i < count; ++i) {
        std::string line;
        if (!(is >> line) || line.size() != n) {
            throw DataError("mask line " + std::to_string(i) + " does not have " + std::to_string(n) + " cells");
        }
        std::vector<std::uint8_t> row(n);
        for (std::size_t k = 0; k < n; ++k) {
            if (line[k] != '0' && line[k] != '1') throw DataError("mask line " + std::to_string(i) + " has bad cell");
            row[k] = line[k] == '1';
        }
        m.masks.push_back(std::move(row));
    }
    return m;
}

inline PatchMasks read_masks(const std::string &path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open " + path);
    return read_masks(is);
}

}  // namespace comfe
