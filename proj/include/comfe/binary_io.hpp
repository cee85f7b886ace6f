#pragma once

// Little-endian primitive encoding with byte-offset tracking.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "comfe/errors.hpp"

namespace comfe {

class BinaryWriter {
   public:
    explicit BinaryWriter(std::ostream &os) : os_(os) {}

    void u8(std::uint8_t v) { put_le(v, 1); }
    void u16(std::uint16_t v) { put_le(v, 2); }
    void u32(std::uint32_t v) { put_le(v, 4); }
    void u64(std::uint64_t v) { put_le(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    void bytes(std::string_view s) {
        os_.write(s.data(), std::streamsize(s.size()));
        offset_ += s.size();
    }

    // u32 length prefix followed by the raw bytes.
    void string(std::string_view s) {
        u32(std::uint32_t(s.size()));
        bytes(s);
    }

    void f32_array(std::span<const float> xs) {
        if constexpr (std::endian::native == std::endian::little) {
            os_.write(reinterpret_cast<const char *>(xs.data()), std::streamsize(xs.size() * 4));
            offset_ += xs.size() * 4;
        } else {
            for (float x : xs) f32(x);
        }
    }

    std::uint64_t offset() const { return offset_; }
    bool ok() const { return bool(os_); }

   private:
    void put_le(std::uint64_t v, int n) {
        std::array<char, 8> buf{};
        for (int i = 0; i < n; ++i) buf[i] = char((v >> (8 * i)) & 0xff);
        os_.write(buf.data(), n);
        offset_ += std::uint64_t(n);
    }

    std::ostream &os_;
    std::uint64_t offset_ = 0;
};

class BinaryReader {
   public:
    explicit BinaryReader(std::istream &is, std::uint64_t start = 0) : is_(is), offset_(start) {}

    std::uint8_t u8() { return std::uint8_t(get_le(1)); }
    std::uint16_t u16() { return std::uint16_t(get_le(2)); }
    std::uint32_t u32() { return std::uint32_t(get_le(4)); }
    std::uint64_t u64() { return get_le(8); }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }

    std::string bytes(std::size_t n) {
        std::string s(n, '\0');
        read_raw(s.data(), n);
        return s;
    }

    std::string string(std::size_t max_len = 1u << 30) {
        const auto at = offset_;
        const auto n = u32();
        if (n > max_len) {
            throw FormatError(FormatError::Kind::inconsistent, at, "string length " + std::to_string(n) + " too large");
        }
        return bytes(n);
    }

    void f32_array(std::span<float> out) {
        if constexpr (std::endian::native == std::endian::little) {
            read_raw(reinterpret_cast<char *>(out.data()), out.size() * 4);
        } else {
            for (auto &x : out) x = f32();
        }
    }

    std::uint64_t offset() const { return offset_; }

   private:
    void read_raw(char *dst, std::size_t n) {
        is_.read(dst, std::streamsize(n));
        const auto got = std::uint64_t(is_.gcount());
        if (got != n) {
            throw FormatError(FormatError::Kind::truncated, offset_ + got,
                              "needed " + std::to_string(n) + " bytes, found " + std::to_string(got));
        }
        offset_ += n;
    }

    std::uint64_t get_le(int n) {
        std::array<unsigned char, 8> buf{};
        read_raw(reinterpret_cast<char *>(buf.data()), std::size_t(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= std::uint64_t(buf[i]) << (8 * i);
        return v;
    }

    std::istream &is_;
    std::uint64_t offset_;
};

}  // namespace comfe
