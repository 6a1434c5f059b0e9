#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sraa/errors.hpp"

namespace sraa::io {

inline void write_exact(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!os) throw IoError("write failed");
}

/// Short reads are format violations, not I/O errors: the stream was opened
/// fine, the payload just ends too early.
inline void read_exact(std::istream& is, void* p, std::size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) {
        throw FormatError("truncated file: expected " + std::to_string(n) + " more bytes");
    }
}

// Fixed little-endian byte order regardless of host, so files are portable
// and byte-identical across platforms.

inline void write_u16le(std::ostream& os, std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xFF),
                                static_cast<unsigned char>((v >> 8) & 0xFF)};
    write_exact(os, b, 2);
}

inline void write_u32le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    write_exact(os, b, 4);
}

inline void write_u64le(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    write_exact(os, b, 8);
}

inline void write_f64le(std::ostream& os, double v) {
    write_u64le(os, std::bit_cast<std::uint64_t>(v));
}

inline std::uint16_t read_u16le(std::istream& is) {
    unsigned char b[2];
    read_exact(is, b, 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t read_u32le(std::istream& is) {
    unsigned char b[4];
    read_exact(is, b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline std::uint64_t read_u64le(std::istream& is) {
    unsigned char b[8];
    read_exact(is, b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline double read_f64le(std::istream& is) {
    return std::bit_cast<double>(read_u64le(is));
}

inline void write_f64_span(std::ostream& os, std::span<const double> xs) {
    for (double x : xs) write_f64le(os, x);
}

inline std::vector<double> read_f64_vec(std::istream& is, std::size_t n) {
    std::vector<double> out(n);
    for (double& x : out) x = read_f64le(is);
    return out;
}

inline void write_magic(std::ostream& os, std::string_view magic) {
    write_exact(os, magic.data(), magic.size());
}

inline void expect_magic(std::istream& is, std::string_view magic) {
    std::string got(magic.size(), '\0');
    is.read(got.data(), static_cast<std::streamsize>(magic.size()));
    if (static_cast<std::size_t>(is.gcount()) != magic.size() || got != magic) {
        throw FormatError("bad magic: expected \"" + std::string(magic) + "\"");
    }
}

}  // namespace sraa::io
