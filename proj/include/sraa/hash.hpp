#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string_view>
#include <vector>

namespace sraa {

inline std::uint64_t fnv1a64(const void* bytes, std::size_t len,
                             std::uint64_t h = 0xCBF29CE484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xCBF29CE484222325ULL) {
    return fnv1a64(s.data(), s.size(), h);
}

inline std::uint64_t fnv1a64(std::span<const double> v, std::uint64_t h = 0xCBF29CE484222325ULL) {
    return fnv1a64(v.data(), v.size() * sizeof(double), h);
}

}  // namespace sraa
