#pragma once

#include <cstdint>
#include <string>

namespace fse {

/// FNV-1a over the bytes of text. Stable across platforms; used to fingerprint
/// serialized configs in manifests and checkpoints.
inline std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string fnv1a64_hex(const std::string& text) {
    static const char* digits = "0123456789abcdef";
    std::uint64_t h = fnv1a64(text);
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

} // namespace fse
