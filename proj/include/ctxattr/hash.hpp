#pragma once

#include <cstdint>
#include <string_view>

namespace ctxattr {

/// FNV-1a 64-bit. Used wherever a platform-stable string hash is needed
/// (test embedder buckets, mock backends); std::hash is not reproducible
/// across implementations.
inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 14695981039346656037ULL) {
    std::uint64_t h = seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace ctxattr
