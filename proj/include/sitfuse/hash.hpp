#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace sitfuse {

// FNV-1a 64-bit. Used for run-manifest content digests and for deriving
// per-node seeds from stable string ids; not cryptographic.
inline uint64_t fnv1a64(const void* data, size_t size, uint64_t state = 0xCBF29CE484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < size; ++i) {
        state ^= p[i];
        state *= 0x100000001B3ULL;
    }
    return state;
}

inline uint64_t fnv1a64(std::string_view text) { return fnv1a64(text.data(), text.size()); }

}  // namespace sitfuse
