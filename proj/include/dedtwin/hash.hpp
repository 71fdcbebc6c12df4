#pragma once

// 64-bit FNV-1a, used for point-set identity, config fingerprints and artifact checksums.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace dedtwin {

constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;

constexpr std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = kFnvOffset) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = kFnvOffset) { return fnv1a(s.data(), s.size(), h); }

/// Hash of a file's bytes; throws DependencyError when it cannot be read.
std::uint64_t fnv1a_file(const std::filesystem::path& path);

std::string hex64(std::uint64_t v);

}  // namespace dedtwin
