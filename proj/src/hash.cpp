#include "dedtwin/hash.hpp"

#include <array>
#include <cstdio>
#include <fstream>

#include "dedtwin/error.hpp"

namespace dedtwin {

std::uint64_t fnv1a_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError("cannot read " + path.string());
    std::array<char, 1 << 16> buf;
    std::uint64_t h = kFnvOffset;
    while (in) {
        in.read(buf.data(), buf.size());
        h = fnv1a(buf.data(), static_cast<std::size_t>(in.gcount()), h);
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char out[17];
    std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(v));
    return out;
}

}  // namespace dedtwin
