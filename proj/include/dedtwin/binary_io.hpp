#pragma once

// Little-endian primitive readers/writers for the versioned binary containers.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "dedtwin/error.hpp"

namespace dedtwin::bin {

template <typename T>
    requires std::is_arithmetic_v<T>
void put(std::ostream& out, T v) {
    std::array<char, sizeof(T)> buf;
    std::memcpy(buf.data(), &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
    out.write(buf.data(), sizeof(T));
}

template <typename T>
    requires std::is_arithmetic_v<T>
T get(std::istream& in) {
    std::array<char, sizeof(T)> buf;
    if (!in.read(buf.data(), sizeof(T))) throw FormatError("unexpected end of binary stream");
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
    T v;
    std::memcpy(&v, buf.data(), sizeof(T));
    return v;
}

inline void put_magic(std::ostream& out, const char (&magic)[5]) { out.write(magic, 4); }

inline void expect_magic(std::istream& in, const char (&magic)[5]) {
    char buf[4];
    if (!in.read(buf, 4) || std::memcmp(buf, magic, 4) != 0) {
        throw FormatError(std::string("bad magic, expected '") + magic + "'");
    }
}

template <typename Range>
void put_doubles(std::ostream& out, const Range& values) {
    for (double v : values) put<double>(out, v);
}

}  // namespace dedtwin::bin
