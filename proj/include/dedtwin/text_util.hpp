#pragma once

// Small string helpers shared by the key = value readers.

#include <charconv>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dedtwin/error.hpp"

namespace dedtwin::text {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::string strip_comment(const std::string& s) {
    const auto p = s.find('#');
    return p == std::string::npos ? s : s.substr(0, p);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(s);
    while (std::getline(is, cell, sep)) out.push_back(trim(cell));
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

inline std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string w;
    while (is >> w) out.push_back(w);
    return out;
}

inline std::optional<std::pair<std::string, std::string>> split_kv(const std::string& s) {
    const auto p = s.find('=');
    if (p == std::string::npos) return std::nullopt;
    return std::make_pair(trim(s.substr(0, p)), trim(s.substr(p + 1)));
}

inline double to_double(const std::string& s, const std::string& context = {}) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (trim(s.substr(used)).empty()) return v;
    } catch (const std::exception&) {
    }
    throw FormatError((context.empty() ? "" : context + ": ") + "not a number: '" + s + "'");
}

inline long long to_int(const std::string& s, const std::string& context = {}) {
    long long v = 0;
    const std::string t = trim(s);
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || ptr != t.data() + t.size()) {
        throw FormatError((context.empty() ? "" : context + ": ") + "not an integer: '" + s + "'");
    }
    return v;
}

}  // namespace dedtwin::text
