#pragma once
#include <cerrno>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "core.hpp"

namespace spikeforest {

// All text output uses '\n' line endings, '.' decimal separator and 17
// significant digits for doubles, enough for exact round-trips.

inline std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline double parse_double(std::string_view s) {
    std::string tmp(s);
    errno = 0;
    char* end = nullptr;
    double v = std::strtod(tmp.c_str(), &end);
    if (end == tmp.c_str()) throw std::runtime_error("bad float field: '" + tmp + "'");
    return v;
}

inline long parse_long(std::string_view s) {
    long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw std::runtime_error("bad integer field: '" + std::string(s) + "'");
    return v;
}

inline std::vector<std::string> split_line(const std::string& line, char sep = ',') {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find(sep, start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

// Variable sets in files are ';'-joined 1-based indices; empty set is an
// empty field.
inline std::string join_set(const SubsetS& s) {
    std::string out;
    for (std::size_t i = 0; i < s.members.size(); ++i) {
        if (i) out += ';';
        out += std::to_string(s.members[i] + 1);
    }
    return out;
}

inline SubsetS parse_set(std::string_view field) {
    SubsetS out;
    if (field.empty()) return out;
    std::size_t start = 0;
    std::string str(field);
    while (start <= str.size()) {
        std::size_t pos = str.find(';', start);
        std::string tok = pos == std::string::npos ? str.substr(start)
                                                   : str.substr(start, pos - start);
        out.members.push_back(static_cast<int>(parse_long(tok)) - 1);
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    out.normalize();
    return out;
}

inline std::string join_rows(std::span<const int> rows) {
    std::string out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (i) out += ';';
        out += std::to_string(rows[i] + 1);
    }
    return out;
}

inline std::vector<int> parse_rows(std::string_view field) {
    std::vector<int> out;
    if (field.empty()) return out;
    std::string str(field);
    std::size_t start = 0;
    while (start <= str.size()) {
        std::size_t pos = str.find(';', start);
        std::string tok = pos == std::string::npos ? str.substr(start)
                                                   : str.substr(start, pos - start);
        out.push_back(static_cast<int>(parse_long(tok)) - 1);
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    return f;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    return f;
}

// ---------------------------------------------------------------------------
// Dataset files: header y,x1,...,xp; optional sidecar with 1-based support
// indices, one per line.
// ---------------------------------------------------------------------------

inline void write_dataset_csv(const std::string& path, const Dataset& d) {
    auto f = open_out(path);
    f << "y";
    for (int j = 1; j <= d.p; ++j) f << ",x" << j;
    f << "\n";
    for (int i = 0; i < d.n; ++i) {
        f << fmt17(d.y[static_cast<std::size_t>(i)]);
        for (int j = 0; j < d.p; ++j) f << ',' << fmt17(d.x(i, j));
        f << "\n";
    }
}

inline Dataset read_dataset_csv(const std::string& path) {
    auto f = open_in(path);
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("empty dataset file " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto header = split_line(line);
    if (header.empty() || header[0] != "y")
        throw std::runtime_error("dataset header must start with 'y'");
    Dataset d;
    d.p = static_cast<int>(header.size()) - 1;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_line(line);
        if (static_cast<int>(fields.size()) != d.p + 1)
            throw std::runtime_error("dataset row width mismatch");
        d.y.push_back(parse_double(fields[0]));
        for (int j = 1; j <= d.p; ++j)
            d.xs.push_back(parse_double(fields[static_cast<std::size_t>(j)]));
        ++d.n;
    }
    d.validate();
    return d;
}

inline void write_support(const std::string& path, const SubsetS& s) {
    auto f = open_out(path);
    for (int j : s.members) f << (j + 1) << "\n";
}

inline SubsetS read_support(const std::string& path) {
    auto f = open_in(path);
    SubsetS s;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        s.members.push_back(static_cast<int>(parse_long(line)) - 1);
    }
    s.normalize();
    return s;
}

} // namespace spikeforest
