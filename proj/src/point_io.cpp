// SPDX-License-Identifier: Apache-2.0

#include "rayserde/point_io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "rayserde/error.hpp"

namespace rayserde {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace {

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

double parse_field(const std::string& text, std::size_t line, const char* name) {
    const std::string t = trim(text);
    try {
        std::size_t used = 0;
        const double v = std::stod(t, &used);
        if (used != t.size()) throw std::invalid_argument(t);
        return v;
    } catch (const std::exception&) {
        throw FormatError(fmt::format("line {}: cannot parse {} from '{}'", line, name, t));
    }
}

std::string stem_id(const std::filesystem::path& path) { return path.stem().string(); }

}  // namespace

PointCloud read_points_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(fmt::format("cannot open '{}'", path.string()));
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty CSV: missing header");
    std::string header;
    for (char c : line)
        if (c != ' ' && c != '\r' && c != '\t') header.push_back(c);
    if (header != "x,y,z,intensity") {
        throw FormatError(
            fmt::format("header: expected 'x,y,z,intensity', got '{}'", trim(line)));
    }
    PointCloud cloud;
    cloud.scene_id = stem_id(path);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ',')) cols.push_back(col);
        if (cols.size() != 4) {
            throw FormatError(
                fmt::format("line {}: expected 4 columns, got {}", lineno, cols.size()));
        }
        cloud.points.push_back({parse_field(cols[0], lineno, "x"),
                                parse_field(cols[1], lineno, "y"),
                                parse_field(cols[2], lineno, "z"),
                                parse_field(cols[3], lineno, "intensity")});
    }
    return cloud;
}

void write_points_csv(const PointCloud& cloud, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw FormatError(fmt::format("cannot write '{}'", path.string()));
    out << "x,y,z,intensity\n";
    for (const auto& p : cloud.points) {
        out << fmt::format("{},{},{},{}\n", p.x, p.y, p.z, p.intensity);
    }
}

PointCloud read_points_bin(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(fmt::format("cannot open '{}'", path.string()));
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    if (bytes.size() % 16 != 0) {
        throw FormatError(fmt::format(
            "payload length {} bytes is not a multiple of 16 (x,y,z,intensity float32)",
            bytes.size()));
    }
    PointCloud cloud;
    cloud.scene_id = stem_id(path);
    cloud.points.resize(bytes.size() / 16);
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        float v[4];
        std::memcpy(v, bytes.data() + i * 16, 16);
        cloud.points[i] = {v[0], v[1], v[2], v[3]};
    }
    return cloud;
}

void write_points_bin(const PointCloud& cloud, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError(fmt::format("cannot write '{}'", path.string()));
    for (const auto& p : cloud.points) {
        const float v[4] = {static_cast<float>(p.x), static_cast<float>(p.y),
                            static_cast<float>(p.z), static_cast<float>(p.intensity)};
        out.write(reinterpret_cast<const char*>(v), sizeof v);
    }
}

PointCloud read_points(const std::filesystem::path& path) {
    if (path.extension() == ".csv") return read_points_csv(path);
    return read_points_bin(path);
}

}  // namespace rayserde
