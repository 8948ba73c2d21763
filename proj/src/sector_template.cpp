// SPDX-License-Identifier: Apache-2.0

#include "rayserde/sector_template.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include <fmt/format.h>
#include <zlib.h>

#include "rayserde/error.hpp"
#include "rayserde/parallel.hpp"

namespace rayserde {

static_assert(std::endian::native == std::endian::little,
              "template format assumes a little-endian host");

namespace L = order_key_layout;

void SectorConfig::validate() const {
    if (!(delta_theta > 0.0 && delta_theta <= 360.0) || !std::isfinite(delta_theta)) {
        throw ConfigError(fmt::format("delta_theta {} not in (0, 360]", delta_theta));
    }
    const double n = 360.0 / delta_theta;
    if (std::abs(n - std::round(n)) > 1e-9 * n) {
        throw ConfigError(fmt::format("delta_theta {} does not divide 360", delta_theta));
    }
    if (std::round(n) > 65535.0) {
        throw ConfigError(
            fmt::format("delta_theta {} yields more than 65535 sectors", delta_theta));
    }
    if (!std::isfinite(center_x) || !std::isfinite(center_y)) {
        throw ConfigError("sector center must be finite");
    }
}

std::uint32_t SectorConfig::sector_count() const {
    validate();
    return static_cast<std::uint32_t>(std::lround(360.0 / delta_theta));
}

double azimuth_deg(double r_x, double r_y) {
    if (r_x == 0.0 && r_y == 0.0) return 0.0;
    const double deg = std::atan2(r_y, r_x) * (180.0 / std::numbers::pi) + 360.0;
    const double theta = std::fmod(deg, 360.0);
    // fmod keeps the result in [0, 360); -0.0 cannot occur since deg > 0.
    return theta;
}

std::uint32_t sector_of(double theta, double delta_theta) {
    const SectorConfig cfg{delta_theta, 0.0, 0.0};
    const std::uint32_t count = cfg.sector_count();
    if (!(theta >= 0.0 && theta < 360.0)) {
        throw BoundsError(fmt::format("theta {} outside [0, 360)", theta));
    }
    const auto s = static_cast<std::uint32_t>(std::floor(theta / delta_theta));
    return std::min(s, count - 1);
}

std::uint32_t quantize_theta(double theta) {
    const double q = std::floor(theta * (static_cast<double>(L::kThetaLevels) / 360.0));
    if (q <= 0.0) return 0;
    if (q >= static_cast<double>(L::kThetaLevels - 1)) {
        return static_cast<std::uint32_t>(L::kThetaLevels - 1);
    }
    return static_cast<std::uint32_t>(q);
}

std::uint32_t quantize_radius(double radius) {
    const double q = std::floor(radius * L::kRadiusScale);
    if (q <= 0.0) return 0;
    if (q >= static_cast<double>(L::kRadiusMax)) return static_cast<std::uint32_t>(L::kRadiusMax);
    return static_cast<std::uint32_t>(q);
}

OrderKey order_key(std::int32_t z, double theta, double radius, std::int32_t depth) {
    if (depth < 1 || static_cast<std::uint64_t>(depth) > L::kLayerMax + 1) {
        throw BoundsError(fmt::format("depth {} outside key layer range", depth));
    }
    if (z < 0 || z >= depth) {
        throw BoundsError(fmt::format("layer z={} outside [0, {})", z, depth));
    }
    if (!(theta >= 0.0 && theta < 360.0)) {
        throw BoundsError(fmt::format("theta {} outside [0, 360)", theta));
    }
    if (!(radius >= 0.0)) {
        throw BoundsError(fmt::format("radius {} must be >= 0", radius));
    }
    const auto layer_rank = static_cast<std::uint64_t>(depth - 1 - z);
    return (layer_rank << L::kLayerShift) |
           (static_cast<std::uint64_t>(quantize_theta(theta)) << L::kRadiusBits) |
           static_cast<std::uint64_t>(quantize_radius(radius));
}

std::uint32_t key_layer_rank(OrderKey key) {
    return static_cast<std::uint32_t>(key >> L::kLayerShift);
}
std::uint32_t key_theta(OrderKey key) {
    return static_cast<std::uint32_t>((key >> L::kRadiusBits) & (L::kThetaLevels - 1));
}
std::uint32_t key_radius(OrderKey key) {
    return static_cast<std::uint32_t>(key & L::kRadiusMax);
}

CellOrdering compute_cell_ordering(const Cell& cell, std::int32_t depth,
                                   const SectorConfig& config) {
    CellOrdering o;
    const double r_x = static_cast<double>(cell.x) - config.center_x;
    const double r_y = static_cast<double>(cell.y) - config.center_y;
    o.theta = azimuth_deg(r_x, r_y);
    o.radius = std::hypot(r_x, r_y);
    o.sector = sector_of(o.theta, config.delta_theta);
    o.key = order_key(cell.z, o.theta, o.radius, depth);
    return o;
}

SectorTemplate build_template(const VoxelGridSpec& spec, const SectorConfig& config,
                              const BuildOptions& options) {
    spec.validate();
    config.validate();
    const std::size_t cells = spec.cell_count();
    const std::size_t bytes = cells * (sizeof(std::uint16_t) + sizeof(OrderKey));
    if (bytes / (sizeof(std::uint16_t) + sizeof(OrderKey)) != cells ||
        bytes > options.memory_cap_bytes) {
        throw CapacityError(fmt::format("template needs {} bytes, cap is {}", bytes,
                                        options.memory_cap_bytes));
    }

    SectorTemplate t;
    t.dims = spec.dims;
    t.config = config;
    t.sector_of_cell.resize(cells);
    t.key_of_cell.resize(cells);

    const std::int32_t Z = spec.dims[0];
    const std::int32_t Y = spec.dims[1];
    const std::int32_t X = spec.dims[2];
    const std::size_t plane = static_cast<std::size_t>(Y) * static_cast<std::size_t>(X);
    // Azimuth and sector depend only on (y, x); rows of the BEV plane are
    // independent, so split the work by row.
    parallel_for(static_cast<std::size_t>(Y), options.workers, [&](std::size_t yi) {
        const auto y = static_cast<std::int32_t>(yi);
        for (std::int32_t x = 0; x < X; ++x) {
            const CellOrdering base = compute_cell_ordering({0, y, x}, Z, config);
            const std::size_t bev = yi * static_cast<std::size_t>(X) + static_cast<std::size_t>(x);
            const OrderKey low = base.key & ((std::uint64_t{1} << L::kLayerShift) - 1);
            for (std::int32_t z = 0; z < Z; ++z) {
                const std::size_t idx = static_cast<std::size_t>(z) * plane + bev;
                t.sector_of_cell[idx] = static_cast<std::uint16_t>(base.sector);
                t.key_of_cell[idx] =
                    (static_cast<std::uint64_t>(Z - 1 - z) << L::kLayerShift) | low;
            }
        }
    });
    return t;
}

// ---------------------------------------------------------------------------
// File format

namespace {

constexpr char kMagic[4] = {'R', 'A', 'Y', 'T'};
constexpr std::size_t kHeaderBytes = 4 + 4 * 4 + 3 * 8;

template <typename T>
void put(std::vector<unsigned char>& buf, const T& v) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    buf.insert(buf.end(), p, p + sizeof(T));
}

template <typename T>
T get(const std::vector<unsigned char>& buf, std::size_t offset) {
    T v;
    std::memcpy(&v, buf.data() + offset, sizeof(T));
    return v;
}

std::uint32_t crc32_of(const unsigned char* data, std::size_t len) {
    uLong crc = crc32(0L, Z_NULL, 0);
    while (len > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(len, 1u << 30));
        crc = crc32(crc, data, chunk);
        data += chunk;
        len -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

}  // namespace

void write_template(const SectorTemplate& t, const std::filesystem::path& path) {
    const std::size_t cells = t.cell_count();
    if (t.key_of_cell.size() != cells ||
        cells != static_cast<std::size_t>(t.dims[0]) * t.dims[1] * t.dims[2]) {
        throw ContractError("template arrays do not match dims");
    }
    std::vector<unsigned char> buf;
    buf.reserve(kHeaderBytes + cells * 10 + 4);
    buf.insert(buf.end(), kMagic, kMagic + 4);
    put(buf, kTemplateFormatVersion);
    for (int a = 0; a < 3; ++a) put(buf, static_cast<std::uint32_t>(t.dims[a]));
    put(buf, t.config.delta_theta);
    put(buf, t.config.center_x);
    put(buf, t.config.center_y);
    const auto* s = reinterpret_cast<const unsigned char*>(t.sector_of_cell.data());
    buf.insert(buf.end(), s, s + cells * sizeof(std::uint16_t));
    const auto* k = reinterpret_cast<const unsigned char*>(t.key_of_cell.data());
    buf.insert(buf.end(), k, k + cells * sizeof(OrderKey));
    put(buf, crc32_of(buf.data() + 4, buf.size() - 4));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(fmt::format("cannot write '{}'", path.string()));
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
    if (!out) throw FormatError(fmt::format("short write to '{}'", path.string()));
}

SectorTemplate read_template(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(fmt::format("cannot open '{}'", path.string()));
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());

    if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0) {
        throw FormatError("magic: expected 'RAYT'");
    }
    if (buf.size() < 8) {
        throw FormatError(fmt::format("version: truncated (file is {} bytes)", buf.size()));
    }
    const auto version = get<std::uint32_t>(buf, 4);
    if (version != kTemplateFormatVersion) {
        throw FormatError(fmt::format("version: expected {}, got {}", kTemplateFormatVersion,
                                      version));
    }
    if (buf.size() < kHeaderBytes) {
        throw FormatError(fmt::format("header: expected {} bytes, got {}", kHeaderBytes,
                                      buf.size()));
    }
    SectorTemplate t;
    for (int a = 0; a < 3; ++a) {
        const auto d = get<std::uint32_t>(buf, 8 + 4 * a);
        if (d == 0 || d > static_cast<std::uint32_t>(INT32_MAX)) {
            throw FormatError(fmt::format("dims[{}]: invalid value {}", a, d));
        }
        t.dims[a] = static_cast<std::int32_t>(d);
    }
    t.config.delta_theta = get<double>(buf, 20);
    t.config.center_x = get<double>(buf, 28);
    t.config.center_y = get<double>(buf, 36);
    try {
        t.config.validate();
    } catch (const ConfigError& e) {
        throw FormatError(fmt::format("delta_theta: {}", e.what()));
    }

    const std::size_t cells =
        static_cast<std::size_t>(t.dims[0]) * t.dims[1] * static_cast<std::size_t>(t.dims[2]);
    const std::size_t expected = kHeaderBytes + cells * 10 + 4;
    if (buf.size() != expected) {
        const char* field = buf.size() < kHeaderBytes + cells * 2 ? "sector_of_cell"
                            : buf.size() < expected - 4           ? "key_of_cell"
                            : buf.size() < expected               ? "crc32"
                                                                  : "trailing data";
        throw FormatError(fmt::format("{}: expected file length {} bytes, got {}", field,
                                      expected, buf.size()));
    }
    const auto stored_crc = get<std::uint32_t>(buf, expected - 4);
    const std::uint32_t actual_crc = crc32_of(buf.data() + 4, expected - 8);
    if (stored_crc != actual_crc) {
        throw FormatError(fmt::format("crc32: stored {:08x}, computed {:08x}", stored_crc,
                                      actual_crc));
    }
    t.sector_of_cell.resize(cells);
    t.key_of_cell.resize(cells);
    std::memcpy(t.sector_of_cell.data(), buf.data() + kHeaderBytes, cells * 2);
    std::memcpy(t.key_of_cell.data(), buf.data() + kHeaderBytes + cells * 2, cells * 8);
    return t;
}

}  // namespace rayserde
