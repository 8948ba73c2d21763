// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "rayserde/voxel.hpp"

namespace rayserde {

/// Azimuth partition of the BEV plane around the ego center.
struct SectorConfig {
    double delta_theta = 60.0;  // degrees, must divide 360
    double center_x = 0.0;      // cell units
    double center_y = 0.0;

    static SectorConfig from_grid(const VoxelGridSpec& spec, double delta_theta = 60.0) {
        return {delta_theta, spec.center_x, spec.center_y};
    }

    void validate() const;
    std::uint32_t sector_count() const;

    bool operator==(const SectorConfig&) const = default;
};

/// Packed 64-bit ordering key. Unsigned comparison gives: higher layer first,
/// then smaller azimuth, then smaller radius.
///
///   bits [63..40]  layer rank  (Z - 1 - z)
///   bits [39..16]  azimuth     floor(theta * 2^24 / 360)
///   bits [15..0]   radius      floor(radius * kRadiusScale), saturating
namespace order_key_layout {
inline constexpr int kThetaBits = 24;
inline constexpr int kRadiusBits = 16;
inline constexpr int kLayerShift = kThetaBits + kRadiusBits;
inline constexpr std::uint64_t kThetaLevels = std::uint64_t{1} << kThetaBits;
inline constexpr std::uint64_t kRadiusMax = (std::uint64_t{1} << kRadiusBits) - 1;
inline constexpr std::uint64_t kLayerMax = (std::uint64_t{1} << 24) - 1;
/// Radius resolution is 1/64 cell; saturates past ~1024 cells.
inline constexpr double kRadiusScale = 64.0;
/// Width of one azimuth quantization bucket in degrees.
inline constexpr double kThetaStep = 360.0 / static_cast<double>(kThetaLevels);
}  // namespace order_key_layout

using OrderKey = std::uint64_t;

/// Azimuth in degrees in [0, 360). (0, 0) maps to 0.
double azimuth_deg(double r_x, double r_y);

/// floor(theta / delta_theta), clamped into [0, 360/delta_theta).
std::uint32_t sector_of(double theta, double delta_theta);

std::uint32_t quantize_theta(double theta);
std::uint32_t quantize_radius(double radius);

/// Throws BoundsError if z is outside [0, depth) or theta outside [0, 360).
OrderKey order_key(std::int32_t z, double theta, double radius, std::int32_t depth);

std::uint32_t key_layer_rank(OrderKey key);
std::uint32_t key_theta(OrderKey key);
std::uint32_t key_radius(OrderKey key);

/// Dense per-cell (sector id, ordering key) lookup for a fixed grid.
struct SectorTemplate {
    std::array<std::int32_t, 3> dims{1, 1, 1};
    SectorConfig config;
    std::vector<std::uint16_t> sector_of_cell;
    std::vector<OrderKey> key_of_cell;

    std::size_t cell_count() const noexcept { return sector_of_cell.size(); }

    bool operator==(const SectorTemplate&) const = default;
};

struct BuildOptions {
    unsigned workers = 1;
    std::size_t memory_cap_bytes = std::size_t{1} << 30;
};

/// Per-cell azimuth/sector/key values computed directly from the cell index,
/// without a template. Serialization consistency checks compare against this.
struct CellOrdering {
    double theta = 0.0;
    double radius = 0.0;
    std::uint32_t sector = 0;
    OrderKey key = 0;
};
CellOrdering compute_cell_ordering(const Cell& cell, std::int32_t depth,
                                   const SectorConfig& config);

SectorTemplate build_template(const VoxelGridSpec& spec, const SectorConfig& config,
                              const BuildOptions& options = {});

inline constexpr std::uint32_t kTemplateFormatVersion = 1;

void write_template(const SectorTemplate& t, const std::filesystem::path& path);
SectorTemplate read_template(const std::filesystem::path& path);

}  // namespace rayserde
