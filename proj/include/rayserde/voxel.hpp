// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace rayserde {

struct Point {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    double intensity = 0.0;
};

/// A single LiDAR sweep. scene_id identifies the sample inside a batch.
struct PointCloud {
    std::vector<Point> points;
    std::string scene_id;

    /// Throws ConfigError on non-finite coordinates or intensity outside [0,1].
    void validate() const;
};

/// Integer cell index, ordered (z, y, x) like the grid shape [Z, Y, X].
struct Cell {
    std::int32_t z = 0;
    std::int32_t y = 0;
    std::int32_t x = 0;

    auto operator<=>(const Cell&) const = default;
};

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    bool operator==(const Vec3&) const = default;
};

/// Regular voxel grid. voxel_size and dims are (z, y, x); origin is the world
/// (x, y, z) of the corner of cell (0,0,0); center is the ego position in
/// fractional cell-index units (c_x, c_y).
struct VoxelGridSpec {
    std::array<double, 3> voxel_size{1.0, 1.0, 1.0};
    std::array<std::int32_t, 3> dims{1, 1, 1};
    Vec3 origin{};
    double center_x = 0.0;
    double center_y = 0.0;

    /// Grid with the ego at the BEV center ((X-1)/2, (Y-1)/2).
    static VoxelGridSpec centered(std::array<std::int32_t, 3> dims,
                                  std::array<double, 3> voxel_size,
                                  Vec3 origin);

    void validate() const;

    std::int32_t depth() const noexcept { return dims[0]; }
    std::int32_t height() const noexcept { return dims[1]; }
    std::int32_t width() const noexcept { return dims[2]; }
    std::size_t cell_count() const noexcept {
        return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
               static_cast<std::size_t>(dims[2]);
    }

    bool contains(const Cell& c) const noexcept {
        return c.z >= 0 && c.y >= 0 && c.x >= 0 && c.z < dims[0] && c.y < dims[1] &&
               c.x < dims[2];
    }

    /// Row-major (z, y, x) linear index. Caller guarantees contains(c).
    std::uint64_t linear_index(const Cell& c) const noexcept {
        return (static_cast<std::uint64_t>(c.z) * static_cast<std::uint64_t>(dims[1]) +
                static_cast<std::uint64_t>(c.y)) *
                   static_cast<std::uint64_t>(dims[2]) +
               static_cast<std::uint64_t>(c.x);
    }

    Cell cell_at(std::uint64_t linear) const noexcept;

    bool operator==(const VoxelGridSpec&) const = default;
};

/// Active voxels of one scene with a fixed number of feature channels per voxel.
/// Features are stored row-major: row i occupies [i*channels, (i+1)*channels).
struct SparseVoxelSet {
    VoxelGridSpec spec;
    std::vector<Cell> coords;
    std::size_t channels = 0;
    std::vector<double> features;
    std::vector<std::uint32_t> point_counts;
    std::string scene_id;

    std::size_t size() const noexcept { return coords.size(); }
    bool empty() const noexcept { return coords.empty(); }

    std::span<const double> feature(std::size_t row) const {
        return {features.data() + row * channels, channels};
    }
    std::span<double> feature(std::size_t row) {
        return {features.data() + row * channels, channels};
    }

    /// Checks uniqueness, bounds and array-length agreement.
    void validate() const;
};

enum class Reduce { mean, max, count_augmented_mean };

/// Result of voxelization: the voxel set plus how many points fell outside the grid.
struct VoxelizeResult {
    SparseVoxelSet voxels;
    std::size_t dropped = 0;
};

/// Per-point features are (x, y, z, intensity); count_augmented_mean appends
/// the point count as a fifth channel. Voxels are emitted in ascending linear
/// index order.
VoxelizeResult voxelize(const PointCloud& cloud, const VoxelGridSpec& spec,
                        Reduce reduce = Reduce::mean);

/// World (x, y, z) of the center of `cell`.
Vec3 voxel_center_world(const Cell& cell, const VoxelGridSpec& spec);

/// World (x, y) of the ego position implied by spec.center_x / center_y.
Vec3 ego_world(const VoxelGridSpec& spec);

Reduce parse_reduce(const std::string& name);
std::string to_string(Reduce r);

}  // namespace rayserde
