// SPDX-License-Identifier: Apache-2.0

#include "rayserde/voxel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>

#include "rayserde/error.hpp"

namespace rayserde {

void PointCloud::validate() const {
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& p = points[i];
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z) ||
            !std::isfinite(p.intensity)) {
            throw ConfigError(fmt::format("point {}: non-finite value", i));
        }
        if (p.intensity < 0.0 || p.intensity > 1.0) {
            throw ConfigError(
                fmt::format("point {}: intensity {} outside [0,1]", i, p.intensity));
        }
    }
}

VoxelGridSpec VoxelGridSpec::centered(std::array<std::int32_t, 3> dims,
                                      std::array<double, 3> voxel_size, Vec3 origin) {
    VoxelGridSpec spec;
    spec.dims = dims;
    spec.voxel_size = voxel_size;
    spec.origin = origin;
    spec.center_x = (static_cast<double>(dims[2]) - 1.0) / 2.0;
    spec.center_y = (static_cast<double>(dims[1]) - 1.0) / 2.0;
    return spec;
}

void VoxelGridSpec::validate() const {
    static constexpr const char* kAxis[] = {"z", "y", "x"};
    for (int a = 0; a < 3; ++a) {
        if (dims[a] < 1) {
            throw ConfigError(fmt::format("dims.{} must be >= 1 (got {})", kAxis[a], dims[a]));
        }
        if (!(voxel_size[a] > 0.0) || !std::isfinite(voxel_size[a])) {
            throw ConfigError(
                fmt::format("voxel_size.{} must be > 0 (got {})", kAxis[a], voxel_size[a]));
        }
    }
    if (!std::isfinite(origin.x) || !std::isfinite(origin.y) || !std::isfinite(origin.z)) {
        throw ConfigError("origin must be finite");
    }
    if (!(center_x >= 0.0 && center_x < dims[2])) {
        throw ConfigError(fmt::format("center.x {} outside [0, {})", center_x, dims[2]));
    }
    if (!(center_y >= 0.0 && center_y < dims[1])) {
        throw ConfigError(fmt::format("center.y {} outside [0, {})", center_y, dims[1]));
    }
}

Cell VoxelGridSpec::cell_at(std::uint64_t linear) const noexcept {
    const auto X = static_cast<std::uint64_t>(dims[2]);
    const auto Y = static_cast<std::uint64_t>(dims[1]);
    Cell c;
    c.x = static_cast<std::int32_t>(linear % X);
    linear /= X;
    c.y = static_cast<std::int32_t>(linear % Y);
    c.z = static_cast<std::int32_t>(linear / Y);
    return c;
}

void SparseVoxelSet::validate() const {
    if (features.size() != coords.size() * channels) {
        throw ContractError(fmt::format("features length {} != coords {} x channels {}",
                                        features.size(), coords.size(), channels));
    }
    if (point_counts.size() != coords.size()) {
        throw ContractError(fmt::format("point_counts length {} != coords {}",
                                        point_counts.size(), coords.size()));
    }
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(coords.size());
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const Cell& c = coords[i];
        if (!spec.contains(c)) {
            throw BoundsError(
                fmt::format("voxel {}: cell ({},{},{}) outside grid", i, c.z, c.y, c.x));
        }
        if (!seen.insert(spec.linear_index(c)).second) {
            throw ContractError(
                fmt::format("voxel {}: duplicate cell ({},{},{})", i, c.z, c.y, c.x));
        }
        if (point_counts[i] < 1) {
            throw ContractError(fmt::format("voxel {}: point count must be >= 1", i));
        }
    }
}

namespace {

struct Accumulator {
    std::array<double, 4> sum{};
    std::array<double, 4> max{};
    std::uint32_t count = 0;
};

std::int64_t cell_coord(double p, double origin, double size) {
    const double f = std::floor((p - origin) / size);
    // Anything beyond int32 is certainly out of range; clamp to keep the cast defined.
    if (f < -1.0) return -1;
    if (f > static_cast<double>(std::numeric_limits<std::int32_t>::max()))
        return std::numeric_limits<std::int32_t>::max();
    return static_cast<std::int64_t>(f);
}

}  // namespace

VoxelizeResult voxelize(const PointCloud& cloud, const VoxelGridSpec& spec, Reduce reduce) {
    spec.validate();
    cloud.validate();

    std::unordered_map<std::uint64_t, Accumulator> cells;
    std::size_t dropped = 0;
    for (const Point& p : cloud.points) {
        const std::int64_t x = cell_coord(p.x, spec.origin.x, spec.voxel_size[2]);
        const std::int64_t y = cell_coord(p.y, spec.origin.y, spec.voxel_size[1]);
        const std::int64_t z = cell_coord(p.z, spec.origin.z, spec.voxel_size[0]);
        if (x < 0 || y < 0 || z < 0 || x >= spec.dims[2] || y >= spec.dims[1] ||
            z >= spec.dims[0]) {
            ++dropped;
            continue;
        }
        const Cell c{static_cast<std::int32_t>(z), static_cast<std::int32_t>(y),
                     static_cast<std::int32_t>(x)};
        Accumulator& acc = cells[spec.linear_index(c)];
        const std::array<double, 4> v{p.x, p.y, p.z, p.intensity};
        for (int k = 0; k < 4; ++k) {
            acc.sum[k] += v[k];
            acc.max[k] = acc.count == 0 ? v[k] : std::max(acc.max[k], v[k]);
        }
        ++acc.count;
    }

    std::vector<std::uint64_t> keys;
    keys.reserve(cells.size());
    for (const auto& [key, acc] : cells) keys.push_back(key);
    std::sort(keys.begin(), keys.end());

    VoxelizeResult out;
    out.dropped = dropped;
    SparseVoxelSet& vs = out.voxels;
    vs.spec = spec;
    vs.scene_id = cloud.scene_id;
    vs.channels = reduce == Reduce::count_augmented_mean ? 5 : 4;
    vs.coords.reserve(keys.size());
    vs.point_counts.reserve(keys.size());
    vs.features.reserve(keys.size() * vs.channels);
    for (std::uint64_t key : keys) {
        const Accumulator& acc = cells.at(key);
        vs.coords.push_back(spec.cell_at(key));
        vs.point_counts.push_back(acc.count);
        for (int k = 0; k < 4; ++k) {
            vs.features.push_back(reduce == Reduce::max ? acc.max[k]
                                                        : acc.sum[k] / acc.count);
        }
        if (reduce == Reduce::count_augmented_mean) {
            vs.features.push_back(static_cast<double>(acc.count));
        }
    }
    return out;
}

Vec3 voxel_center_world(const Cell& cell, const VoxelGridSpec& spec) {
    if (!spec.contains(cell)) {
        throw BoundsError(fmt::format("cell ({},{},{}) outside grid ({},{},{})", cell.z,
                                      cell.y, cell.x, spec.dims[0], spec.dims[1],
                                      spec.dims[2]));
    }
    return {spec.origin.x + (cell.x + 0.5) * spec.voxel_size[2],
            spec.origin.y + (cell.y + 0.5) * spec.voxel_size[1],
            spec.origin.z + (cell.z + 0.5) * spec.voxel_size[0]};
}

Vec3 ego_world(const VoxelGridSpec& spec) {
    return {spec.origin.x + (spec.center_x + 0.5) * spec.voxel_size[2],
            spec.origin.y + (spec.center_y + 0.5) * spec.voxel_size[1], 0.0};
}

Reduce parse_reduce(const std::string& name) {
    if (name == "mean") return Reduce::mean;
    if (name == "max") return Reduce::max;
    if (name == "count-augmented-mean") return Reduce::count_augmented_mean;
    throw ConfigError(fmt::format("unknown reduce '{}'", name));
}

std::string to_string(Reduce r) {
    switch (r) {
        case Reduce::mean: return "mean";
        case Reduce::max: return "max";
        case Reduce::count_augmented_mean: return "count-augmented-mean";
    }
    return "?";
}

}  // namespace rayserde
