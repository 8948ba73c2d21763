// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "rayserde/voxel.hpp"

namespace rayserde {

/// CSV with header `x,y,z,intensity`.
PointCloud read_points_csv(const std::filesystem::path& path);
void write_points_csv(const PointCloud& cloud, const std::filesystem::path& path);

/// Headerless little-endian float32 quadruplets (x, y, z, intensity).
PointCloud read_points_bin(const std::filesystem::path& path);
void write_points_bin(const PointCloud& cloud, const std::filesystem::path& path);

/// Dispatches on extension: `.csv` is text, anything else is raw binary.
PointCloud read_points(const std::filesystem::path& path);

}  // namespace rayserde
