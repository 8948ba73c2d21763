// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "rayserde/voxel.hpp"

namespace rayserde {

/// Largest per-axis bit count for which three interleaved axes fit in 63 bits.
inline constexpr int kMaxCurveOrder = 21;

/// 3D Hilbert index of `cell` inside the 2^order cube (Skilling's transpose
/// construction). Consecutive indices map to face-adjacent cells.
std::uint64_t hilbert_key(const Cell& cell, int order);
Cell hilbert_cell(std::uint64_t key, int order);

/// Z-order index: bits interleaved z (most significant), y, x.
std::uint64_t morton_key(const Cell& cell, int order);
Cell morton_cell(std::uint64_t key, int order);

/// Smallest order >= 1 with 2^order >= extent.
int min_curve_order(std::int32_t extent);

}  // namespace rayserde
