// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rayserde/serializers.hpp"
#include "rayserde/voxel.hpp"

namespace rayserde {

/// The other rows within K/2 positions of `ref_row` on each side of its
/// sequence (the right side takes the odd remainder), clipped at the sequence
/// ends. The reference itself is excluded. Throws LookupError if absent.
std::vector<std::uint32_t> context_window(const SectorSequences& seqs, const InverseIndex& inv,
                                          std::uint32_t ref_row, std::size_t K);

/// Mean world distance (meters) from window members to the reference voxel.
std::optional<double> dispersion(std::span<const std::uint32_t> window,
                                  const SparseVoxelSet& voxels, std::uint32_t ref_row);

/// Smallest arc (degrees) covering the azimuths of all window members,
/// i.e. 360 minus the largest circular gap.
std::optional<double> angular_spread(std::span<const std::uint32_t> window,
                                     const SparseVoxelSet& voxels);

/// Azimuth of a voxel around the grid center, in the template's convention.
double voxel_azimuth(const Cell& cell, const VoxelGridSpec& spec);

/// BEV distance (meters) from the ego to the voxel center.
double voxel_range(const Cell& cell, const VoxelGridSpec& spec);

struct WindowStats {
    std::string scene;
    std::uint32_t ref_row = 0;
    double range_m = 0.0;
    std::size_t K = 0;
    std::size_t window_size = 0;
    std::optional<double> dispersion_m;
    std::optional<double> angular_spread_deg;
    double same_sector_frac = 0.0;
};

struct SceneSummary {
    std::string scene;
    std::size_t references = 0;
    double mean_dispersion_m = 0.0;
    double mean_angular_spread_deg = 0.0;
};

struct CoherenceAggregate {
    std::size_t windows = 0;
    double mean_dispersion_m = 0.0;
    double median_dispersion_m = 0.0;
    double mean_angular_spread_deg = 0.0;
    double median_angular_spread_deg = 0.0;
    double max_angular_spread_deg = 0.0;
    double mean_same_sector_frac = 0.0;
};

struct CoherenceReport {
    std::string strategy;
    std::vector<WindowStats> windows;
    std::vector<SceneSummary> scenes;
    CoherenceAggregate aggregate;
};

/// Per-scene mean dispersion of `strategy` minus that of `baseline`.
struct PairedRow {
    std::string scene;
    double strategy_dispersion_m = 0.0;
    double baseline_dispersion_m = 0.0;
    double delta_m = 0.0;
};

struct PairedSummary {
    std::string strategy;
    std::string baseline;
    std::vector<PairedRow> rows;
    std::size_t lower = 0;   // strategy dispersion < baseline
    std::size_t higher = 0;
    std::size_t ties = 0;
};

struct CompareOptions {
    std::size_t K = 360;
    double far_range_m = 40.0;
    /// Sector step used for the same-sector fraction of every strategy.
    double delta_theta = 60.0;
    /// 0 keeps every far-field voxel as a reference.
    std::size_t max_refs_per_scene = 0;
    std::uint64_t seed = 0;
    unsigned workers = 1;
};

struct ComparisonReport {
    CompareOptions options;
    std::vector<CoherenceReport> strategies;
    /// Every strategy after the first, paired against the first.
    std::vector<PairedSummary> paired;
};

/// Scenes must share one voxel grid.
ComparisonReport compare_strategies(const std::vector<SparseVoxelSet>& scenes,
                                    const std::vector<SerializationStrategy>& strategies,
                                    const CompareOptions& options = {});

/// Columns: scene,strategy,ref_row,range_m,K,dispersion_m,angular_spread_deg,same_sector_frac
void write_coherence_csv(const ComparisonReport& report, std::ostream& out);
nlohmann::json to_json(const ComparisonReport& report);

}  // namespace rayserde
