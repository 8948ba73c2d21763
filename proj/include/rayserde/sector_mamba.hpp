// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>

#include "rayserde/sector_template.hpp"
#include "rayserde/serializers.hpp"
#include "rayserde/ssm.hpp"
#include "rayserde/voxel.hpp"

namespace rayserde {

struct SectorMambaConfig {
    std::size_t input_channels = 4;
    std::size_t model_channels = 8;
    std::size_t state_dim = 16;
    std::int32_t radius = 1;
    std::size_t max_len = 65536;
    std::uint64_t seed = 0;
    std::uint32_t layer = 0;
    /// Fixed sinusoidal table instead of a seeded random one.
    bool sinusoidal_positions = false;
};

/// One sector-wise sequence block: shared parameters for every (scene, sector)
/// sequence of layer `layer`.
struct SectorMambaBlock {
    std::uint32_t layer = 0;
    std::size_t input_channels = 0;
    std::size_t model_channels = 0;
    std::int32_t radius = 0;
    SsmParams ssm;
    Matrix pos_embed;              // max_len x model_channels
    Matrix in_proj;                // model_channels x input_channels
    std::vector<double> in_bias;   // model_channels
    Matrix out_proj;               // input_channels x model_channels

    static SectorMambaBlock make(const SectorMambaConfig& config);

    std::size_t max_len() const noexcept { return pos_embed.rows; }
    void validate() const;
};

/// Mean of features over active voxels within Chebyshev distance `radius`
/// (the voxel itself included). Coordinates and counts are unchanged.
SparseVoxelSet local_aggregate(const SparseVoxelSet& voxels, std::int32_t radius,
                               unsigned workers = 1);

/// Adds pos_embed row t to row t of `features` (L x model_channels).
/// Throws CapacityError when L exceeds the table length.
Matrix positional_embed(const Matrix& features, const SectorMambaBlock& block);

struct SectorForwardOptions {
    unsigned workers = 1;
    Precision precision = Precision::f64;
};

struct SectorForwardStats {
    std::size_t scan_invocations = 0;
    std::size_t sectors = 0;
    std::size_t longest_sequence = 0;
};

struct SectorForwardResult {
    SparseVoxelSet voxels;
    SectorForwardStats stats;
};

/// local_aggregate -> ray-aligned serialization -> per-sector
/// [in-proj, positions, selective scan, out-proj] -> scatter -> residual add.
SectorForwardResult sector_mamba_forward(const SparseVoxelSet& voxels,
                                         const SectorTemplate& tmpl,
                                         const SectorMambaBlock& block,
                                         const SectorForwardOptions& options = {});

}  // namespace rayserde
