// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "rayserde/sector_template.hpp"
#include "rayserde/voxel.hpp"

namespace rayserde {

enum class Axis : std::uint8_t { z = 0, y = 1, x = 2 };

/// How active voxels are turned into 1D sequences. Only RayAligned produces
/// more than one sequence; the baselines emit a single pseudo-sector 0.
class SerializationStrategy {
public:
    enum class Kind { ray_aligned, hilbert, morton, axis_sort };

    static SerializationStrategy ray_aligned(const SectorTemplate& tmpl);
    static SerializationStrategy hilbert(int order);
    static SerializationStrategy morton(int order);
    /// Sorts by priority[0], then priority[1], then priority[2].
    static SerializationStrategy axis_sort(std::array<Axis, 3> priority = {Axis::x, Axis::y,
                                                                           Axis::z});

    Kind kind() const noexcept { return kind_; }
    const SectorTemplate* sector_template() const noexcept { return template_; }
    int order() const noexcept { return order_; }
    const std::array<Axis, 3>& axis_priority() const noexcept { return priority_; }
    std::string name() const;

private:
    Kind kind_ = Kind::axis_sort;
    const SectorTemplate* template_ = nullptr;
    int order_ = 0;
    std::array<Axis, 3> priority_{Axis::x, Axis::y, Axis::z};
};

/// One ordered sector. rows index into the source SparseVoxelSet; features
/// hold the row-major (length x channels) serialized feature matrix.
struct SectorSequence {
    std::uint32_t sector = 0;
    std::vector<std::uint32_t> rows;
    std::vector<std::uint64_t> keys;
    std::vector<double> features;

    std::size_t length() const noexcept { return rows.size(); }
};

struct SectorSequences {
    std::string scene_id;
    std::size_t channels = 0;
    std::vector<SectorSequence> sectors;  // ascending sector id, non-empty only

    std::size_t total_length() const noexcept;
};

struct SequencePosition {
    std::uint32_t slot = 0;    // index into SectorSequences::sectors
    std::uint32_t offset = 0;  // position inside that sequence

    bool operator==(const SequencePosition&) const = default;
};

/// Exact permutation between sequence positions and source voxel rows.
struct InverseIndex {
    std::vector<std::uint32_t> sector_ids;                // per slot
    std::vector<std::vector<std::uint32_t>> row_at;       // [slot][offset] -> row
    std::vector<SequencePosition> position_of;            // [row] -> (slot, offset)

    std::uint32_t row(SequencePosition pos) const { return row_at.at(pos.slot).at(pos.offset); }
    SequencePosition position(std::uint32_t row) const { return position_of.at(row); }
};

struct Serialized {
    SectorSequences sequences;
    InverseIndex inverse;
};

struct SerializeOptions {
    unsigned workers = 1;
};

Serialized spatial_to_sequence(const SparseVoxelSet& voxels,
                               const SerializationStrategy& strategy,
                               const SerializeOptions& options = {});

/// Routes sequence features back to their source rows. Coordinates and
/// point counts come from `target`.
SparseVoxelSet sequence_to_spatial(const SectorSequences& enhanced, const InverseIndex& inv,
                                   const SparseVoxelSet& target);

/// One JSON object per line: {scene_id, sector, count, voxel_rows, keys}.
void write_sequences_jsonl(const SectorSequences& seqs, std::ostream& out);

SerializationStrategy parse_strategy(const std::string& name, const SectorTemplate* tmpl,
                                     const VoxelGridSpec& spec);

}  // namespace rayserde
