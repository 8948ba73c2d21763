// SPDX-License-Identifier: Apache-2.0

#include "rayserde/serializers.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "rayserde/error.hpp"
#include "rayserde/parallel.hpp"
#include "rayserde/space_filling.hpp"

namespace rayserde {

SerializationStrategy SerializationStrategy::ray_aligned(const SectorTemplate& tmpl) {
    SerializationStrategy s;
    s.kind_ = Kind::ray_aligned;
    s.template_ = &tmpl;
    return s;
}

SerializationStrategy SerializationStrategy::hilbert(int order) {
    SerializationStrategy s;
    s.kind_ = Kind::hilbert;
    s.order_ = order;
    return s;
}

SerializationStrategy SerializationStrategy::morton(int order) {
    SerializationStrategy s;
    s.kind_ = Kind::morton;
    s.order_ = order;
    return s;
}

SerializationStrategy SerializationStrategy::axis_sort(std::array<Axis, 3> priority) {
    SerializationStrategy s;
    s.kind_ = Kind::axis_sort;
    s.priority_ = priority;
    return s;
}

std::string SerializationStrategy::name() const {
    switch (kind_) {
        case Kind::ray_aligned: return "ray";
        case Kind::hilbert: return "hilbert";
        case Kind::morton: return "morton";
        case Kind::axis_sort: return "axis";
    }
    return "?";
}

std::size_t SectorSequences::total_length() const noexcept {
    std::size_t n = 0;
    for (const auto& s : sectors) n += s.length();
    return n;
}

namespace {

void check_voxels(const SparseVoxelSet& voxels) {
    if (voxels.features.size() != voxels.size() * voxels.channels) {
        throw ContractError(fmt::format("features length {} != {} voxels x {} channels",
                                        voxels.features.size(), voxels.size(),
                                        voxels.channels));
    }
    if (voxels.size() > std::numeric_limits<std::uint32_t>::max()) {
        throw CapacityError("more than 2^32 - 1 active voxels");
    }
    for (std::size_t i = 0; i < voxels.size(); ++i) {
        if (!voxels.spec.contains(voxels.coords[i])) {
            const Cell& c = voxels.coords[i];
            throw BoundsError(
                fmt::format("voxel {}: cell ({},{},{}) outside grid", i, c.z, c.y, c.x));
        }
    }
}

std::uint64_t axis_value(const Cell& c, Axis a) {
    switch (a) {
        case Axis::z: return static_cast<std::uint64_t>(c.z);
        case Axis::y: return static_cast<std::uint64_t>(c.y);
        case Axis::x: return static_cast<std::uint64_t>(c.x);
    }
    return 0;
}

std::uint64_t baseline_key(const Cell& c, const SerializationStrategy& s) {
    switch (s.kind()) {
        case SerializationStrategy::Kind::hilbert: return hilbert_key(c, s.order());
        case SerializationStrategy::Kind::morton: return morton_key(c, s.order());
        case SerializationStrategy::Kind::axis_sort: {
            const auto& p = s.axis_priority();
            return (axis_value(c, p[0]) << 42) | (axis_value(c, p[1]) << 21) |
                   axis_value(c, p[2]);
        }
        case SerializationStrategy::Kind::ray_aligned: break;
    }
    return 0;
}

void check_baseline(const SparseVoxelSet& voxels, const SerializationStrategy& s) {
    const auto& d = voxels.spec.dims;
    const std::int32_t extent = std::max({d[0], d[1], d[2]});
    if (s.kind() == SerializationStrategy::Kind::axis_sort) {
        if (extent > (1 << 21)) throw ConfigError("axis sort supports extents up to 2^21");
        const auto& p = s.axis_priority();
        if (p[0] == p[1] || p[1] == p[2] || p[0] == p[2]) {
            throw ConfigError("axis priority must name each axis once");
        }
        return;
    }
    if (s.order() < 1 || s.order() > kMaxCurveOrder) {
        throw ConfigError(fmt::format("{} order {} outside [1, {}]", s.name(), s.order(),
                                      kMaxCurveOrder));
    }
    if ((std::int64_t{1} << s.order()) < extent) {
        throw ConfigError(fmt::format("{} order {} too small: 2^{} < max(dims) = {}", s.name(),
                                      s.order(), s.order(), extent));
    }
}

// Sorts `rows` by (key, linear cell index) and fills the sequence arrays.
void finish_sequence(SectorSequence& seq, std::vector<std::uint32_t> rows,
                     const std::vector<std::uint64_t>& key_of_row,
                     const std::vector<std::uint64_t>& linear_of_row,
                     const SparseVoxelSet& voxels) {
    std::sort(rows.begin(), rows.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (key_of_row[a] != key_of_row[b]) return key_of_row[a] < key_of_row[b];
        return linear_of_row[a] < linear_of_row[b];
    });
    const std::size_t C = voxels.channels;
    seq.keys.resize(rows.size());
    seq.features.resize(rows.size() * C);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        seq.keys[i] = key_of_row[rows[i]];
        const auto f = voxels.feature(rows[i]);
        std::copy(f.begin(), f.end(), seq.features.begin() + static_cast<std::ptrdiff_t>(i * C));
    }
    seq.rows = std::move(rows);
}

InverseIndex build_inverse(const SectorSequences& seqs, std::size_t n) {
    InverseIndex inv;
    inv.sector_ids.reserve(seqs.sectors.size());
    inv.row_at.reserve(seqs.sectors.size());
    inv.position_of.assign(n, {});
    for (std::size_t slot = 0; slot < seqs.sectors.size(); ++slot) {
        const auto& s = seqs.sectors[slot];
        inv.sector_ids.push_back(s.sector);
        inv.row_at.push_back(s.rows);
        for (std::size_t off = 0; off < s.rows.size(); ++off) {
            inv.position_of[s.rows[off]] = {static_cast<std::uint32_t>(slot),
                                            static_cast<std::uint32_t>(off)};
        }
    }
    return inv;
}

}  // namespace

Serialized spatial_to_sequence(const SparseVoxelSet& voxels,
                               const SerializationStrategy& strategy,
                               const SerializeOptions& options) {
    check_voxels(voxels);
    const std::size_t n = voxels.size();

    Serialized out;
    out.sequences.scene_id = voxels.scene_id;
    out.sequences.channels = voxels.channels;

    std::vector<std::uint64_t> linear(n);
    std::vector<std::uint64_t> keys(n);
    for (std::size_t i = 0; i < n; ++i) linear[i] = voxels.spec.linear_index(voxels.coords[i]);

    if (strategy.kind() == SerializationStrategy::Kind::ray_aligned) {
        const SectorTemplate* tmpl = strategy.sector_template();
        if (tmpl == nullptr) throw ConfigError("ray-aligned strategy without a template");
        if (tmpl->dims != voxels.spec.dims) {
            throw ConfigError(fmt::format(
                "template dims ({},{},{}) != voxel grid dims ({},{},{})", tmpl->dims[0],
                tmpl->dims[1], tmpl->dims[2], voxels.spec.dims[0], voxels.spec.dims[1],
                voxels.spec.dims[2]));
        }
        const std::uint32_t count = tmpl->config.sector_count();

        // Template lookup, then bucket rows by sector (rows stay ascending).
        std::vector<std::uint16_t> sector(n);
        std::vector<std::uint32_t> per_sector(count, 0);
        for (std::size_t i = 0; i < n; ++i) {
            sector[i] = tmpl->sector_of_cell[linear[i]];
            keys[i] = tmpl->key_of_cell[linear[i]];
            if (sector[i] >= count) {
                throw FormatError(fmt::format("template sector id {} >= sector count {}",
                                              sector[i], count));
            }
            ++per_sector[sector[i]];
        }
        std::vector<std::vector<std::uint32_t>> buckets;
        std::vector<std::uint32_t> slot_of_sector(count, UINT32_MAX);
        for (std::uint32_t s = 0; s < count; ++s) {
            if (per_sector[s] == 0) continue;
            slot_of_sector[s] = static_cast<std::uint32_t>(buckets.size());
            buckets.emplace_back().reserve(per_sector[s]);
            out.sequences.sectors.emplace_back().sector = s;
        }
        for (std::size_t i = 0; i < n; ++i) {
            buckets[slot_of_sector[sector[i]]].push_back(static_cast<std::uint32_t>(i));
        }
        parallel_for(buckets.size(), options.workers, [&](std::size_t slot) {
            finish_sequence(out.sequences.sectors[slot], std::move(buckets[slot]), keys, linear,
                            voxels);
        });
    } else {
        check_baseline(voxels, strategy);
        parallel_for(n, options.workers,
                     [&](std::size_t i) { keys[i] = baseline_key(voxels.coords[i], strategy); });
        if (n > 0) {
            std::vector<std::uint32_t> rows(n);
            std::iota(rows.begin(), rows.end(), 0u);
            auto& seq = out.sequences.sectors.emplace_back();
            seq.sector = 0;
            finish_sequence(seq, std::move(rows), keys, linear, voxels);
        }
    }
    out.inverse = build_inverse(out.sequences, n);
    return out;
}

SparseVoxelSet sequence_to_spatial(const SectorSequences& enhanced, const InverseIndex& inv,
                                   const SparseVoxelSet& target) {
    if (enhanced.sectors.size() != inv.row_at.size()) {
        throw ContractError(fmt::format("enhanced has {} sectors, inverse index has {}",
                                        enhanced.sectors.size(), inv.row_at.size()));
    }
    if (enhanced.channels != target.channels) {
        throw ContractError(fmt::format("enhanced channels {} != target channels {}",
                                        enhanced.channels, target.channels));
    }
    if (inv.position_of.size() != target.size()) {
        throw ContractError(fmt::format("inverse index covers {} rows, target has {}",
                                        inv.position_of.size(), target.size()));
    }
    const std::size_t C = target.channels;
    SparseVoxelSet out = target;
    std::size_t covered = 0;
    for (std::size_t slot = 0; slot < enhanced.sectors.size(); ++slot) {
        const auto& seq = enhanced.sectors[slot];
        const auto& rows = inv.row_at[slot];
        if (seq.sector != inv.sector_ids[slot]) {
            throw ContractError(fmt::format("slot {}: sector id {} != inverse index sector {}",
                                            slot, seq.sector, inv.sector_ids[slot]));
        }
        if (seq.features.size() != rows.size() * C) {
            throw ContractError(fmt::format(
                "sector {}: {} feature values, expected {} positions x {} channels", seq.sector,
                seq.features.size(), rows.size(), C));
        }
        for (std::size_t off = 0; off < rows.size(); ++off) {
            const std::uint32_t row = rows[off];
            if (row >= out.size()) {
                throw ContractError(fmt::format("sector {}: row {} out of range", seq.sector, row));
            }
            std::copy_n(seq.features.begin() + static_cast<std::ptrdiff_t>(off * C), C,
                        out.features.begin() + static_cast<std::ptrdiff_t>(row * C));
        }
        covered += rows.size();
    }
    if (covered != target.size()) {
        throw ContractError(fmt::format("sequences cover {} positions, target has {} voxels",
                                        covered, target.size()));
    }
    return out;
}

void write_sequences_jsonl(const SectorSequences& seqs, std::ostream& out) {
    for (const auto& s : seqs.sectors) {
        nlohmann::json rec = {{"scene_id", seqs.scene_id},
                              {"sector", s.sector},
                              {"count", s.length()},
                              {"voxel_rows", s.rows},
                              {"keys", s.keys}};
        out << rec.dump() << '\n';
    }
}

SerializationStrategy parse_strategy(const std::string& name, const SectorTemplate* tmpl,
                                     const VoxelGridSpec& spec) {
    const std::int32_t extent = std::max({spec.dims[0], spec.dims[1], spec.dims[2]});
    if (name == "ray") {
        if (tmpl == nullptr) throw ConfigError("strategy 'ray' requires a sector template");
        return SerializationStrategy::ray_aligned(*tmpl);
    }
    if (name == "hilbert") return SerializationStrategy::hilbert(min_curve_order(extent));
    if (name == "morton") return SerializationStrategy::morton(min_curve_order(extent));
    if (name == "axis") return SerializationStrategy::axis_sort();
    throw ConfigError(fmt::format("strategy: unknown '{}' (expected ray|hilbert|morton|axis)", name));
}

}  // namespace rayserde
