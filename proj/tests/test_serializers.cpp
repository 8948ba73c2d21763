// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "oracles.hpp"
#include "rayserde/error.hpp"
#include "rayserde/sector_template.hpp"
#include "rayserde/serializers.hpp"
#include "rayserde/space_filling.hpp"

using namespace rayserde;

namespace {

VoxelGridSpec grid(std::int32_t z, std::int32_t y, std::int32_t x) {
    return VoxelGridSpec::centered({z, y, x}, {1, 1, 1}, {0, 0, 0});
}

SparseVoxelSet from_cells(const VoxelGridSpec& spec, std::vector<Cell> cells) {
    std::sort(cells.begin(), cells.end(), [&](const Cell& a, const Cell& b) {
        return spec.linear_index(a) < spec.linear_index(b);
    });
    SparseVoxelSet v;
    v.spec = spec;
    v.channels = 2;
    v.coords = cells;
    v.point_counts.assign(cells.size(), 1);
    for (std::size_t i = 0; i < cells.size(); ++i) {
        v.features.push_back(static_cast<double>(i));
        v.features.push_back(-static_cast<double>(i));
    }
    return v;
}

std::vector<std::uint32_t> flat_rows(const Serialized& s) {
    std::vector<std::uint32_t> rows;
    for (const auto& seq : s.sequences.sectors) rows.insert(rows.end(), seq.rows.begin(), seq.rows.end());
    return rows;
}

}  // namespace

TEST_CASE("descending height within one ray") {
    const auto spec = grid(11, 16, 16);
    // Cells on the +x axis from the center share theta = 0.
    const auto v = from_cells(spec, {{0, 8, 12}, {4, 8, 12}, {9, 8, 12}});
    const SectorTemplate t = build_template(spec, SectorConfig::from_grid(spec));
    const Serialized s = spatial_to_sequence(v, SerializationStrategy::ray_aligned(t));
    REQUIRE(s.sequences.sectors.size() == 1);
    const auto& rows = s.sequences.sectors[0].rows;
    REQUIRE(rows.size() == 3);
    CHECK(v.coords[rows[0]].z == 9);
    CHECK(v.coords[rows[1]].z == 4);
    CHECK(v.coords[rows[2]].z == 0);
}

TEST_CASE("empty sectors are skipped") {
    const auto spec = grid(3, 32, 32);
    const SectorTemplate t = build_template(spec, SectorConfig::from_grid(spec));
    std::vector<Cell> cells;
    for (std::int32_t z = 0; z < 3; ++z)
        for (std::int32_t y = 0; y < 32; ++y)
            for (std::int32_t x = 0; x < 32; ++x)
                if (t.sector_of_cell[spec.linear_index({z, y, x})] == 2 && (x + y + z) % 3 == 0)
                    cells.push_back({z, y, x});
    const auto v = from_cells(spec, cells);
    const Serialized s = spatial_to_sequence(v, SerializationStrategy::ray_aligned(t));
    REQUIRE(s.sequences.sectors.size() == 1);
    CHECK(s.sequences.sectors[0].sector == 2);
    CHECK(s.inverse.sector_ids == std::vector<std::uint32_t>{2});
}

TEST_CASE("ray order equals brute-force comparator") {
    const auto spec = grid(11, 64, 64);
    const SectorTemplate t = build_template(spec, SectorConfig::from_grid(spec));
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto v = oracle::random_voxels(spec, 2000, 4, seed);
        const auto s = spatial_to_sequence(v, SerializationStrategy::ray_aligned(t), {2});
        CHECK(flat_rows(s) == oracle::brute_force_ray_order(v, 60.0));
    }
}

TEST_CASE("baselines emit one pseudo-sector in curve order") {
    const auto spec = grid(6, 20, 20);
    const auto v = oracle::random_voxels(spec, 500, 3, 11);
    const int order = min_curve_order(20);
    for (const auto& strategy : {SerializationStrategy::hilbert(order), SerializationStrategy::morton(order)}) {
        const auto s = spatial_to_sequence(v, strategy);
        REQUIRE(s.sequences.sectors.size() == 1);
        CHECK(s.sequences.sectors[0].sector == 0);
        const auto& rows = s.sequences.sectors[0].rows;
        for (std::size_t i = 1; i < rows.size(); ++i) {
            const Cell a = v.coords[rows[i - 1]], b = v.coords[rows[i]];
            if (strategy.kind() == SerializationStrategy::Kind::hilbert) {
                REQUIRE(hilbert_key(a, order) < hilbert_key(b, order));
            } else {
                REQUIRE(morton_key(a, order) < morton_key(b, order));
            }
        }
    }
    const auto axis = spatial_to_sequence(v, SerializationStrategy::axis_sort());
    const auto& rows = axis.sequences.sectors[0].rows;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const Cell a = v.coords[rows[i - 1]], b = v.coords[rows[i]];
        REQUIRE(std::tie(a.x, a.y, a.z) < std::tie(b.x, b.y, b.z));
    }
    CHECK_THROWS_AS(spatial_to_sequence(v, SerializationStrategy::hilbert(2)), ConfigError);
}

TEST_CASE("scatter inverts serialization") {
    const auto spec = grid(5, 40, 40);
    const SectorTemplate t = build_template(spec, SectorConfig::from_grid(spec, 30.0));
    const auto v = oracle::random_voxels(spec, 1500, 4, 3);
    for (const auto& strategy : {SerializationStrategy::ray_aligned(t), SerializationStrategy::hilbert(6),
                                 SerializationStrategy::morton(6), SerializationStrategy::axis_sort()}) {
        const Serialized s = spatial_to_sequence(v, strategy);
        const SparseVoxelSet back = sequence_to_spatial(s.sequences, s.inverse, v);
        CHECK(back.coords == v.coords);
        CHECK(back.features == v.features);
        CHECK(back.point_counts == v.point_counts);

        SectorSequences plus = s.sequences;
        for (auto& seq : plus.sectors)
            for (double& f : seq.features) f += 1.0;
        const SparseVoxelSet shifted = sequence_to_spatial(plus, s.inverse, v);
        for (std::size_t i = 0; i < v.features.size(); ++i) REQUIRE(shifted.features[i] == v.features[i] + 1.0);

        for (std::uint32_t row = 0; row < v.size(); ++row) {
            REQUIRE(s.inverse.row(s.inverse.position(row)) == row);
        }
    }
}

TEST_CASE("scatter contract violations") {
    const auto spec = grid(3, 16, 16);
    const SectorTemplate t = build_template(spec, SectorConfig::from_grid(spec));
    const auto v = oracle::random_voxels(spec, 200, 2, 5);
    const Serialized s = spatial_to_sequence(v, SerializationStrategy::ray_aligned(t));

    SectorSequences dropped = s.sequences;
    dropped.sectors[0].rows.pop_back();
    dropped.sectors[0].keys.pop_back();
    dropped.sectors[0].features.resize(dropped.sectors[0].features.size() - 2);
    CHECK_THROWS_AS(sequence_to_spatial(dropped, s.inverse, v), ContractError);

    SectorSequences wrong_channels = s.sequences;
    wrong_channels.channels = 3;
    CHECK_THROWS_AS(sequence_to_spatial(wrong_channels, s.inverse, v), ContractError);

    SectorSequences missing = s.sequences;
    missing.sectors.pop_back();
    CHECK_THROWS_AS(sequence_to_spatial(missing, s.inverse, v), ContractError);
}

TEST_CASE("template grid mismatch is rejected") {
    const auto spec = grid(3, 16, 16);
    const SectorTemplate t = build_template(spec, SectorConfig::from_grid(spec));
    const auto v = oracle::random_voxels(grid(3, 16, 17), 20, 2, 5);
    CHECK_THROWS_AS(spatial_to_sequence(v, SerializationStrategy::ray_aligned(t)), ConfigError);
}

TEST_CASE("serialization is worker independent") {
    const auto spec = grid(11, 96, 96);
    const SectorTemplate t = build_template(spec, SectorConfig::from_grid(spec));
    const auto v = oracle::random_voxels(spec, 20000, 4, 9);
    const auto a = spatial_to_sequence(v, SerializationStrategy::ray_aligned(t), {1});
    const auto b = spatial_to_sequence(v, SerializationStrategy::ray_aligned(t), {4});
    REQUIRE(a.sequences.sectors.size() == b.sequences.sectors.size());
    for (std::size_t i = 0; i < a.sequences.sectors.size(); ++i) {
        CHECK(a.sequences.sectors[i].rows == b.sequences.sectors[i].rows);
        CHECK(a.sequences.sectors[i].features == b.sequences.sectors[i].features);
    }
}

TEST_CASE("sequences jsonl and strategy parsing") {
    const auto spec = grid(2, 8, 8);
    const SectorTemplate t = build_template(spec, SectorConfig::from_grid(spec));
    const auto v = oracle::random_voxels(spec, 30, 2, 1);
    const auto s = spatial_to_sequence(v, SerializationStrategy::ray_aligned(t));
    std::ostringstream out;
    write_sequences_jsonl(s.sequences, out);
    const std::string text = out.str();
    CHECK(std::count(text.begin(), text.end(), '\n') == static_cast<long>(s.sequences.sectors.size()));
    CHECK(text.find("\"voxel_rows\"") != std::string::npos);

    CHECK(parse_strategy("hilbert", nullptr, spec).name() == "hilbert");
    CHECK(parse_strategy("ray", &t, spec).name() == "ray");
    CHECK_THROWS_AS(parse_strategy("ray", nullptr, spec), ConfigError);
    CHECK_THROWS_AS(parse_strategy("zigzag", nullptr, spec), ConfigError);
}
