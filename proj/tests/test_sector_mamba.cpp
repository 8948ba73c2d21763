// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "oracles.hpp"
#include "rayserde/error.hpp"
#include "rayserde/sector_mamba.hpp"
#include "rayserde/sector_template.hpp"

using namespace rayserde;

namespace {

VoxelGridSpec grid(std::int32_t z, std::int32_t y, std::int32_t x) {
    return VoxelGridSpec::centered({z, y, x}, {1, 1, 1}, {0, 0, 0});
}

SparseVoxelSet voxels_in_sector(const SectorTemplate& t, const VoxelGridSpec& spec, std::uint32_t sector,
                                std::size_t stride) {
    SparseVoxelSet v;
    v.spec = spec;
    v.channels = 4;
    std::size_t i = 0;
    for (std::uint64_t lin = 0; lin < spec.cell_count(); ++lin) {
        if (t.sector_of_cell[lin] != sector || (i++ % stride) != 0) continue;
        v.coords.push_back(spec.cell_at(lin));
        v.point_counts.push_back(1);
        for (int c = 0; c < 4; ++c) v.features.push_back(0.1 * static_cast<double>(lin % 17) - c);
    }
    return v;
}

}  // namespace

TEST_CASE("local aggregation") {
    const auto spec = grid(1, 9, 9);
    const auto v = oracle::random_voxels(spec, 40, 3, 1);
    CHECK(local_aggregate(v, 0).features == v.features);

    SparseVoxelSet far;
    far.spec = spec;
    far.channels = 1;
    far.coords = {{0, 0, 0}, {0, 5, 5}};
    far.features = {2.0, 7.0};
    far.point_counts = {1, 1};
    CHECK(local_aggregate(far, 2).features == far.features);

    SparseVoxelSet patch;
    patch.spec = spec;
    patch.channels = 2;
    for (std::int32_t y = 3; y < 6; ++y)
        for (std::int32_t x = 3; x < 6; ++x) {
            patch.coords.push_back({0, y, x});
            patch.features.insert(patch.features.end(), {1.0, 1.0});
            patch.point_counts.push_back(1);
        }
    const auto agg = local_aggregate(patch, 1, 2);
    for (double f : agg.features) CHECK(f == doctest::Approx(1.0).epsilon(1e-15));

    SparseVoxelSet pair = far;
    pair.coords = {{0, 4, 4}, {0, 4, 5}};
    const auto mean = local_aggregate(pair, 1);
    CHECK(mean.features[0] == 4.5);
    CHECK(mean.features[1] == 4.5);
}

TEST_CASE("positional embeddings") {
    SectorMambaConfig cfg;
    cfg.max_len = 4;
    cfg.model_channels = 2;
    SectorMambaBlock block = SectorMambaBlock::make(cfg);

    Matrix f(2, 2);
    f.data = {1.0, 2.0, 3.0, 4.0};
    std::fill(block.pos_embed.data.begin(), block.pos_embed.data.end(), 0.0);
    CHECK(positional_embed(f, block) == f);

    block.pos_embed.data = {0.5, -0.5, 10.0, 20.0, 0, 0, 0, 0};
    const Matrix g = positional_embed(f, block);
    CHECK(g.data == std::vector<double>{1.5, 1.5, 13.0, 24.0});

    CHECK_NOTHROW(positional_embed(Matrix(4, 2), block));
    CHECK_THROWS_AS(positional_embed(Matrix(5, 2), block), CapacityError);
}

TEST_CASE("empty voxel set runs no scans") {
    const auto spec = grid(3, 16, 16);
    const SectorTemplate t = build_template(spec, SectorConfig::from_grid(spec));
    SparseVoxelSet empty;
    empty.spec = spec;
    empty.channels = 4;
    const auto r = sector_mamba_forward(empty, t, SectorMambaBlock::make({}));
    CHECK(r.voxels.empty());
    CHECK(r.stats.scan_invocations == 0);
}

TEST_CASE("zero projections leave the residual path") {
    const auto spec = grid(4, 24, 24);
    const SectorTemplate t = build_template(spec, SectorConfig::from_grid(spec));
    const auto v = oracle::random_voxels(spec, 300, 4, 2);
    SectorMambaBlock block = SectorMambaBlock::make({});
    std::fill(block.in_proj.data.begin(), block.in_proj.data.end(), 0.0);
    std::fill(block.out_proj.data.begin(), block.out_proj.data.end(), 0.0);
    const auto r = sector_mamba_forward(v, t, block);
    CHECK(r.voxels.features == v.features);
    CHECK(r.voxels.coords == v.coords);
}

TEST_CASE("single-sector scene runs one scan") {
    const auto spec = grid(3, 32, 32);
    const SectorTemplate t = build_template(spec, SectorConfig::from_grid(spec));
    const auto v = voxels_in_sector(t, spec, 3, 5);
    REQUIRE(v.size() > 10);
    const auto r = sector_mamba_forward(v, t, SectorMambaBlock::make({}));
    CHECK(r.stats.scan_invocations == 1);
    CHECK(r.stats.sectors == 1);
    CHECK(r.stats.longest_sequence == v.size());
}

TEST_CASE("perturbations stay inside their sector") {
    const auto spec = grid(3, 32, 32);
    const SectorTemplate t = build_template(spec, SectorConfig::from_grid(spec));
    const auto v = oracle::random_voxels(spec, 800, 4, 4);
    SectorMambaConfig cfg;
    cfg.radius = 0;
    const auto block = SectorMambaBlock::make(cfg);
    const auto base = sector_mamba_forward(v, t, block);
    CHECK(base.stats.scan_invocations == 6);

    auto bumped = v;
    const std::uint32_t row = 17;
    bumped.features[row * 4] += 3.0;
    const std::uint16_t hit = t.sector_of_cell[spec.linear_index(v.coords[row])];
    const auto out = sector_mamba_forward(bumped, t, block);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const bool same = std::equal(out.voxels.feature(i).begin(), out.voxels.feature(i).end(),
                                     base.voxels.feature(i).begin());
        if (t.sector_of_cell[spec.linear_index(v.coords[i])] != hit) {
            REQUIRE(same);
        } else {
            changed += !same;
        }
    }
    CHECK(changed > 0);
}

TEST_CASE("forward pass is worker independent") {
    const auto spec = grid(5, 48, 48);
    const SectorTemplate t = build_template(spec, SectorConfig::from_grid(spec));
    const auto v = oracle::random_voxels(spec, 3000, 4, 6);
    const auto block = SectorMambaBlock::make({});
    const auto a = sector_mamba_forward(v, t, block, {1});
    const auto b = sector_mamba_forward(v, t, block, {4});
    CHECK(a.voxels.features == b.voxels.features);
    SectorMambaConfig sin_cfg;
    sin_cfg.sinusoidal_positions = true;
    CHECK_NOTHROW(sector_mamba_forward(v, t, SectorMambaBlock::make(sin_cfg)));
}
