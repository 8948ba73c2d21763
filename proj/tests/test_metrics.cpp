// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <sstream>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "rayserde/error.hpp"
#include "rayserde/lidar_sim.hpp"
#include "rayserde/metrics.hpp"
#include "rayserde/sector_template.hpp"
#include "rayserde/serializers.hpp"

using namespace rayserde;
namespace L = rayserde::order_key_layout;

namespace {

/// Grid whose ego sits on cell (0, 0) so cell offsets are BEV offsets.
VoxelGridSpec corner_grid(std::int32_t n) {
    VoxelGridSpec g = VoxelGridSpec::centered({1, n, n}, {1, 1, 1}, {0, 0, 0});
    g.center_x = 0.0;
    g.center_y = 0.0;
    return g;
}

SparseVoxelSet cells(const VoxelGridSpec& spec, const std::vector<Cell>& cs) {
    SparseVoxelSet v;
    v.spec = spec;
    v.channels = 1;
    v.coords = cs;
    v.features.assign(cs.size(), 0.0);
    v.point_counts.assign(cs.size(), 1);
    return v;
}

}  // namespace

TEST_CASE("symmetric context window") {
    const auto spec = corner_grid(8);
    const auto v = cells(spec, {{0, 0, 1}, {0, 0, 2}, {0, 0, 3}, {0, 0, 4}, {0, 0, 5}});
    const Serialized s = spatial_to_sequence(v, SerializationStrategy::axis_sort());
    const auto& rows = s.sequences.sectors[0].rows;
    const std::uint32_t ref = rows[2];

    const auto w2 = context_window(s.sequences, s.inverse, ref, 2);
    CHECK(w2 == std::vector<std::uint32_t>{rows[1], rows[3]});
    CHECK(context_window(s.sequences, s.inverse, ref, 0).empty());
    const auto all = context_window(s.sequences, s.inverse, ref, 100);
    CHECK(all.size() == 4);
    const auto edge = context_window(s.sequences, s.inverse, rows[0], 4);
    CHECK(edge == std::vector<std::uint32_t>{rows[1], rows[2]});
    const auto odd = context_window(s.sequences, s.inverse, ref, 3);
    CHECK(odd == std::vector<std::uint32_t>{rows[1], rows[3], rows[4]});
    CHECK_THROWS_AS(context_window(s.sequences, s.inverse, 99, 2), LookupError);
}

TEST_CASE("dispersion") {
    const auto spec = corner_grid(8);
    const auto v = cells(spec, {{0, 2, 2}, {0, 2, 3}, {0, 5, 6}});
    const std::vector<std::uint32_t> adjacent{1};
    CHECK(*dispersion(adjacent, v, 0) == doctest::Approx(1.0).epsilon(1e-15));
    const std::vector<std::uint32_t> same{2, 2, 2};
    CHECK(*dispersion(same, v, 0) == doctest::Approx(5.0).epsilon(1e-15));
    CHECK_FALSE(dispersion({}, v, 0).has_value());
}

TEST_CASE("angular spread") {
    const auto spec = corner_grid(400);
    const auto v = cells(spec, {{0, 0, 5}, {0, 5, 0}, {0, 35, 197}, {0, 69, 188}, {0, 3, 3}});
    CHECK(*angular_spread(std::vector<std::uint32_t>{0}, v) == 0.0);
    CHECK(*angular_spread(std::vector<std::uint32_t>{0, 1}, v) == doctest::Approx(90.0));
    CHECK(*angular_spread(std::vector<std::uint32_t>{2, 3}, v) == doctest::Approx(10.0).epsilon(0.02));
    CHECK(*angular_spread(std::vector<std::uint32_t>{4, 0, 1}, v) == doctest::Approx(90.0));
    CHECK_FALSE(angular_spread({}, v).has_value());

    const auto centered = VoxelGridSpec::centered({1, 9, 9}, {1, 1, 1}, {0, 0, 0});
    const auto wrap = cells(centered, {{0, 5, 8}, {0, 3, 8}});
    CHECK(*angular_spread(std::vector<std::uint32_t>{0, 1}, wrap) ==
          doctest::Approx(2.0 * oracle::azimuth(4.0, 1.0)));
}

TEST_CASE("strategy compared with itself") {
    const auto scenes = simulate_suite(2, 0, standard_grid(), standard_sensor());
    const SectorTemplate t = build_template(standard_grid(), SectorConfig::from_grid(standard_grid()));
    CompareOptions opts;
    opts.max_refs_per_scene = 30;
    const auto strategy = SerializationStrategy::ray_aligned(t);
    const auto rep = compare_strategies(scenes, {strategy, strategy}, opts);
    REQUIRE(rep.paired.size() == 1);
    CHECK(rep.paired[0].ties == 2);
    for (const auto& row : rep.paired[0].rows) CHECK(row.delta_m == 0.0);
}

TEST_CASE("empty scene set gives an empty report") {
    const auto rep = compare_strategies({}, {SerializationStrategy::hilbert(8)});
    REQUIRE(rep.strategies.size() == 1);
    CHECK(rep.strategies[0].windows.empty());
    CHECK(rep.strategies[0].aggregate.windows == 0);
}

TEST_CASE("ray windows never leave their sector") {
    const auto grid = standard_grid();
    const auto scenes = simulate_suite(2, 5, grid, standard_sensor());
    const SectorTemplate t = build_template(grid, SectorConfig::from_grid(grid));
    CompareOptions opts;
    opts.max_refs_per_scene = 50;
    opts.workers = 2;
    const auto rep = compare_strategies(
        scenes, {SerializationStrategy::ray_aligned(t), SerializationStrategy::hilbert(8)}, opts);
    for (const auto& w : rep.strategies[0].windows) {
        CHECK(w.same_sector_frac == 1.0);
        CHECK(*w.angular_spread_deg <= 60.0 + L::kThetaStep);
        CHECK(w.range_m > 40.0);
    }

    opts.workers = 1;
    const auto again = compare_strategies(
        scenes, {SerializationStrategy::ray_aligned(t), SerializationStrategy::hilbert(8)}, opts);
    CHECK(to_json(again) == to_json(rep));

    std::ostringstream csv;
    write_coherence_csv(rep, csv);
    CHECK(csv.str().rfind(
              "scene,strategy,ref_row,range_m,K,dispersion_m,angular_spread_deg,same_sector_frac\n", 0) == 0);
}
