// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "rayserde/error.hpp"
#include "rayserde/point_io.hpp"
#include "rayserde/voxel.hpp"

using namespace rayserde;

namespace {

VoxelGridSpec unit_grid(std::int32_t n) {
    return VoxelGridSpec::centered({n, n, n}, {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0});
}

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("rayserde_test_" + name);
}

}  // namespace

TEST_CASE("voxelize single point at the origin corner") {
    PointCloud cloud{{{0.0, 0.0, 0.0, 0.5}}, "one"};
    const auto r = voxelize(cloud, unit_grid(10));
    REQUIRE(r.voxels.size() == 1);
    CHECK(r.voxels.coords[0] == Cell{0, 0, 0});
    CHECK(r.voxels.point_counts[0] == 1);
    CHECK(r.dropped == 0);
    CHECK(r.voxels.scene_id == "one");
}

TEST_CASE("voxelize mean of two points in one cell") {
    PointCloud cloud{{{0.2, 0.4, 0.1, 0.2}, {0.6, 0.8, 0.5, 0.4}}, "two"};
    const auto r = voxelize(cloud, unit_grid(10), Reduce::mean);
    REQUIRE(r.voxels.size() == 1);
    CHECK(r.voxels.point_counts[0] == 2);
    const auto f = r.voxels.feature(0);
    CHECK(f[0] == doctest::Approx(0.4));
    CHECK(f[1] == doctest::Approx(0.6));
    CHECK(f[2] == doctest::Approx(0.3));
    CHECK(f[3] == doctest::Approx(0.3));
}

TEST_CASE("voxelize max and count-augmented reductions") {
    PointCloud cloud{{{0.2, 0.4, 0.1, 0.2}, {0.6, 0.8, 0.5, 0.4}}, "two"};
    const auto mx = voxelize(cloud, unit_grid(4), Reduce::max);
    CHECK(mx.voxels.feature(0)[0] == 0.6);
    CHECK(mx.voxels.feature(0)[3] == 0.4);
    const auto ca = voxelize(cloud, unit_grid(4), Reduce::count_augmented_mean);
    CHECK(ca.voxels.channels == 5);
    CHECK(ca.voxels.feature(0)[4] == 2.0);
}

TEST_CASE("voxelize drops points outside the grid") {
    PointCloud cloud{{{-0.5, 0.0, 0.0, 0.0}}, "out"};
    const auto r = voxelize(cloud, unit_grid(10));
    CHECK(r.voxels.empty());
    CHECK(r.dropped == 1);
}

TEST_CASE("voxelize output is sorted and validates") {
    PointCloud cloud;
    for (int i = 0; i < 50; ++i) {
        cloud.points.push_back({(i * 7) % 10 + 0.5, (i * 3) % 10 + 0.5, (i * 11) % 10 + 0.5, 0.1});
    }
    const auto r = voxelize(cloud, unit_grid(10));
    r.voxels.validate();
    for (std::size_t i = 1; i < r.voxels.size(); ++i) {
        CHECK(r.voxels.spec.linear_index(r.voxels.coords[i - 1]) <
              r.voxels.spec.linear_index(r.voxels.coords[i]));
    }
}

TEST_CASE("point cloud validation rejects bad input") {
    PointCloud nan_cloud{{{std::nan(""), 0.0, 0.0, 0.0}}, "bad"};
    CHECK_THROWS_AS(voxelize(nan_cloud, unit_grid(4)), ConfigError);
    PointCloud bright{{{0.0, 0.0, 0.0, 1.5}}, "bad"};
    CHECK_THROWS_AS(voxelize(bright, unit_grid(4)), ConfigError);
}

TEST_CASE("voxel centers in world coordinates") {
    const VoxelGridSpec g1 = unit_grid(4);
    const Vec3 c0 = voxel_center_world({0, 0, 0}, g1);
    CHECK(c0 == Vec3{0.5, 0.5, 0.5});

    const auto g2 = VoxelGridSpec::centered({8, 8, 8}, {2.0, 2.0, 2.0}, {0.0, 0.0, 0.0});
    const Vec3 c1 = voxel_center_world({1, 2, 3}, g2);
    CHECK(c1 == Vec3{7.0, 5.0, 3.0});

    CHECK_THROWS_AS(voxel_center_world({4, 0, 0}, g1), BoundsError);
    CHECK_THROWS_AS(voxel_center_world({0, -1, 0}, g1), BoundsError);
}

TEST_CASE("grid spec validation") {
    VoxelGridSpec bad = unit_grid(4);
    bad.voxel_size[1] = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = unit_grid(4);
    bad.dims[2] = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    const VoxelGridSpec g = unit_grid(5);
    for (std::uint64_t lin = 0; lin < g.cell_count(); ++lin) {
        REQUIRE(g.linear_index(g.cell_at(lin)) == lin);
    }
}

TEST_CASE("sparse voxel set validation catches duplicates") {
    PointCloud cloud{{{0.5, 0.5, 0.5, 0.0}, {1.5, 0.5, 0.5, 0.0}}, "dup"};
    auto v = voxelize(cloud, unit_grid(4)).voxels;
    v.coords[1] = v.coords[0];
    CHECK_THROWS(v.validate());
}

TEST_CASE("reduce names round trip") {
    for (Reduce r : {Reduce::mean, Reduce::max, Reduce::count_augmented_mean}) {
        CHECK(parse_reduce(to_string(r)) == r);
    }
    CHECK_THROWS_AS(parse_reduce("median"), ConfigError);
}

TEST_CASE("point io csv and binary round trip") {
    PointCloud cloud{{{1.0, -2.5, 0.25, 0.5}, {3.0, 4.0, -1.0, 0.0}}, ""};
    const auto csv = temp_path("cloud.csv");
    const auto bin = temp_path("cloud.bin");
    write_points_csv(cloud, csv);
    write_points_bin(cloud, bin);
    for (const auto& path : {csv, bin}) {
        const PointCloud back = read_points(path);
        REQUIRE(back.points.size() == 2);
        CHECK(back.points[0].y == -2.5);
        CHECK(back.points[1].x == 3.0);
        CHECK(back.scene_id == path.stem().string());
    }
    CHECK(std::filesystem::file_size(bin) == 32);

    std::ofstream(bin, std::ios::binary | std::ios::app) << "abc";
    CHECK_THROWS_AS(read_points(bin), FormatError);
    std::ofstream(csv) << "a,b,c\n1,2,3\n";
    CHECK_THROWS_AS(read_points(csv), FormatError);
    std::filesystem::remove(csv);
    std::filesystem::remove(bin);
}
