// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rayserde/voxel.hpp"

namespace rayserde {

/// Spinning multi-beam LiDAR. Beam elevations are spaced uniformly over the
/// vertical field of view; azimuth is swept in steps of azimuth_res_deg.
struct SensorModel {
    std::uint32_t beams = 32;
    double fov_min_deg = -30.0;
    double fov_max_deg = 10.0;
    double azimuth_res_deg = 0.2;
    double max_range = 100.0;
    Vec3 origin{0.0, 0.0, 1.84};
    double range_noise_sigma = 0.0;

    void validate() const;
    double beam_elevation_deg(std::uint32_t beam) const;
    std::uint32_t azimuth_steps() const;
};

enum class BoxRole { target, occluder };

struct Box {
    std::int32_t id = 0;
    Vec3 center{};
    Vec3 size{};
    BoxRole role = BoxRole::target;
};

struct Scene {
    std::vector<Box> boxes;
    bool ground_plane = false;

    void validate() const;
};

/// Hit label for returns on the z = 0 ground plane.
inline constexpr std::int32_t kGroundId = -1;

struct ScanOutput {
    PointCloud cloud;
    std::vector<std::int32_t> hit_ids;  // parallel to cloud.points
};

/// Slab-test ray/AABB intersection; returns the entry distance in [t_min, t_max]
/// or a negative value on miss.
double ray_box_distance(const Vec3& origin, const Vec3& dir, const Box& box, double t_min,
                        double t_max);

/// First-hit cast of every (beam, azimuth) ray. Output is beam-major, then
/// azimuth. Noise, if enabled, is drawn from a per-beam stream derived from `seed`.
ScanOutput simulate_scan(const Scene& scene, const SensorModel& sensor, std::uint64_t seed,
                         unsigned workers = 1);

/// Return count per box id; every box of `scene` is present (0 if never hit).
std::map<std::int32_t, std::size_t> returns_per_object(const ScanOutput& scan,
                                                       const Scene& scene);

Scene read_scene(const std::filesystem::path& path);
void write_scene(const Scene& scene, const std::filesystem::path& path);

/// Seeded urban-like scene: ground, near-field occluders and parked cars,
/// and several far-field targets beyond 40 m.
Scene make_far_field_scene(std::uint64_t seed);

/// [11, 256, 256] grid of 0.8 x 0.4 x 0.4 m cells covering +-51.2 m around the
/// ego, ground (z = 0) inside layer 0.
VoxelGridSpec standard_grid();

/// 32 beams over [-30, +10] degrees, 0.2 degree azimuth steps, 100 m range,
/// mounted 1.84 m above ground, 2 cm range noise.
SensorModel standard_sensor();

/// Simulates and voxelizes make_far_field_scene(base_seed + i) for i < count.
/// Scene i is scanned with seed base_seed + i and named "scene-<seed>".
std::vector<SparseVoxelSet> simulate_suite(std::size_t count, std::uint64_t base_seed,
                                           const VoxelGridSpec& grid,
                                           const SensorModel& sensor, unsigned workers = 1);

}  // namespace rayserde
