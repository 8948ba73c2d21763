// SPDX-License-Identifier: Apache-2.0

#include "rayserde/lidar_sim.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "rayserde/error.hpp"
#include "rayserde/parallel.hpp"

namespace rayserde {

namespace {
constexpr double kDegToRad = std::numbers::pi / 180.0;
}

void SensorModel::validate() const {
    if (beams < 1) throw ConfigError("sensor.beams must be >= 1");
    if (!(azimuth_res_deg > 0.0)) throw ConfigError("sensor.azimuth_res must be > 0");
    if (!(max_range > 0.0)) throw ConfigError("sensor.max_range must be > 0");
    if (!(fov_min_deg <= fov_max_deg) || fov_min_deg < -90.0 || fov_max_deg > 90.0) {
        throw ConfigError("sensor.fov must satisfy -90 <= min <= max <= 90");
    }
    if (!(range_noise_sigma >= 0.0)) throw ConfigError("sensor.range_noise must be >= 0");
}

double SensorModel::beam_elevation_deg(std::uint32_t beam) const {
    if (beams == 1) return 0.5 * (fov_min_deg + fov_max_deg);
    return fov_min_deg + (fov_max_deg - fov_min_deg) * static_cast<double>(beam) /
                             static_cast<double>(beams - 1);
}

std::uint32_t SensorModel::azimuth_steps() const {
    return static_cast<std::uint32_t>(std::ceil(360.0 / azimuth_res_deg - 1e-9));
}

void Scene::validate() const {
    for (const Box& b : boxes) {
        if (!(b.size.x > 0.0 && b.size.y > 0.0 && b.size.z > 0.0)) {
            throw ConfigError(fmt::format("box {}: extents must be positive", b.id));
        }
        if (b.id == kGroundId) {
            throw ConfigError(fmt::format("box id {} is reserved for the ground", kGroundId));
        }
    }
}

double ray_box_distance(const Vec3& origin, const Vec3& dir, const Box& box, double t_min,
                        double t_max) {
    const double o[3] = {origin.x, origin.y, origin.z};
    const double d[3] = {dir.x, dir.y, dir.z};
    const double lo[3] = {box.center.x - 0.5 * box.size.x, box.center.y - 0.5 * box.size.y,
                          box.center.z - 0.5 * box.size.z};
    const double hi[3] = {box.center.x + 0.5 * box.size.x, box.center.y + 0.5 * box.size.y,
                          box.center.z + 0.5 * box.size.z};
    double t0 = t_min, t1 = t_max;
    for (int a = 0; a < 3; ++a) {
        if (d[a] == 0.0) {
            if (o[a] < lo[a] || o[a] > hi[a]) return -1.0;
            continue;
        }
        const double inv = 1.0 / d[a];
        double ta = (lo[a] - o[a]) * inv;
        double tb = (hi[a] - o[a]) * inv;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return -1.0;
    }
    return t0;
}

ScanOutput simulate_scan(const Scene& scene, const SensorModel& sensor, std::uint64_t seed,
                         unsigned workers) {
    sensor.validate();
    scene.validate();
    const std::uint32_t steps = sensor.azimuth_steps();

    struct Return {
        Point p;
        std::int32_t id;
    };
    std::vector<std::vector<Return>> per_beam(sensor.beams);
    parallel_for(sensor.beams, workers, [&](std::size_t beam) {
        std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + beam + 1);
        std::normal_distribution<double> noise(0.0, sensor.range_noise_sigma);
        const double elev = sensor.beam_elevation_deg(static_cast<std::uint32_t>(beam)) * kDegToRad;
        auto& out = per_beam[beam];
        for (std::uint32_t k = 0; k < steps; ++k) {
            const double az = static_cast<double>(k) * sensor.azimuth_res_deg * kDegToRad;
            const Vec3 dir{std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az),
                           std::sin(elev)};
            double best = std::numeric_limits<double>::infinity();
            std::int32_t best_id = 0;
            for (const Box& b : scene.boxes) {
                const double t = ray_box_distance(sensor.origin, dir, b, 0.0, sensor.max_range);
                if (t >= 0.0 && t < best) {
                    best = t;
                    best_id = b.id;
                }
            }
            if (scene.ground_plane && dir.z < 0.0 && sensor.origin.z > 0.0) {
                const double t = -sensor.origin.z / dir.z;
                if (t <= sensor.max_range && t < best) {
                    best = t;
                    best_id = kGroundId;
                }
            }
            if (!std::isfinite(best)) continue;
            double range = best;
            if (sensor.range_noise_sigma > 0.0) range = std::max(0.0, range + noise(rng));
            const double intensity = std::clamp(1.0 / (range * range), 0.0, 1.0);
            out.push_back({{sensor.origin.x + range * dir.x, sensor.origin.y + range * dir.y,
                            sensor.origin.z + range * dir.z, intensity},
                           best_id});
        }
    });

    ScanOutput scan;
    scan.cloud.scene_id = fmt::format("sim-{}", seed);
    for (const auto& beam : per_beam) {
        for (const Return& r : beam) {
            scan.cloud.points.push_back(r.p);
            scan.hit_ids.push_back(r.id);
        }
    }
    return scan;
}

std::map<std::int32_t, std::size_t> returns_per_object(const ScanOutput& scan,
                                                       const Scene& scene) {
    if (scan.hit_ids.size() != scan.cloud.points.size()) {
        throw ContractError("hit record does not match point cloud");
    }
    std::map<std::int32_t, std::size_t> counts;
    for (const Box& b : scene.boxes) counts[b.id] = 0;
    for (std::int32_t id : scan.hit_ids) {
        if (id == kGroundId) continue;
        ++counts[id];
    }
    return counts;
}

// ---------------------------------------------------------------------------
// Scene JSON: either a bare list of boxes or {"ground_plane": bool, "boxes": [...]}.

namespace {

Vec3 vec3_from(const nlohmann::json& j, const char* field) {
    if (!j.is_array() || j.size() != 3) {
        throw FormatError(fmt::format("{}: expected [x, y, z]", field));
    }
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

Scene read_scene(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(fmt::format("cannot open '{}'", path.string()));
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("scene JSON: {}", e.what()));
    }
    Scene scene;
    const nlohmann::json* boxes = &j;
    if (j.is_object()) {
        scene.ground_plane = j.value("ground_plane", false);
        if (!j.contains("boxes")) throw FormatError("boxes: missing");
        boxes = &j.at("boxes");
    }
    if (!boxes->is_array()) throw FormatError("boxes: expected a list");
    try {
        for (const auto& b : *boxes) {
            Box box;
            box.id = b.at("id").get<std::int32_t>();
            box.center = vec3_from(b.at("center"), "center");
            box.size = vec3_from(b.at("size"), "size");
            const std::string role = b.value("role", "target");
            if (role == "target") {
                box.role = BoxRole::target;
            } else if (role == "occluder") {
                box.role = BoxRole::occluder;
            } else {
                throw FormatError(fmt::format("role: unknown '{}'", role));
            }
            scene.boxes.push_back(box);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("box: {}", e.what()));
    }
    try {
        scene.validate();
    } catch (const ConfigError& e) {
        throw FormatError(e.what());
    }
    return scene;
}

void write_scene(const Scene& scene, const std::filesystem::path& path) {
    nlohmann::json boxes = nlohmann::json::array();
    for (const Box& b : scene.boxes) {
        boxes.push_back({{"id", b.id},
                         {"center", {b.center.x, b.center.y, b.center.z}},
                         {"size", {b.size.x, b.size.y, b.size.z}},
                         {"role", b.role == BoxRole::target ? "target" : "occluder"}});
    }
    std::ofstream out(path);
    if (!out) throw FormatError(fmt::format("cannot write '{}'", path.string()));
    out << nlohmann::json{{"ground_plane", scene.ground_plane}, {"boxes", boxes}}.dump(2) << '\n';
}

Scene make_far_field_scene(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    Scene scene;
    scene.ground_plane = true;
    std::int32_t next_id = 0;
    auto place = [&](double range, double az_deg, Vec3 size, BoxRole role) {
        const double a = az_deg * kDegToRad;
        scene.boxes.push_back({next_id++,
                               {range * std::cos(a), range * std::sin(a), 0.5 * size.z},
                               size,
                               role});
    };

    // Near-field clutter: parked cars and poles within 25 m.
    const int near_count = 10 + static_cast<int>(unit(rng) * 6);
    for (int i = 0; i < near_count; ++i) {
        const bool pole = unit(rng) < 0.3;
        const Vec3 size = pole ? Vec3{0.4, 0.4, uniform(3.0, 6.0)}
                               : Vec3{uniform(3.8, 4.8), uniform(1.7, 2.0), uniform(1.4, 1.8)};
        place(uniform(6.0, 25.0), uniform(0.0, 360.0), size, BoxRole::occluder);
    }
    // Mid-range vehicles.
    const int mid_count = 6 + static_cast<int>(unit(rng) * 4);
    for (int i = 0; i < mid_count; ++i) {
        place(uniform(25.0, 40.0), uniform(0.0, 360.0),
              {uniform(3.8, 4.8), uniform(1.7, 2.0), uniform(1.4, 1.8)}, BoxRole::occluder);
    }
    // Far-field targets (40-50 m): cars, pedestrians, a truck.
    const int far_count = 5 + static_cast<int>(unit(rng) * 4);
    for (int i = 0; i < far_count; ++i) {
        const double kind = unit(rng);
        const Vec3 size = kind < 0.25   ? Vec3{0.7, 0.7, 1.75}
                          : kind < 0.85 ? Vec3{uniform(3.8, 4.8), uniform(1.7, 2.0), uniform(1.4, 1.8)}
                                        : Vec3{uniform(7.0, 10.0), 2.5, uniform(3.0, 3.8)};
        place(uniform(41.0, 49.0), uniform(0.0, 360.0), size, BoxRole::target);
    }
    return scene;
}

VoxelGridSpec standard_grid() {
    return VoxelGridSpec::centered({11, 256, 256}, {0.8, 0.4, 0.4}, {-51.2, -51.2, -0.4});
}

SensorModel standard_sensor() {
    SensorModel s;
    s.range_noise_sigma = 0.02;
    return s;
}

std::vector<SparseVoxelSet> simulate_suite(std::size_t count, std::uint64_t base_seed,
                                           const VoxelGridSpec& grid,
                                           const SensorModel& sensor, unsigned workers) {
    std::vector<SparseVoxelSet> scenes;
    scenes.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint64_t seed = base_seed + i;
        const ScanOutput scan = simulate_scan(make_far_field_scene(seed), sensor, seed, workers);
        SparseVoxelSet v = voxelize(scan.cloud, grid).voxels;
        v.scene_id = fmt::format("scene-{}", seed);
        scenes.push_back(std::move(v));
    }
    return scenes;
}

}  // namespace rayserde
