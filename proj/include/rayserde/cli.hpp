// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rayserde/lidar_sim.hpp"
#include "rayserde/sector_mamba.hpp"
#include "rayserde/ssm.hpp"
#include "rayserde/voxel.hpp"

namespace rayserde::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kReportSchemaVersion = 1;

/// Fully resolved settings for one invocation (defaults < config file < flags).
struct RunConfig {
    VoxelGridSpec grid = standard_grid();
    double delta_theta = 60.0;
    std::string strategy = "ray";
    std::vector<std::string> compare{"ray", "hilbert"};
    std::size_t K = 360;
    Reduce reduce = Reduce::mean;
    SectorMambaConfig block{};
    SensorModel sensor = standard_sensor();
    std::string scene_path;
    std::string cloud_path;
    std::string template_path;
    std::uint64_t seed = 0;
    unsigned workers = 1;
    std::string output = "out";
    Precision precision = Precision::f64;
    std::size_t scenes = 20;
    double far_range_m = 40.0;
    std::size_t max_refs = 200;
    // ssm-check
    std::size_t ssm_length = 64;
    std::size_t ssm_channels = 4;
    std::size_t ssm_state = 8;
    double eps = 1e-5;
    // bench
    std::vector<std::size_t> bench_counts{10'000, 100'000, 1'000'000};
    std::size_t bench_repeats = 3;

    /// Throws ConfigError naming the offending field.
    void validate() const;
    nlohmann::json to_json() const;
};

/// Entry point shared by the binary and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace rayserde::cli
