// SPDX-License-Identifier: Apache-2.0

#include "rayserde/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "rayserde/config_file.hpp"
#include "rayserde/error.hpp"
#include "rayserde/metrics.hpp"
#include "rayserde/parallel.hpp"
#include "rayserde/point_io.hpp"
#include "rayserde/sector_template.hpp"
#include "rayserde/serializers.hpp"
#include "rayserde/space_filling.hpp"

namespace rayserde::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// RunConfig

void RunConfig::validate() const {
    try {
        grid.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(fmt::format("grid: {}", e.what()));
    }
    try {
        SectorConfig{delta_theta, grid.center_x, grid.center_y}.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(fmt::format("dtheta: {}", e.what()));
    }
    static const std::set<std::string> kStrategies{"ray", "hilbert", "morton", "axis"};
    if (kStrategies.count(strategy) == 0) {
        throw ConfigError(fmt::format("strategy: unknown '{}' (expected ray|hilbert|morton|axis)",
                                      strategy));
    }
    for (const auto& s : compare) {
        if (kStrategies.count(s) == 0) {
            throw ConfigError(fmt::format("compare: unknown strategy '{}'", s));
        }
    }
    if (compare.empty()) throw ConfigError("compare: at least one strategy required");
    try {
        sensor.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(fmt::format("sensor: {}", e.what()));
    }
    for (const auto& [field, path] : {std::pair{"scene", scene_path}, std::pair{"cloud", cloud_path},
                                      std::pair{"template", template_path}}) {
        if (!path.empty() && !fs::exists(path)) {
            throw ConfigError(fmt::format("{}: path '{}' does not exist", field, path));
        }
    }
    if (block.state_dim == 0) throw ConfigError("block.state_dim: must be >= 1");
    if (block.model_channels == 0) throw ConfigError("block.channels: must be >= 1");
    if (block.radius < 0) throw ConfigError("block.radius: must be >= 0");
    if (block.max_len == 0) throw ConfigError("block.max_len: must be >= 1");
    if (ssm_length == 0 || ssm_channels == 0 || ssm_state == 0) {
        throw ConfigError("ssm_check: length, channels and state must be >= 1");
    }
    if (!(eps >= 1e-7 && eps <= 1e-3)) throw ConfigError("eps: must lie in [1e-7, 1e-3]");
    if (bench_counts.empty()) throw ConfigError("bench.counts: at least one count required");
    if (bench_repeats == 0) throw ConfigError("bench.repeats: must be >= 1");
}

json RunConfig::to_json() const {
    return {
        {"grid",
         {{"dims", grid.dims},
          {"voxel_size", grid.voxel_size},
          {"origin", {grid.origin.x, grid.origin.y, grid.origin.z}},
          {"center", {grid.center_x, grid.center_y}}}},
        {"sector", {{"delta_theta", delta_theta}}},
        {"serialize", {{"strategy", strategy}, {"K", K}, {"reduce", to_string(reduce)}}},
        {"metrics",
         {{"compare", compare},
          {"scenes", scenes},
          {"far_range", far_range_m},
          {"max_refs", max_refs},
          {"window", "symmetric"},
          {"hilbert_layout", "3d-zyx"}}},
        {"block",
         {{"channels", block.model_channels},
          {"state_dim", block.state_dim},
          {"radius", block.radius},
          {"max_len", block.max_len},
          {"seed", block.seed},
          {"sinusoidal", block.sinusoidal_positions}}},
        {"sensor",
         {{"beams", sensor.beams},
          {"fov", {sensor.fov_min_deg, sensor.fov_max_deg}},
          {"azimuth_res", sensor.azimuth_res_deg},
          {"max_range", sensor.max_range},
          {"origin", {sensor.origin.x, sensor.origin.y, sensor.origin.z}},
          {"range_noise", sensor.range_noise_sigma}}},
        {"paths", {{"scene", scene_path}, {"cloud", cloud_path}, {"template", template_path}}},
        {"run",
         {{"seed", seed},
          {"workers", workers},
          {"output", output},
          {"precision", to_string(precision)}}},
        {"ssm_check",
         {{"length", ssm_length}, {"channels", ssm_channels}, {"state", ssm_state}, {"eps", eps}}},
        {"bench", {{"counts", bench_counts}, {"repeats", bench_repeats}}},
    };
}

namespace {

// ---------------------------------------------------------------------------
// Flag parsing helpers

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<double> parse_numbers(const std::string& s, std::size_t expected, const char* field) {
    std::vector<double> out;
    for (const auto& item : split(s, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError(fmt::format("{}: cannot parse '{}'", field, item));
        }
    }
    if (expected != 0 && out.size() != expected) {
        throw ConfigError(fmt::format("{}: expected {} values, got {}", field, expected, out.size()));
    }
    return out;
}

std::array<std::int32_t, 3> to_dims(const std::vector<double>& v, const char* field) {
    std::array<std::int32_t, 3> d{};
    for (int a = 0; a < 3; ++a) {
        if (v[a] != std::floor(v[a]) || v[a] < 1 || v[a] > 1e8) {
            throw ConfigError(fmt::format("{}: '{}' is not a positive integer", field, v[a]));
        }
        d[a] = static_cast<std::int32_t>(v[a]);
    }
    return d;
}

std::vector<std::size_t> to_counts(const std::vector<double>& v, const char* field) {
    std::vector<std::size_t> out;
    for (double x : v) {
        if (x != std::floor(x) || x < 1) {
            throw ConfigError(fmt::format("{}: '{}' is not a positive integer", field, x));
        }
        out.push_back(static_cast<std::size_t>(x));
    }
    return out;
}

/// Options registered on one subcommand. Only flags actually given override
/// the config file.
struct Flags {
    CLI::App* app = nullptr;
    std::string config, dims, voxel_size, origin, strategy, compare, precision, output, cloud,
        tmpl, scene, reduce, counts;
    double dtheta = 0, far_range = 0, eps = 0;
    std::size_t K = 0, scenes = 0, max_refs = 0, length = 0, channels = 0, state = 0,
                repeats = 0, max_len = 0;
    std::uint64_t seed = 0;
    unsigned workers = 0;
    int radius = 0;

    bool given(const std::string& name) const { return app->count(name) > 0; }
};

enum Extra : unsigned {
    kCloud = 1u << 0,
    kTemplate = 1u << 1,
    kScene = 1u << 2,
    kMetrics = 1u << 3,
    kSsm = 1u << 4,
    kBlock = 1u << 5,
    kBench = 1u << 6,
    kReduce = 1u << 7,
};

void add_flags(Flags& f, CLI::App* app, unsigned extra) {
    f.app = app;
    app->add_option("--config", f.config, "TOML-style config file")->check(CLI::ExistingFile);
    app->add_option("--dims", f.dims, "Grid dims Z,Y,X");
    app->add_option("--voxel-size", f.voxel_size, "Voxel size dz,dy,dx in meters");
    app->add_option("--origin", f.origin, "World x,y,z of the grid corner");
    app->add_option("--dtheta", f.dtheta, "Sector width in degrees (divides 360)");
    app->add_option("--strategy", f.strategy, "ray|hilbert|morton|axis");
    app->add_option("--K", f.K, "Context window size");
    app->add_option("--seed", f.seed, "Seed for every random draw");
    app->add_option("--workers", f.workers, "Worker threads (0 = hardware)");
    app->add_option("--precision", f.precision, "f32|f64");
    app->add_option("-o,--output", f.output, "Output directory (file for build-template)");
    if (extra & kCloud) app->add_option("--cloud", f.cloud, "Point cloud (.csv or float32 .bin)");
    if (extra & kTemplate) app->add_option("--template", f.tmpl, "Prebuilt .rayt template");
    if (extra & kScene) app->add_option("--scene", f.scene, "Scene JSON (boxes)");
    if (extra & kReduce) app->add_option("--reduce", f.reduce, "mean|max|count-augmented-mean");
    if (extra & kMetrics) {
        app->add_option("--scenes", f.scenes, "Number of simulated scenes");
        app->add_option("--compare", f.compare, "Comma-separated strategies, first is baseline");
        app->add_option("--far-range", f.far_range, "Far-field BEV radius in meters");
        app->add_option("--max-refs", f.max_refs, "Reference voxels per scene (0 = all)");
    }
    if (extra & kSsm) {
        app->add_option("--length", f.length, "Sequence length L");
        app->add_option("--channels", f.channels, "Channels D");
        app->add_option("--state", f.state, "State size N");
        app->add_option("--eps", f.eps, "Finite-difference step");
    }
    if (extra & kBlock) {
        app->add_option("--radius", f.radius, "Aggregation radius in cells");
        app->add_option("--max-len", f.max_len, "Positional table length");
    }
    if (extra & kBench) {
        app->add_option("--counts", f.counts, "Comma-separated voxel counts");
        app->add_option("--repeats", f.repeats, "Timed repetitions per measurement");
    }
}

const std::set<std::string>& known_config_keys() {
    static const std::set<std::string> keys{
        "grid.dims",         "grid.voxel_size",  "grid.origin",        "grid.center",
        "sector.delta_theta", "serialize.strategy", "serialize.K",    "serialize.reduce",
        "metrics.compare",   "metrics.scenes",   "metrics.far_range",  "metrics.max_refs",
        "block.channels",    "block.state_dim",  "block.radius",       "block.max_len",
        "block.seed",        "block.sinusoidal", "sensor.beams",       "sensor.fov",
        "sensor.azimuth_res", "sensor.max_range", "sensor.origin",     "sensor.range_noise",
        "paths.scene",       "paths.cloud",      "paths.template",     "run.seed",
        "run.workers",       "run.output",       "run.precision",      "ssm_check.length",
        "ssm_check.channels", "ssm_check.state", "ssm_check.eps",      "bench.counts",
        "bench.repeats"};
    return keys;
}

void apply_file(RunConfig& cfg, const ConfigFile& file, bool& center_explicit) {
    for (const auto& key : file.keys()) {
        if (known_config_keys().count(key) == 0) {
            throw ConfigError(fmt::format("config: unknown key '{}'", key));
        }
    }
    auto sized = [&](const std::string& key, std::size_t n) {
        auto v = file.get_doubles(key);
        if (v && v->size() != n) {
            throw ConfigError(fmt::format("{}: expected {} values, got {}", key, n, v->size()));
        }
        return v;
    };
    if (auto v = sized("grid.dims", 3)) cfg.grid.dims = to_dims(*v, "grid.dims");
    if (auto v = sized("grid.voxel_size", 3)) cfg.grid.voxel_size = {(*v)[0], (*v)[1], (*v)[2]};
    if (auto v = sized("grid.origin", 3)) cfg.grid.origin = {(*v)[0], (*v)[1], (*v)[2]};
    if (auto v = sized("grid.center", 2)) {
        cfg.grid.center_x = (*v)[0];
        cfg.grid.center_y = (*v)[1];
        center_explicit = true;
    }
    if (auto v = file.get_double("sector.delta_theta")) cfg.delta_theta = *v;
    if (auto v = file.get_string("serialize.strategy")) cfg.strategy = *v;
    if (auto v = file.get_int("serialize.K")) cfg.K = static_cast<std::size_t>(std::max(0LL, *v));
    if (auto v = file.get_string("serialize.reduce")) cfg.reduce = parse_reduce(*v);
    if (auto v = file.get_string("metrics.compare")) cfg.compare = split(*v, ',');
    if (auto v = file.get_int("metrics.scenes")) cfg.scenes = static_cast<std::size_t>(std::max(0LL, *v));
    if (auto v = file.get_double("metrics.far_range")) cfg.far_range_m = *v;
    if (auto v = file.get_int("metrics.max_refs")) cfg.max_refs = static_cast<std::size_t>(std::max(0LL, *v));
    if (auto v = file.get_int("block.channels")) cfg.block.model_channels = static_cast<std::size_t>(std::max(0LL, *v));
    if (auto v = file.get_int("block.state_dim")) cfg.block.state_dim = static_cast<std::size_t>(std::max(0LL, *v));
    if (auto v = file.get_int("block.radius")) cfg.block.radius = static_cast<std::int32_t>(*v);
    if (auto v = file.get_int("block.max_len")) cfg.block.max_len = static_cast<std::size_t>(std::max(0LL, *v));
    if (auto v = file.get_int("block.seed")) cfg.block.seed = static_cast<std::uint64_t>(*v);
    if (auto v = file.get_bool("block.sinusoidal")) cfg.block.sinusoidal_positions = *v;
    if (auto v = file.get_int("sensor.beams")) cfg.sensor.beams = static_cast<std::uint32_t>(std::max(0LL, *v));
    if (auto v = sized("sensor.fov", 2)) {
        cfg.sensor.fov_min_deg = (*v)[0];
        cfg.sensor.fov_max_deg = (*v)[1];
    }
    if (auto v = file.get_double("sensor.azimuth_res")) cfg.sensor.azimuth_res_deg = *v;
    if (auto v = file.get_double("sensor.max_range")) cfg.sensor.max_range = *v;
    if (auto v = sized("sensor.origin", 3)) cfg.sensor.origin = {(*v)[0], (*v)[1], (*v)[2]};
    if (auto v = file.get_double("sensor.range_noise")) cfg.sensor.range_noise_sigma = *v;
    if (auto v = file.get_string("paths.scene")) cfg.scene_path = *v;
    if (auto v = file.get_string("paths.cloud")) cfg.cloud_path = *v;
    if (auto v = file.get_string("paths.template")) cfg.template_path = *v;
    if (auto v = file.get_int("run.seed")) cfg.seed = static_cast<std::uint64_t>(*v);
    if (auto v = file.get_int("run.workers")) cfg.workers = static_cast<unsigned>(std::max(0LL, *v));
    if (auto v = file.get_string("run.output")) cfg.output = *v;
    if (auto v = file.get_string("run.precision")) cfg.precision = parse_precision(*v);
    if (auto v = file.get_int("ssm_check.length")) cfg.ssm_length = static_cast<std::size_t>(std::max(0LL, *v));
    if (auto v = file.get_int("ssm_check.channels")) cfg.ssm_channels = static_cast<std::size_t>(std::max(0LL, *v));
    if (auto v = file.get_int("ssm_check.state")) cfg.ssm_state = static_cast<std::size_t>(std::max(0LL, *v));
    if (auto v = file.get_double("ssm_check.eps")) cfg.eps = *v;
    if (auto v = file.get_doubles("bench.counts")) cfg.bench_counts = to_counts(*v, "bench.counts");
    if (auto v = file.get_int("bench.repeats")) cfg.bench_repeats = static_cast<std::size_t>(std::max(0LL, *v));
}

RunConfig resolve(const Flags& f, const std::string& default_output) {
    RunConfig cfg;
    cfg.output = default_output;
    bool center_explicit = false;
    if (!f.config.empty()) apply_file(cfg, ConfigFile::load(f.config), center_explicit);

    if (f.given("--dims")) cfg.grid.dims = to_dims(parse_numbers(f.dims, 3, "dims"), "dims");
    if (f.given("--voxel-size")) {
        const auto v = parse_numbers(f.voxel_size, 3, "voxel-size");
        cfg.grid.voxel_size = {v[0], v[1], v[2]};
    }
    if (f.given("--origin")) {
        const auto v = parse_numbers(f.origin, 3, "origin");
        cfg.grid.origin = {v[0], v[1], v[2]};
    }
    if (!center_explicit) {
        cfg.grid = VoxelGridSpec::centered(cfg.grid.dims, cfg.grid.voxel_size, cfg.grid.origin);
    }
    if (f.given("--dtheta")) cfg.delta_theta = f.dtheta;
    if (f.given("--strategy")) cfg.strategy = f.strategy;
    if (f.given("--K")) cfg.K = f.K;
    if (f.given("--seed")) cfg.seed = f.seed;
    if (f.given("--workers")) cfg.workers = f.workers;
    if (f.given("--precision")) cfg.precision = parse_precision(f.precision);
    if (f.given("--output")) cfg.output = f.output;
    if (f.app->get_option_no_throw("--cloud") && f.given("--cloud")) cfg.cloud_path = f.cloud;
    if (f.app->get_option_no_throw("--template") && f.given("--template")) cfg.template_path = f.tmpl;
    if (f.app->get_option_no_throw("--scene") && f.given("--scene")) cfg.scene_path = f.scene;
    if (f.app->get_option_no_throw("--reduce") && f.given("--reduce")) cfg.reduce = parse_reduce(f.reduce);
    if (f.app->get_option_no_throw("--scenes")) {
        if (f.given("--scenes")) cfg.scenes = f.scenes;
        if (f.given("--compare")) cfg.compare = split(f.compare, ',');
        if (f.given("--far-range")) cfg.far_range_m = f.far_range;
        if (f.given("--max-refs")) cfg.max_refs = f.max_refs;
    }
    if (f.app->get_option_no_throw("--length")) {
        if (f.given("--length")) cfg.ssm_length = f.length;
        if (f.given("--channels")) cfg.ssm_channels = f.channels;
        if (f.given("--state")) cfg.ssm_state = f.state;
        if (f.given("--eps")) cfg.eps = f.eps;
    }
    if (f.app->get_option_no_throw("--radius")) {
        if (f.given("--radius")) cfg.block.radius = f.radius;
        if (f.given("--max-len")) cfg.block.max_len = f.max_len;
    }
    if (f.app->get_option_no_throw("--counts")) {
        if (f.given("--counts")) cfg.bench_counts = to_counts(parse_numbers(f.counts, 0, "counts"), "counts");
        if (f.given("--repeats")) cfg.bench_repeats = f.repeats;
    }
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// Reports

struct Report {
    json results = json::object();
    std::string summary;
    bool passed = true;
};

void emit(const std::string& command, const RunConfig& cfg, const fs::path& dir,
          const Report& report, std::ostream& out) {
    if (!dir.empty()) fs::create_directories(dir);
    json j = {{"schema_version", kReportSchemaVersion},
              {"command", command},
              {"status", report.passed ? "ok" : "failed"},
              {"config", cfg.to_json()},
              {"results", report.results}};
    const fs::path json_path = dir / (command + ".json");
    std::ofstream(json_path) << j.dump(2) << '\n';
    std::ofstream(dir / (command + ".txt")) << report.summary;
    out << report.summary;
    out << fmt::format("report: {}\n", json_path.string());
}

template <typename Fn>
double time_ms(Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v.empty() ? 0.0 : v[v.size() / 2];
}

SectorConfig sector_config(const RunConfig& cfg) {
    return {cfg.delta_theta, cfg.grid.center_x, cfg.grid.center_y};
}

SectorTemplate obtain_template(const RunConfig& cfg) {
    if (!cfg.template_path.empty()) {
        SectorTemplate t = read_template(cfg.template_path);
        if (t.dims != cfg.grid.dims) {
            throw ConfigError(fmt::format("template: dims ({},{},{}) do not match grid ({},{},{})",
                                          t.dims[0], t.dims[1], t.dims[2], cfg.grid.dims[0],
                                          cfg.grid.dims[1], cfg.grid.dims[2]));
        }
        return t;
    }
    return build_template(cfg.grid, sector_config(cfg), {cfg.workers});
}

SparseVoxelSet load_voxels(const RunConfig& cfg, std::size_t* dropped) {
    if (cfg.cloud_path.empty()) throw ConfigError("cloud: --cloud is required");
    const PointCloud cloud = read_points(cfg.cloud_path);
    VoxelizeResult r = voxelize(cloud, cfg.grid, cfg.reduce);
    if (dropped != nullptr) *dropped = r.dropped;
    return std::move(r.voxels);
}

std::uint64_t fnv1a(std::span<const double> values) {
    std::uint64_t h = 1469598103934665603ULL;
    for (double v : values) {
        unsigned char bytes[sizeof(double)];
        std::memcpy(bytes, &v, sizeof v);
        for (unsigned char b : bytes) {
            h ^= b;
            h *= 1099511628211ULL;
        }
    }
    return h;
}

// ---------------------------------------------------------------------------
// Subcommands

Report cmd_build_template(const RunConfig& cfg, const fs::path& file) {
    SectorTemplate t;
    const double ms =
        time_ms([&] { t = build_template(cfg.grid, sector_config(cfg), {cfg.workers}); });
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    write_template(t, file);
    std::vector<std::size_t> per_sector(t.config.sector_count(), 0);
    for (std::uint16_t s : t.sector_of_cell) ++per_sector[s];

    Report r;
    r.results = {{"path", file.string()},
                 {"dims", t.dims},
                 {"cells", t.cell_count()},
                 {"sector_count", per_sector.size()},
                 {"cells_per_sector", per_sector},
                 {"file_bytes", fs::file_size(file)},
                 {"build_ms", ms}};
    r.summary = fmt::format("built template {}x{}x{} ({} cells, {} sectors of {} deg) -> {}\n",
                            t.dims[0], t.dims[1], t.dims[2], t.cell_count(), per_sector.size(),
                            cfg.delta_theta, file.string());
    return r;
}

Report cmd_serialize(const RunConfig& cfg, const fs::path& dir) {
    std::size_t dropped = 0;
    const SparseVoxelSet voxels = load_voxels(cfg, &dropped);
    SectorTemplate tmpl;
    const bool ray = cfg.strategy == "ray";
    if (ray) tmpl = obtain_template(cfg);
    const SerializationStrategy strategy = parse_strategy(cfg.strategy, ray ? &tmpl : nullptr, cfg.grid);
    Serialized ser;
    const double ms = time_ms([&] { ser = spatial_to_sequence(voxels, strategy, {cfg.workers}); });

    fs::create_directories(dir);
    std::ofstream jsonl(dir / "sequences.jsonl");
    write_sequences_jsonl(ser.sequences, jsonl);

    json sectors = json::array();
    for (const auto& s : ser.sequences.sectors) sectors.push_back({{"sector", s.sector}, {"count", s.length()}});
    Report r;
    r.results = {{"voxels", voxels.size()},
                 {"dropped_points", dropped},
                 {"strategy", strategy.name()},
                 {"sectors", sectors},
                 {"lookup_sort_ms", ms},
                 {"sequences", (dir / "sequences.jsonl").string()}};
    r.summary = fmt::format("serialized {} voxels ({} points dropped) with '{}' into {} sequence(s)\n",
                            voxels.size(), dropped, strategy.name(), ser.sequences.sectors.size());
    return r;
}

bool same_voxels(const SparseVoxelSet& a, const SparseVoxelSet& b) {
    return a.coords == b.coords && a.features == b.features && a.point_counts == b.point_counts &&
           a.channels == b.channels;
}

Report cmd_roundtrip(const RunConfig& cfg) {
    const SparseVoxelSet voxels = load_voxels(cfg, nullptr);
    SectorTemplate tmpl;
    const bool ray = cfg.strategy == "ray";
    if (ray) tmpl = obtain_template(cfg);
    const SerializationStrategy strategy = parse_strategy(cfg.strategy, ray ? &tmpl : nullptr, cfg.grid);
    const Serialized ser = spatial_to_sequence(voxels, strategy, {cfg.workers});
    const SparseVoxelSet back = sequence_to_spatial(ser.sequences, ser.inverse, voxels);
    const bool identity = same_voxels(back, voxels);

    // Every voxel's template entry must agree with a fresh evaluation.
    std::size_t mismatches = 0;
    if (ray) {
        for (const Cell& c : voxels.coords) {
            const std::uint64_t lin = cfg.grid.linear_index(c);
            const CellOrdering o = compute_cell_ordering(c, cfg.grid.dims[0], tmpl.config);
            if (tmpl.sector_of_cell[lin] != o.sector || tmpl.key_of_cell[lin] != o.key) ++mismatches;
        }
    }
    Report r;
    r.passed = identity && mismatches == 0;
    r.results = {{"voxels", voxels.size()},
                 {"strategy", strategy.name()},
                 {"sequences", ser.sequences.sectors.size()},
                 {"identity", identity},
                 {"template_mismatches", mismatches}};
    r.summary = fmt::format("round trip over {} voxels with '{}': {}\n", voxels.size(),
                            strategy.name(), r.passed ? "identity holds" : "MISMATCH");
    return r;
}

Report cmd_simulate(const RunConfig& cfg, const fs::path& dir) {
    const Scene scene = cfg.scene_path.empty() ? make_far_field_scene(cfg.seed) : read_scene(cfg.scene_path);
    const ScanOutput scan = simulate_scan(scene, cfg.sensor, cfg.seed, cfg.workers);
    fs::create_directories(dir);
    write_points_bin(scan.cloud, dir / "cloud.bin");
    write_scene(scene, dir / "scene.json");
    {
        std::ofstream hits(dir / "hits.csv");
        hits << "point,box_id\n";
        for (std::size_t i = 0; i < scan.hit_ids.size(); ++i) hits << i << ',' << scan.hit_ids[i] << '\n';
    }
    const auto counts = returns_per_object(scan, scene);
    json objects = json::array();
    std::size_t far = 0, far_sparse = 0;
    for (const Box& b : scene.boxes) {
        const double range = std::hypot(b.center.x - cfg.sensor.origin.x, b.center.y - cfg.sensor.origin.y);
        const std::size_t n = counts.at(b.id);
        if (range > cfg.far_range_m) {
            ++far;
            far_sparse += n < 10;
        }
        objects.push_back({{"id", b.id},
                           {"role", b.role == BoxRole::target ? "target" : "occluder"},
                           {"range_m", range},
                           {"returns", n}});
    }
    Report r;
    r.results = {{"points", scan.cloud.points.size()},
                 {"objects", objects},
                 {"far_objects", far},
                 {"far_objects_under_10_returns", far_sparse},
                 {"cloud", (dir / "cloud.bin").string()}};
    r.summary = fmt::format("simulated {} returns over {} boxes; {}/{} objects beyond {} m have < 10 returns\n",
                            scan.cloud.points.size(), scene.boxes.size(), far_sparse, far,
                            cfg.far_range_m);
    return r;
}

Report cmd_metrics(const RunConfig& cfg, const fs::path& dir) {
    const std::vector<SparseVoxelSet> scenes =
        simulate_suite(cfg.scenes, cfg.seed, cfg.grid, cfg.sensor, cfg.workers);
    SectorTemplate tmpl;
    if (std::find(cfg.compare.begin(), cfg.compare.end(), "ray") != cfg.compare.end()) {
        tmpl = obtain_template(cfg);
    }
    std::vector<SerializationStrategy> strategies;
    for (const auto& name : cfg.compare) strategies.push_back(parse_strategy(name, &tmpl, cfg.grid));
    CompareOptions opts;
    opts.K = cfg.K;
    opts.far_range_m = cfg.far_range_m;
    opts.delta_theta = cfg.delta_theta;
    opts.max_refs_per_scene = cfg.max_refs;
    opts.seed = cfg.seed;
    opts.workers = cfg.workers;
    const ComparisonReport rep = compare_strategies(scenes, strategies, opts);

    fs::create_directories(dir);
    std::ofstream csv(dir / "coherence.csv");
    write_coherence_csv(rep, csv);

    Report r;
    r.results = to_json(rep);
    r.results["csv"] = (dir / "coherence.csv").string();
    std::string s = fmt::format("{} scenes, K={}, far field > {} m\n", scenes.size(), cfg.K, cfg.far_range_m);
    for (const auto& st : rep.strategies) {
        s += fmt::format("  {:8} windows {:6}  dispersion {:7.3f} m  angular spread {:7.3f} deg  same-sector {:.3f}\n",
                         st.strategy, st.aggregate.windows, st.aggregate.mean_dispersion_m,
                         st.aggregate.mean_angular_spread_deg, st.aggregate.mean_same_sector_frac);
    }
    for (const auto& p : rep.paired) {
        s += fmt::format("  {} vs {}: lower dispersion in {} scene(s), higher in {}, ties {}\n",
                         p.strategy, p.baseline, p.lower, p.higher, p.ties);
    }
    r.summary = s;
    return r;
}

Report cmd_ssm_check(const RunConfig& cfg) {
    const SsmParams params = SsmParams::init(cfg.ssm_state, cfg.ssm_channels, cfg.seed);
    std::mt19937_64 rng(cfg.seed + 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix x(cfg.ssm_length, cfg.ssm_channels);
    for (double& v : x.data) v = normal(rng);
    const GradCheckReport g = grad_check(params, x, cfg.eps);

    const Matrix y64 = selective_scan(x, params, {cfg.workers, Precision::f64});
    const Matrix y_req = selective_scan(x, params, {cfg.workers, cfg.precision});
    double precision_diff = 0.0;
    for (std::size_t i = 0; i < y64.data.size(); ++i) {
        precision_diff = std::max(precision_diff, std::abs(y64.data[i] - y_req.data[i]));
    }

    constexpr double kTolerance = 1e-4;
    Report r;
    r.passed = g.worst.rel_err <= kTolerance;
    r.results = {{"worst_param", g.worst.name},
                 {"analytic", g.worst.analytic},
                 {"numeric", g.worst.numeric},
                 {"rel_err", g.worst.rel_err},
                 {"tolerance", kTolerance},
                 {"checked", g.checked},
                 {"eps", g.eps},
                 {"denom_floor", g.denom_floor},
                 {"seed", cfg.seed},
                 {"precision", to_string(cfg.precision)},
                 {"max_abs_diff_vs_f64", precision_diff}};
    r.summary = fmt::format("gradient check over {} scalars: worst {} rel_err {:.3e} ({})\n", g.checked,
                            g.worst.name, g.worst.rel_err, r.passed ? "ok" : "FAILED");
    return r;
}

Report cmd_sector_forward(const RunConfig& cfg, const fs::path& dir) {
    SparseVoxelSet voxels;
    if (!cfg.cloud_path.empty()) {
        voxels = load_voxels(cfg, nullptr);
    } else {
        voxels = simulate_suite(1, cfg.seed, cfg.grid, cfg.sensor, cfg.workers).front();
    }
    const SectorTemplate tmpl = obtain_template(cfg);
    SectorMambaConfig bc = cfg.block;
    bc.input_channels = voxels.channels;
    const SectorMambaBlock block = SectorMambaBlock::make(bc);
    SectorForwardResult res;
    const double ms = time_ms(
        [&] { res = sector_mamba_forward(voxels, tmpl, block, {cfg.workers, cfg.precision}); });

    fs::create_directories(dir);
    {
        std::ofstream csv(dir / "features.csv");
        csv << "z,y,x";
        for (std::size_t c = 0; c < res.voxels.channels; ++c) csv << ",f" << c;
        csv << '\n';
        for (std::size_t i = 0; i < res.voxels.size(); ++i) {
            const Cell& c = res.voxels.coords[i];
            csv << c.z << ',' << c.y << ',' << c.x;
            for (double v : res.voxels.feature(i)) csv << ',' << fmt::format("{:.17g}", v);
            csv << '\n';
        }
    }
    Report r;
    r.results = {{"voxels", voxels.size()},
                 {"counters",
                  {{"scan_invocations", res.stats.scan_invocations},
                   {"non_empty_sectors", res.stats.sectors},
                   {"longest_sequence", res.stats.longest_sequence}}},
                 {"feature_fnv1a", fmt::format("{:016x}", fnv1a(res.voxels.features))},
                 {"forward_ms", ms},
                 {"features", (dir / "features.csv").string()}};
    r.summary = fmt::format("sector forward over {} voxels: {} scans for {} non-empty sectors, {:.1f} ms\n",
                            voxels.size(), res.stats.scan_invocations, res.stats.sectors, ms);
    return r;
}

SparseVoxelSet random_voxels(const VoxelGridSpec& spec, std::size_t count, std::size_t channels,
                             std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::uint64_t> cell(0, spec.cell_count() - 1);
    std::uniform_real_distribution<double> feat(-1.0, 1.0);
    std::unordered_set<std::uint64_t> chosen;
    chosen.reserve(count * 2);
    SparseVoxelSet v;
    v.spec = spec;
    v.channels = channels;
    while (v.coords.size() < count) {
        const std::uint64_t lin = cell(rng);
        if (!chosen.insert(lin).second) continue;
        v.coords.push_back(spec.cell_at(lin));
    }
    v.point_counts.assign(count, 1);
    v.features.resize(count * channels);
    for (double& f : v.features) f = feat(rng);
    return v;
}

Report cmd_bench(const RunConfig& cfg) {
    const std::size_t largest = *std::max_element(cfg.bench_counts.begin(), cfg.bench_counts.end());
    VoxelGridSpec grid = cfg.grid;
    bool adjusted = false;
    while (grid.cell_count() < 2 * largest) {
        grid.dims[1] *= 2;
        grid.dims[2] *= 2;
        adjusted = true;
    }
    if (adjusted) grid = VoxelGridSpec::centered(grid.dims, grid.voxel_size, grid.origin);

    SectorTemplate tmpl;
    const double build_ms = time_ms(
        [&] { tmpl = build_template(grid, {cfg.delta_theta, grid.center_x, grid.center_y}, {cfg.workers}); });
    const SsmParams params = SsmParams::init(cfg.block.state_dim, 4, cfg.block.seed);
    const int order = min_curve_order(std::max({grid.dims[0], grid.dims[1], grid.dims[2]}));

    json rows = json::array();
    std::string s = fmt::format("grid {}x{}x{}, template build {:.1f} ms\n", grid.dims[0], grid.dims[1],
                                grid.dims[2], build_ms);
    for (std::size_t count : cfg.bench_counts) {
        const SparseVoxelSet voxels = random_voxels(grid, count, 4, cfg.seed);
        std::vector<double> lookup_sort, hilbert, scan;
        Serialized ser;
        for (std::size_t rep = 0; rep < cfg.bench_repeats; ++rep) {
            lookup_sort.push_back(time_ms([&] {
                ser = spatial_to_sequence(voxels, SerializationStrategy::ray_aligned(tmpl), {cfg.workers});
            }));
            hilbert.push_back(time_ms([&] {
                (void)spatial_to_sequence(voxels, SerializationStrategy::hilbert(order), {cfg.workers});
            }));
            scan.push_back(time_ms([&] {
                parallel_for(ser.sequences.sectors.size(), cfg.workers, [&](std::size_t slot) {
                    const auto& seq = ser.sequences.sectors[slot];
                    Matrix x(seq.length(), 4);
                    x.data = seq.features;
                    (void)selective_scan(x, params, {1, cfg.precision});
                });
            }));
        }
        rows.push_back({{"voxels", count},
                        {"lookup_sort_ms", median_of(lookup_sort)},
                        {"hilbert_serialize_ms", median_of(hilbert)},
                        {"scan_ms", median_of(scan)},
                        {"sectors", ser.sequences.sectors.size()}});
        s += fmt::format("  {:>8} voxels: lookup+sort {:8.2f} ms  hilbert {:8.2f} ms  scan {:9.2f} ms\n", count,
                         median_of(lookup_sort), median_of(hilbert), median_of(scan));
    }
    Report r;
    r.results = {{"grid_dims", grid.dims},
                 {"grid_adjusted", adjusted},
                 {"template_build_ms", build_ms},
                 {"repeats", cfg.bench_repeats},
                 {"statistic", "median"},
                 {"rows", rows}};
    r.summary = s;
    return r;
}

void configure_logging() {
    auto logger = spdlog::get("rayserde");
    if (!logger) {
        logger = spdlog::stderr_color_mt("rayserde");
        spdlog::set_default_logger(logger);
    }
    const char* level = std::getenv("RAYSERDE_LOG");
    spdlog::set_level(level != nullptr ? spdlog::level::from_str(level) : spdlog::level::warn);
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    configure_logging();
    CLI::App app{"Ray-aligned sector-wise serialization of sparse LiDAR voxels", "rayserde"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "rayserde 0.1.0");

    struct Command {
        const char* name;
        const char* help;
        unsigned extra;
        Flags flags;
        CLI::App* app = nullptr;
    };
    std::vector<Command> commands = {
        {"build-template", "Build and write the dense sector template", 0, {}},
        {"serialize", "Serialize a point cloud into sector sequences (JSON lines)", kCloud | kTemplate | kReduce, {}},
        {"roundtrip-check", "Verify sequence-to-spatial inverts spatial-to-sequence", kCloud | kTemplate | kReduce, {}},
        {"simulate", "Cast a synthetic LiDAR scan over a box scene", kScene | kMetrics, {}},
        {"metrics", "Compare serialization strategies by context-window coherence", kTemplate | kMetrics, {}},
        {"ssm-check", "Finite-difference check of the selective scan gradients", kSsm, {}},
        {"sector-forward", "Run one sector-wise SSM block over a voxelized scan", kCloud | kTemplate | kReduce | kBlock, {}},
        {"bench", "Time template lookup + sort and the per-sector scans", kBench, {}},
    };
    for (auto& c : commands) {
        c.app = app.add_subcommand(c.name, c.help);
        add_flags(c.flags, c.app, c.extra);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        if (code != 0) err << app.help();
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        for (auto& c : commands) {
            if (!c.app->parsed()) continue;
            const std::string name = c.name;
            if (name == "build-template") {
                const RunConfig cfg = resolve(c.flags, "out/template.rayt");
                const fs::path file = cfg.output;
                Report r = cmd_build_template(cfg, file);
                emit(name, cfg, file.has_parent_path() ? file.parent_path() : fs::path("."), r, out);
                return kExitOk;
            }
            const RunConfig cfg = resolve(c.flags, "out");
            const fs::path dir = cfg.output;
            Report r;
            if (name == "serialize") r = cmd_serialize(cfg, dir);
            else if (name == "roundtrip-check") r = cmd_roundtrip(cfg);
            else if (name == "simulate") r = cmd_simulate(cfg, dir);
            else if (name == "metrics") r = cmd_metrics(cfg, dir);
            else if (name == "ssm-check") r = cmd_ssm_check(cfg);
            else if (name == "sector-forward") r = cmd_sector_forward(cfg, dir);
            else if (name == "bench") r = cmd_bench(cfg);
            emit(name, cfg, dir, r, out);
            return r.passed ? kExitOk : kExitFailure;
        }
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace rayserde::cli
