// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rayserde/cli.hpp"
#include "rayserde/config_file.hpp"
#include "rayserde/error.hpp"
#include "rayserde/lidar_sim.hpp"
#include "rayserde/point_io.hpp"
#include "rayserde/sector_template.hpp"

using namespace rayserde;
namespace fs = std::filesystem;

namespace {

struct Invocation {
    int code = 0;
    std::string out;
    std::string err;
};

Invocation invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "rayserde");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("rayserde_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

nlohmann::json load_json(const fs::path& p) {
    std::ifstream in(p);
    return nlohmann::json::parse(in);
}

}  // namespace

TEST_CASE("config file subset") {
    const auto cfg = ConfigFile::parse(
        "top = 1\n[grid]\ndims = [11, 256, 256]  # comment\nname = \"a # b\"\n"
        "[run]\nflag = true\nratio = 2.5\n");
    CHECK(cfg.get_int("top") == 1);
    CHECK(cfg.get_doubles("grid.dims") == std::vector<double>{11, 256, 256});
    CHECK(cfg.get_string("grid.name") == "a # b");
    CHECK(cfg.get_bool("run.flag") == true);
    CHECK(cfg.get_double("run.ratio") == 2.5);
    CHECK_FALSE(cfg.get_double("run.missing").has_value());
    CHECK_THROWS_WITH_AS(cfg.get_int("run.ratio"), doctest::Contains("run.ratio"), ConfigError);
    CHECK_THROWS_WITH_AS(ConfigFile::parse("[grid\nx = 1\n"), doctest::Contains("line 1"), ConfigError);
    CHECK_THROWS_AS(ConfigFile::parse("x 1\n"), ConfigError);
}

TEST_CASE("build-template writes the full template") {
    const fs::path dir = scratch("template");
    const auto r = invoke({"build-template", "--dims", "11,256,256", "--dtheta", "60", "-o",
                           (dir / "t.rayt").string()});
    REQUIRE(r.code == cli::kExitOk);
    const SectorTemplate t = read_template(dir / "t.rayt");
    CHECK(t.sector_of_cell.size() == 720896);
    CHECK(t.key_of_cell.size() == 720896);
    const auto report = load_json(dir / "build-template.json");
    CHECK(report["schema_version"] == cli::kReportSchemaVersion);
    CHECK(report["config"]["sector"]["delta_theta"] == 60.0);
    CHECK(fs::exists(dir / "build-template.txt"));
}

TEST_CASE("usage and config errors") {
    const auto unknown = invoke({"serialize", "--bogus"});
    CHECK(unknown.code == cli::kExitUsage);
    CHECK(unknown.err.find("--bogus") != std::string::npos);
    CHECK(unknown.err.find("Usage") != std::string::npos);

    CHECK(invoke({}).code == cli::kExitUsage);
    CHECK(invoke({"frobnicate"}).code == cli::kExitUsage);

    const auto bad_theta = invoke({"build-template", "--dtheta", "7", "-o", "unused.rayt"});
    CHECK(bad_theta.code == cli::kExitUsage);
    CHECK(bad_theta.err.find("dtheta") != std::string::npos);

    const auto missing = invoke({"serialize", "--cloud", "/nonexistent/cloud.bin"});
    CHECK(missing.code == cli::kExitUsage);
    CHECK(missing.err.find("cloud") != std::string::npos);

    const auto bad_strategy = invoke({"serialize", "--strategy", "spiral"});
    CHECK(bad_strategy.err.find("strategy") != std::string::npos);
}

TEST_CASE("format errors exit with failure") {
    const fs::path dir = scratch("format");
    std::ofstream(dir / "broken.rayt") << "nope";
    std::ofstream(dir / "c.csv") << "x,y,z,intensity\n0,0,0,0.5\n";
    const auto r = invoke({"serialize", "--cloud", (dir / "c.csv").string(), "--template",
                           (dir / "broken.rayt").string(), "-o", dir.string()});
    CHECK(r.code == cli::kExitFailure);
    CHECK(r.err.find("magic") != std::string::npos);
}

TEST_CASE("config precedence is flags over file over defaults") {
    const fs::path dir = scratch("precedence");
    std::ofstream(dir / "run.toml") << "[grid]\ndims = [2, 16, 16]\n[sector]\ndelta_theta = 90\n";
    const auto r = invoke({"build-template", "--config", (dir / "run.toml").string(), "--dims", "3,8,8",
                           "-o", (dir / "t.rayt").string()});
    REQUIRE(r.code == 0);
    const auto report = load_json(dir / "build-template.json");
    CHECK(report["config"]["grid"]["dims"] == nlohmann::json::array({3, 8, 8}));
    CHECK(report["config"]["sector"]["delta_theta"] == 90.0);
    CHECK(report["config"]["grid"]["center"] == nlohmann::json::array({3.5, 3.5}));
    CHECK(report["config"]["serialize"]["K"] == 360);

    std::ofstream(dir / "typo.toml") << "[grid]\ndimz = [2, 16, 16]\n";
    const auto typo = invoke({"build-template", "--config", (dir / "typo.toml").string()});
    CHECK(typo.code == cli::kExitUsage);
    CHECK(typo.err.find("grid.dimz") != std::string::npos);
}

TEST_CASE("simulate then round trip") {
    const fs::path dir = scratch("pipeline");
    REQUIRE(invoke({"build-template", "-o", (dir / "t.rayt").string()}).code == 0);
    const auto sim = invoke({"simulate", "--seed", "3", "-o", dir.string()});
    REQUIRE(sim.code == 0);
    REQUIRE(fs::exists(dir / "cloud.bin"));
    const auto rt = invoke({"roundtrip-check", "--cloud", (dir / "cloud.bin").string(), "--template",
                            (dir / "t.rayt").string(), "-o", dir.string()});
    CHECK(rt.code == 0);
    CHECK(load_json(dir / "roundtrip-check.json")["results"]["identity"] == true);

    const auto ser = invoke({"serialize", "--cloud", (dir / "cloud.bin").string(), "--template",
                             (dir / "t.rayt").string(), "-o", dir.string()});
    CHECK(ser.code == 0);
    CHECK(fs::exists(dir / "sequences.jsonl"));

    const auto fwd = invoke({"sector-forward", "--cloud", (dir / "cloud.bin").string(), "--workers", "1",
                             "-o", (dir / "w1").string()});
    const auto fwd4 = invoke({"sector-forward", "--cloud", (dir / "cloud.bin").string(), "--workers", "4",
                              "-o", (dir / "w4").string()});
    REQUIRE(fwd.code == 0);
    REQUIRE(fwd4.code == 0);
    const auto j1 = load_json(dir / "w1" / "sector-forward.json");
    const auto j4 = load_json(dir / "w4" / "sector-forward.json");
    CHECK(j1["results"]["feature_fnv1a"] == j4["results"]["feature_fnv1a"]);
    CHECK(j1["results"]["counters"]["scan_invocations"] == j1["results"]["counters"]["non_empty_sectors"]);
}

TEST_CASE("ssm-check reports the worst relative error") {
    const fs::path dir = scratch("ssm");
    const auto r = invoke({"ssm-check", "--seed", "7", "-o", dir.string()});
    CHECK(r.code == 0);
    const auto j = load_json(dir / "ssm-check.json");
    CHECK(j["results"]["rel_err"].get<double>() <= 1e-4);
    CHECK(j["results"]["seed"] == 7);
}

TEST_CASE("metrics and bench emit reports") {
    const fs::path dir = scratch("metrics");
    const auto m = invoke({"metrics", "--scenes", "1", "--max-refs", "20", "-o", dir.string()});
    REQUIRE(m.code == 0);
    CHECK(fs::exists(dir / "coherence.csv"));
    const auto j = load_json(dir / "metrics.json");
    CHECK(j["results"]["paired"].size() == 1);

    const auto none = invoke({"metrics", "--scenes", "0", "-o", dir.string()});
    CHECK(none.code == 0);

    const auto b = invoke({"bench", "--counts", "2000", "--repeats", "1", "-o", dir.string()});
    REQUIRE(b.code == 0);
    const auto bj = load_json(dir / "bench.json");
    CHECK(bj["results"]["rows"][0]["voxels"] == 2000);
    CHECK(bj["results"]["rows"][0].contains("lookup_sort_ms"));
    CHECK(bj["results"]["rows"][0].contains("scan_ms"));
}
