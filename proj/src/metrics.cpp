// SPDX-License-Identifier: Apache-2.0

#include "rayserde/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "rayserde/error.hpp"
#include "rayserde/parallel.hpp"
#include "rayserde/sector_template.hpp"

namespace rayserde {

std::vector<std::uint32_t> context_window(const SectorSequences& seqs, const InverseIndex& inv,
                                          std::uint32_t ref_row, std::size_t K) {
    if (ref_row >= inv.position_of.size()) {
        throw LookupError(fmt::format("reference row {} not in sequences", ref_row));
    }
    const SequencePosition pos = inv.position_of[ref_row];
    if (pos.slot >= seqs.sectors.size() ||
        seqs.sectors[pos.slot].rows.at(pos.offset) != ref_row) {
        throw LookupError(fmt::format("reference row {} not at its indexed position", ref_row));
    }
    const auto& rows = seqs.sectors[pos.slot].rows;
    const std::size_t left = K / 2;
    const std::size_t right = K - left;
    const std::size_t begin = pos.offset >= left ? pos.offset - left : 0;
    const std::size_t end = std::min(rows.size(), static_cast<std::size_t>(pos.offset) + right + 1);
    std::vector<std::uint32_t> window;
    window.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
        if (i != pos.offset) window.push_back(rows[i]);
    }
    return window;
}

std::optional<double> dispersion(std::span<const std::uint32_t> window,
                                 const SparseVoxelSet& voxels, std::uint32_t ref_row) {
    if (window.empty()) return std::nullopt;
    const Vec3 ref = voxel_center_world(voxels.coords.at(ref_row), voxels.spec);
    double sum = 0.0;
    for (std::uint32_t r : window) {
        const Vec3 p = voxel_center_world(voxels.coords.at(r), voxels.spec);
        sum += std::sqrt((p.x - ref.x) * (p.x - ref.x) + (p.y - ref.y) * (p.y - ref.y) +
                         (p.z - ref.z) * (p.z - ref.z));
    }
    return sum / static_cast<double>(window.size());
}

double voxel_azimuth(const Cell& cell, const VoxelGridSpec& spec) {
    return azimuth_deg(static_cast<double>(cell.x) - spec.center_x,
                       static_cast<double>(cell.y) - spec.center_y);
}

double voxel_range(const Cell& cell, const VoxelGridSpec& spec) {
    const Vec3 p = voxel_center_world(cell, spec);
    const Vec3 ego = ego_world(spec);
    return std::hypot(p.x - ego.x, p.y - ego.y);
}

std::optional<double> angular_spread(std::span<const std::uint32_t> window,
                                     const SparseVoxelSet& voxels) {
    if (window.empty()) return std::nullopt;
    std::vector<double> theta;
    theta.reserve(window.size());
    for (std::uint32_t r : window) theta.push_back(voxel_azimuth(voxels.coords.at(r), voxels.spec));
    std::sort(theta.begin(), theta.end());
    double max_gap = theta.front() + 360.0 - theta.back();
    for (std::size_t i = 1; i < theta.size(); ++i) max_gap = std::max(max_gap, theta[i] - theta[i - 1]);
    return std::clamp(360.0 - max_gap, 0.0, 360.0);
}

namespace {

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double hi = v[mid];
    if (v.size() % 2 == 1) return hi;
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

std::vector<std::uint32_t> pick_references(const SparseVoxelSet& voxels,
                                           const CompareOptions& options, std::uint64_t seed) {
    std::vector<std::uint32_t> refs;
    for (std::size_t i = 0; i < voxels.size(); ++i) {
        if (voxel_range(voxels.coords[i], voxels.spec) > options.far_range_m) {
            refs.push_back(static_cast<std::uint32_t>(i));
        }
    }
    if (options.max_refs_per_scene > 0 && refs.size() > options.max_refs_per_scene) {
        std::mt19937_64 rng(seed);
        std::shuffle(refs.begin(), refs.end(), rng);
        refs.resize(options.max_refs_per_scene);
        std::sort(refs.begin(), refs.end());
    }
    return refs;
}

CoherenceAggregate aggregate(const std::vector<WindowStats>& windows) {
    CoherenceAggregate a;
    std::vector<double> disp, spread;
    double same = 0.0;
    for (const auto& w : windows) {
        if (w.dispersion_m) disp.push_back(*w.dispersion_m);
        if (w.angular_spread_deg) spread.push_back(*w.angular_spread_deg);
        same += w.same_sector_frac;
    }
    a.windows = windows.size();
    if (!disp.empty()) {
        a.mean_dispersion_m = std::accumulate(disp.begin(), disp.end(), 0.0) / disp.size();
        a.median_dispersion_m = median(disp);
    }
    if (!spread.empty()) {
        a.mean_angular_spread_deg =
            std::accumulate(spread.begin(), spread.end(), 0.0) / spread.size();
        a.median_angular_spread_deg = median(spread);
        a.max_angular_spread_deg = *std::max_element(spread.begin(), spread.end());
    }
    if (!windows.empty()) a.mean_same_sector_frac = same / windows.size();
    return a;
}

}  // namespace

ComparisonReport compare_strategies(const std::vector<SparseVoxelSet>& scenes,
                                    const std::vector<SerializationStrategy>& strategies,
                                    const CompareOptions& options) {
    ComparisonReport report;
    report.options = options;
    for (std::size_t i = 1; i < scenes.size(); ++i) {
        if (!(scenes[i].spec == scenes[0].spec)) {
            throw ConfigError(fmt::format("scene {} uses a different voxel grid", i));
        }
    }
    if (scenes.empty()) {
        for (const auto& s : strategies) report.strategies.push_back({s.name(), {}, {}, {}});
        return report;
    }
    const SectorConfig sectors = SectorConfig::from_grid(scenes[0].spec, options.delta_theta);
    sectors.validate();

    std::vector<std::vector<std::uint32_t>> refs(scenes.size());
    std::vector<std::vector<std::uint32_t>> sector_of_row(scenes.size());
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        refs[s] = pick_references(scenes[s], options, options.seed + s);
        auto& sec = sector_of_row[s];
        sec.resize(scenes[s].size());
        for (std::size_t i = 0; i < scenes[s].size(); ++i) {
            sec[i] = compute_cell_ordering(scenes[s].coords[i], scenes[s].spec.dims[0], sectors).sector;
        }
    }

    for (const auto& strategy : strategies) {
        CoherenceReport rep;
        rep.strategy = strategy.name();
        for (std::size_t s = 0; s < scenes.size(); ++s) {
            const SparseVoxelSet& voxels = scenes[s];
            const std::string scene_name =
                voxels.scene_id.empty() ? fmt::format("scene-{}", s) : voxels.scene_id;
            const Serialized ser = spatial_to_sequence(voxels, strategy, {options.workers});
            std::vector<WindowStats> stats(refs[s].size());
            parallel_for(refs[s].size(), options.workers, [&](std::size_t k) {
                const std::uint32_t ref = refs[s][k];
                const auto window = context_window(ser.sequences, ser.inverse, ref, options.K);
                WindowStats& w = stats[k];
                w.scene = scene_name;
                w.ref_row = ref;
                w.range_m = voxel_range(voxels.coords[ref], voxels.spec);
                w.K = options.K;
                w.window_size = window.size();
                w.dispersion_m = dispersion(window, voxels, ref);
                w.angular_spread_deg = angular_spread(window, voxels);
                std::size_t same = 0;
                for (std::uint32_t r : window) same += sector_of_row[s][r] == sector_of_row[s][ref];
                w.same_sector_frac =
                    window.empty() ? 1.0 : static_cast<double>(same) / window.size();
            });
            SceneSummary summary;
            summary.scene = scene_name;
            summary.references = stats.size();
            const CoherenceAggregate a = aggregate(stats);
            summary.mean_dispersion_m = a.mean_dispersion_m;
            summary.mean_angular_spread_deg = a.mean_angular_spread_deg;
            rep.scenes.push_back(summary);
            rep.windows.insert(rep.windows.end(), stats.begin(), stats.end());
        }
        rep.aggregate = aggregate(rep.windows);
        report.strategies.push_back(std::move(rep));
    }

    for (std::size_t i = 1; i < report.strategies.size(); ++i) {
        const auto& base = report.strategies[0];
        const auto& cur = report.strategies[i];
        PairedSummary p;
        p.strategy = cur.strategy;
        p.baseline = base.strategy;
        for (std::size_t s = 0; s < cur.scenes.size(); ++s) {
            if (cur.scenes[s].references == 0) continue;
            PairedRow row{cur.scenes[s].scene, cur.scenes[s].mean_dispersion_m,
                          base.scenes[s].mean_dispersion_m, 0.0};
            row.delta_m = row.strategy_dispersion_m - row.baseline_dispersion_m;
            if (row.delta_m < 0.0) {
                ++p.lower;
            } else if (row.delta_m > 0.0) {
                ++p.higher;
            } else {
                ++p.ties;
            }
            p.rows.push_back(row);
        }
        report.paired.push_back(std::move(p));
    }
    return report;
}

void write_coherence_csv(const ComparisonReport& report, std::ostream& out) {
    out << "scene,strategy,ref_row,range_m,K,dispersion_m,angular_spread_deg,same_sector_frac\n";
    auto opt = [](const std::optional<double>& v) {
        return v ? fmt::format("{:.6f}", *v) : std::string{};
    };
    for (const auto& rep : report.strategies) {
        for (const auto& w : rep.windows) {
            out << fmt::format("{},{},{},{:.6f},{},{},{},{:.6f}\n", w.scene, rep.strategy,
                               w.ref_row, w.range_m, w.K, opt(w.dispersion_m),
                               opt(w.angular_spread_deg), w.same_sector_frac);
        }
    }
}

nlohmann::json to_json(const ComparisonReport& report) {
    using nlohmann::json;
    json j;
    j["K"] = report.options.K;
    j["far_range_m"] = report.options.far_range_m;
    j["delta_theta"] = report.options.delta_theta;
    j["max_refs_per_scene"] = report.options.max_refs_per_scene;
    j["seed"] = report.options.seed;
    j["window"] = "symmetric";
    j["hilbert_layout"] = "3d-zyx";
    j["strategies"] = json::array();
    for (const auto& rep : report.strategies) {
        json s;
        s["strategy"] = rep.strategy;
        const auto& a = rep.aggregate;
        s["aggregate"] = {{"windows", a.windows},
                          {"mean_dispersion_m", a.mean_dispersion_m},
                          {"median_dispersion_m", a.median_dispersion_m},
                          {"mean_angular_spread_deg", a.mean_angular_spread_deg},
                          {"median_angular_spread_deg", a.median_angular_spread_deg},
                          {"max_angular_spread_deg", a.max_angular_spread_deg},
                          {"mean_same_sector_frac", a.mean_same_sector_frac}};
        s["scenes"] = json::array();
        for (const auto& sc : rep.scenes) {
            s["scenes"].push_back({{"scene", sc.scene},
                                   {"references", sc.references},
                                   {"mean_dispersion_m", sc.mean_dispersion_m},
                                   {"mean_angular_spread_deg", sc.mean_angular_spread_deg}});
        }
        j["strategies"].push_back(s);
    }
    j["paired"] = json::array();
    for (const auto& p : report.paired) {
        json rows = json::array();
        for (const auto& r : p.rows) {
            rows.push_back({{"scene", r.scene},
                            {"strategy_dispersion_m", r.strategy_dispersion_m},
                            {"baseline_dispersion_m", r.baseline_dispersion_m},
                            {"delta_m", r.delta_m}});
        }
        j["paired"].push_back({{"strategy", p.strategy},
                               {"baseline", p.baseline},
                               {"lower", p.lower},
                               {"higher", p.higher},
                               {"ties", p.ties},
                               {"rows", rows}});
    }
    return j;
}

}  // namespace rayserde
