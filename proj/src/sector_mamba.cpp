// SPDX-License-Identifier: Apache-2.0

#include "rayserde/sector_mamba.hpp"

#include <atomic>
#include <cmath>
#include <random>
#include <unordered_map>

#include <fmt/format.h>

#include "rayserde/error.hpp"
#include "rayserde/parallel.hpp"

namespace rayserde {

SectorMambaBlock SectorMambaBlock::make(const SectorMambaConfig& config) {
    if (config.input_channels == 0 || config.model_channels == 0) {
        throw ConfigError("block channels must be >= 1");
    }
    if (config.radius < 0) throw ConfigError("aggregation radius must be >= 0");
    if (config.max_len == 0) throw ConfigError("max_len must be >= 1");

    SectorMambaBlock b;
    b.layer = config.layer;
    b.input_channels = config.input_channels;
    b.model_channels = config.model_channels;
    b.radius = config.radius;
    b.ssm = SsmParams::init(config.state_dim, config.model_channels, config.seed);

    // Separate stream so the SSM draws do not depend on projection shapes.
    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    const double in_bound = 1.0 / std::sqrt(static_cast<double>(config.input_channels));
    const double out_bound = 1.0 / std::sqrt(static_cast<double>(config.model_channels));
    std::uniform_real_distribution<double> in_w(-in_bound, in_bound);
    std::uniform_real_distribution<double> out_w(-out_bound, out_bound);
    std::uniform_real_distribution<double> pos_w(-0.02, 0.02);

    b.in_proj = Matrix(config.model_channels, config.input_channels);
    for (double& v : b.in_proj.data) v = in_w(rng);
    b.in_bias.assign(config.model_channels, 0.0);
    b.out_proj = Matrix(config.input_channels, config.model_channels);
    for (double& v : b.out_proj.data) v = out_w(rng);

    b.pos_embed = Matrix(config.max_len, config.model_channels);
    if (config.sinusoidal_positions) {
        const double D = static_cast<double>(config.model_channels);
        for (std::size_t t = 0; t < config.max_len; ++t) {
            for (std::size_t c = 0; c < config.model_channels; ++c) {
                const double freq = std::pow(10000.0, -2.0 * static_cast<double>(c / 2) / D);
                const double a = static_cast<double>(t) * freq;
                b.pos_embed(t, c) = (c % 2 == 0) ? std::sin(a) : std::cos(a);
            }
        }
    } else {
        for (double& v : b.pos_embed.data) v = pos_w(rng);
    }
    return b;
}

void SectorMambaBlock::validate() const {
    ssm.validate();
    if (ssm.channels != model_channels) throw ContractError("ssm channels != model_channels");
    if (in_proj.rows != model_channels || in_proj.cols != input_channels) {
        throw ContractError("in_proj shape mismatch");
    }
    if (in_bias.size() != model_channels) throw ContractError("in_bias length mismatch");
    if (out_proj.rows != input_channels || out_proj.cols != model_channels) {
        throw ContractError("out_proj shape mismatch");
    }
    if (pos_embed.cols != model_channels) throw ContractError("pos_embed width mismatch");
    if (radius < 0) throw ConfigError("aggregation radius must be >= 0");
}

SparseVoxelSet local_aggregate(const SparseVoxelSet& voxels, std::int32_t radius,
                               unsigned workers) {
    if (radius < 0) throw ConfigError("aggregation radius must be >= 0");
    if (radius == 0 || voxels.empty()) return voxels;

    const VoxelGridSpec& spec = voxels.spec;
    std::unordered_map<std::uint64_t, std::uint32_t> row_of;
    row_of.reserve(voxels.size() * 2);
    for (std::size_t i = 0; i < voxels.size(); ++i) {
        row_of.emplace(spec.linear_index(voxels.coords[i]), static_cast<std::uint32_t>(i));
    }

    SparseVoxelSet out = voxels;
    const std::size_t C = voxels.channels;
    parallel_for(voxels.size(), workers, [&](std::size_t i) {
        const Cell c = voxels.coords[i];
        std::vector<double> sum(C, 0.0);
        std::size_t count = 0;
        for (std::int32_t dz = -radius; dz <= radius; ++dz) {
            for (std::int32_t dy = -radius; dy <= radius; ++dy) {
                for (std::int32_t dx = -radius; dx <= radius; ++dx) {
                    const Cell n{c.z + dz, c.y + dy, c.x + dx};
                    if (!spec.contains(n)) continue;
                    const auto it = row_of.find(spec.linear_index(n));
                    if (it == row_of.end()) continue;
                    const auto f = voxels.feature(it->second);
                    for (std::size_t k = 0; k < C; ++k) sum[k] += f[k];
                    ++count;
                }
            }
        }
        auto dst = out.feature(i);
        for (std::size_t k = 0; k < C; ++k) dst[k] = sum[k] / static_cast<double>(count);
    });
    return out;
}

Matrix positional_embed(const Matrix& features, const SectorMambaBlock& block) {
    if (features.cols != block.pos_embed.cols) {
        throw ContractError(fmt::format("features have {} channels, embedding table has {}",
                                        features.cols, block.pos_embed.cols));
    }
    if (features.rows > block.max_len()) {
        throw CapacityError(fmt::format("sequence length {} exceeds max_len {}", features.rows,
                                        block.max_len()));
    }
    Matrix out = features;
    for (std::size_t t = 0; t < features.rows; ++t) {
        const auto e = block.pos_embed.row(t);
        auto r = out.row(t);
        for (std::size_t c = 0; c < r.size(); ++c) r[c] += e[c];
    }
    return out;
}

namespace {

// out (L x W.rows) = in (L x W.cols) * W^T + bias
Matrix project(const Matrix& in, const Matrix& w, const std::vector<double>* bias) {
    Matrix out(in.rows, w.rows);
    for (std::size_t t = 0; t < in.rows; ++t) {
        const auto x = in.row(t);
        for (std::size_t o = 0; o < w.rows; ++o) {
            double acc = bias != nullptr ? (*bias)[o] : 0.0;
            for (std::size_t i = 0; i < w.cols; ++i) acc += w(o, i) * x[i];
            out(t, o) = acc;
        }
    }
    return out;
}

}  // namespace

SectorForwardResult sector_mamba_forward(const SparseVoxelSet& voxels,
                                         const SectorTemplate& tmpl,
                                         const SectorMambaBlock& block,
                                         const SectorForwardOptions& options) {
    block.validate();
    if (voxels.channels != block.input_channels) {
        throw ContractError(fmt::format("voxels have {} channels, block expects {}",
                                        voxels.channels, block.input_channels));
    }
    SectorForwardResult result;
    if (voxels.empty()) {
        result.voxels = voxels;
        return result;
    }

    const SparseVoxelSet aggregated = local_aggregate(voxels, block.radius, options.workers);
    Serialized ser = spatial_to_sequence(aggregated, SerializationStrategy::ray_aligned(tmpl),
                                         {options.workers});
    SectorSequences& seqs = ser.sequences;

    for (const auto& s : seqs.sectors) {
        if (s.length() > block.max_len()) {
            throw CapacityError(fmt::format("sector {} has {} voxels, max_len is {}", s.sector,
                                            s.length(), block.max_len()));
        }
        result.stats.longest_sequence = std::max(result.stats.longest_sequence, s.length());
    }

    std::atomic<std::size_t> scans{0};
    const ScanOptions scan_opts{1, options.precision};
    parallel_for(seqs.sectors.size(), options.workers, [&](std::size_t slot) {
        SectorSequence& seq = seqs.sectors[slot];
        Matrix feats(seq.length(), block.input_channels);
        feats.data = seq.features;
        const Matrix hidden =
            positional_embed(project(feats, block.in_proj, &block.in_bias), block);
        const Matrix scanned = selective_scan(hidden, block.ssm, scan_opts);
        scans.fetch_add(1, std::memory_order_relaxed);
        seq.features = project(scanned, block.out_proj, nullptr).data;
    });
    result.stats.scan_invocations = scans.load();
    result.stats.sectors = seqs.sectors.size();

    const SparseVoxelSet scattered = sequence_to_spatial(seqs, ser.inverse, aggregated);
    result.voxels = voxels;
    for (std::size_t i = 0; i < result.voxels.features.size(); ++i) {
        result.voxels.features[i] += scattered.features[i];
    }
    return result;
}

}  // namespace rayserde
