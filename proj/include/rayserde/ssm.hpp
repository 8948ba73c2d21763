// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace rayserde {

/// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    bool operator==(const Matrix&) const = default;
};

enum class Precision { f32, f64 };
Precision parse_precision(const std::string& name);
std::string to_string(Precision p);

/// Selective SSM with diagonal A and input-dependent (delta, B, C):
///
///   delta_t = softplus(delta_weight * x_t + delta_bias)   per channel
///   B_t     = b_proj * x_t,  C_t = c_proj * x_t           shared over channels
///   h_t     = exp(delta_t A) h_{t-1} + ((exp(delta_t A) - 1) / A) B_t x_t
///   y_t     = <C_t, h_t>
struct SsmParams {
    std::size_t state_dim = 0;  // N
    std::size_t channels = 0;   // D
    Matrix A;                   // D x N, all entries < 0
    Matrix delta_weight;        // D x D
    std::vector<double> delta_bias;  // D
    Matrix b_proj;              // N x D
    Matrix c_proj;              // N x D
    std::uint64_t seed = 0;

    /// A = -(1..N) per channel, projections drawn from a seeded uniform.
    static SsmParams init(std::size_t state_dim, std::size_t channels, std::uint64_t seed);
    /// Same shapes as `like`, every entry zero (used for gradients).
    static SsmParams zeros_like(const SsmParams& like);

    void validate() const;

    /// Named flat views over every trainable block, in a fixed order.
    struct Block {
        std::string name;
        std::size_t cols;  // for pretty indices; 1 for vectors
        std::span<double> values;
    };
    std::vector<Block> blocks();
    std::size_t parameter_count() const;

    bool operator==(const SsmParams&) const = default;
};

struct Discretized {
    double a_bar = 0.0;
    double b_bar = 0.0;
};

/// Below this |A| the zero-order-hold gain uses its A -> 0 limit (delta).
inline constexpr double kZohGuard = 1e-8;

/// Zero-order hold of one diagonal entry. Throws ContractError if delta <= 0.
Discretized discretize(double a, double b, double delta);

double softplus(double u);

/// Everything the backward pass needs from a forward run.
struct ScanCache {
    std::size_t length = 0;
    Matrix x;        // L x D
    Matrix u;        // L x D, pre-softplus
    Matrix delta;    // L x D
    Matrix B;        // L x N
    Matrix C;        // L x N
    std::vector<double> a_bar;  // L x D x N
    std::vector<double> gain;   // L x D x N, (a_bar - 1) / A
    std::vector<double> h;      // L x D x N
};

struct ScanOptions {
    unsigned workers = 1;
    Precision precision = Precision::f64;
};

struct ScanResult {
    Matrix y;
    ScanCache cache;
};

/// Forward scan over x (L x D). Keeps the cache; always double precision.
ScanResult selective_scan_fwd(const Matrix& x, const SsmParams& params, unsigned workers = 1);

/// Forward scan without a cache. Precision::f32 runs the recurrence in float.
Matrix selective_scan(const Matrix& x, const SsmParams& params, const ScanOptions& options = {});

struct ScanGradients {
    Matrix dx;
    SsmParams dparams;  // same shapes as the parameters
};

/// Reverse-time adjoint of selective_scan_fwd for upstream gradient grad_y (L x D).
ScanGradients selective_scan_bwd(const ScanCache& cache, const SsmParams& params,
                                 const Matrix& grad_y);

struct GradientEntry {
    std::string name;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    GradientEntry worst;
    std::size_t checked = 0;
    double eps = 0.0;
    double denom_floor = 0.0;
};

/// rel_err = |analytic - numeric| / max(|numeric|, kGradDenomFloor)
inline constexpr double kGradDenomFloor = 1e-6;

/// Central differences of scalar f over theta against `analytic`.
GradCheckReport finite_difference_check(const std::function<double(std::span<const double>)>& f,
                                        std::span<const double> theta,
                                        std::span<const double> analytic, double eps,
                                        const std::function<std::string(std::size_t)>& name_of = {});

struct GradCheckOptions {
    /// Applied to the analytic gradients before comparison; negative controls use it.
    std::function<void(ScanGradients&)> tamper;
};

/// Checks d(sum y)/d(x, params) from selective_scan_bwd against central differences.
/// eps must lie in [1e-7, 1e-3].
GradCheckReport grad_check(const SsmParams& params, const Matrix& x, double eps,
                           const GradCheckOptions& options = {});

inline constexpr std::uint32_t kSsmSnapshotVersion = 1;
void write_params(const SsmParams& params, const std::filesystem::path& path);
SsmParams read_params(const std::filesystem::path& path);

}  // namespace rayserde
