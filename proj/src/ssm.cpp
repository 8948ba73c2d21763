// SPDX-License-Identifier: Apache-2.0

#include "rayserde/ssm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <fmt/format.h>

#include "rayserde/error.hpp"
#include "rayserde/parallel.hpp"

namespace rayserde {

Precision parse_precision(const std::string& name) {
    if (name == "f64") return Precision::f64;
    if (name == "f32") return Precision::f32;
    throw ConfigError(fmt::format("precision: unknown '{}' (expected f32|f64)", name));
}

std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

SsmParams SsmParams::init(std::size_t state_dim, std::size_t channels, std::uint64_t seed) {
    if (state_dim == 0 || channels == 0) {
        throw ConfigError("state_dim and channels must be >= 1");
    }
    SsmParams p;
    p.state_dim = state_dim;
    p.channels = channels;
    p.seed = seed;
    p.A = Matrix(channels, state_dim);
    for (std::size_t d = 0; d < channels; ++d)
        for (std::size_t n = 0; n < state_dim; ++n) p.A(d, n) = -static_cast<double>(n + 1);

    std::mt19937_64 rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
    std::uniform_real_distribution<double> weight(-bound, bound);
    // Step sizes start log-uniform in [1e-3, 1e-1]; the bias is softplus^-1 of that.
    std::uniform_real_distribution<double> log_dt(std::log(1e-3), std::log(1e-1));

    p.delta_weight = Matrix(channels, channels);
    for (double& v : p.delta_weight.data) v = weight(rng);
    p.delta_bias.resize(channels);
    for (double& v : p.delta_bias) v = std::log(std::expm1(std::exp(log_dt(rng))));
    p.b_proj = Matrix(state_dim, channels);
    for (double& v : p.b_proj.data) v = weight(rng);
    p.c_proj = Matrix(state_dim, channels);
    for (double& v : p.c_proj.data) v = weight(rng);
    return p;
}

SsmParams SsmParams::zeros_like(const SsmParams& like) {
    SsmParams p;
    p.state_dim = like.state_dim;
    p.channels = like.channels;
    p.seed = like.seed;
    p.A = Matrix(like.A.rows, like.A.cols);
    p.delta_weight = Matrix(like.delta_weight.rows, like.delta_weight.cols);
    p.delta_bias.assign(like.delta_bias.size(), 0.0);
    p.b_proj = Matrix(like.b_proj.rows, like.b_proj.cols);
    p.c_proj = Matrix(like.c_proj.rows, like.c_proj.cols);
    return p;
}

void SsmParams::validate() const {
    const std::size_t N = state_dim, D = channels;
    if (N == 0 || D == 0) throw ConfigError("state_dim and channels must be >= 1");
    auto shape = [](const Matrix& m, std::size_t r, std::size_t c, const char* name) {
        if (m.rows != r || m.cols != c || m.data.size() != r * c) {
            throw ContractError(
                fmt::format("{}: expected {}x{}, got {}x{}", name, r, c, m.rows, m.cols));
        }
    };
    shape(A, D, N, "A");
    shape(delta_weight, D, D, "delta_weight");
    shape(b_proj, N, D, "b_proj");
    shape(c_proj, N, D, "c_proj");
    if (delta_bias.size() != D) throw ContractError("delta_bias: expected length D");
    for (std::size_t i = 0; i < A.data.size(); ++i) {
        if (!(A.data[i] < 0.0)) {
            throw ConfigError(fmt::format("A[{},{}] = {} must be negative", i / N, i % N,
                                          A.data[i]));
        }
    }
}

std::vector<SsmParams::Block> SsmParams::blocks() {
    return {{"A", A.cols, A.data},
            {"delta_weight", delta_weight.cols, delta_weight.data},
            {"delta_bias", 1, delta_bias},
            {"b_proj", b_proj.cols, b_proj.data},
            {"c_proj", c_proj.cols, c_proj.data}};
}

std::size_t SsmParams::parameter_count() const {
    return A.data.size() + delta_weight.data.size() + delta_bias.size() + b_proj.data.size() +
           c_proj.data.size();
}

double softplus(double u) { return u > 30.0 ? u : std::log1p(std::exp(u)); }

namespace {

double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }

template <typename T>
struct Zoh {
    T a_bar;
    T gain;  // (a_bar - 1) / a, or delta in the a -> 0 limit
};

template <typename T>
Zoh<T> zoh(T a, T delta) {
    const T a_bar = std::exp(delta * a);
    if (std::abs(static_cast<double>(a)) < kZohGuard) return {a_bar, delta};
    return {a_bar, std::expm1(delta * a) / a};
}

void check_input(const Matrix& x, const SsmParams& params) {
    params.validate();
    if (x.cols != params.channels || x.data.size() != x.rows * x.cols) {
        throw ContractError(fmt::format("input has {} channels, params expect {}", x.cols,
                                        params.channels));
    }
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        if (!std::isfinite(x.data[i])) {
            throw NumericError(fmt::format("non-finite input at step {}", i / x.cols),
                               i / x.cols);
        }
    }
}

struct Projections {
    Matrix u, delta, B, C;
};

Projections project(const Matrix& x, const SsmParams& p, unsigned workers) {
    const std::size_t L = x.rows, D = p.channels, N = p.state_dim;
    Projections pr{Matrix(L, D), Matrix(L, D), Matrix(L, N), Matrix(L, N)};
    parallel_for(L, workers, [&](std::size_t t) {
        const auto xt = x.row(t);
        for (std::size_t d = 0; d < D; ++d) {
            double u = p.delta_bias[d];
            for (std::size_t j = 0; j < D; ++j) u += p.delta_weight(d, j) * xt[j];
            pr.u(t, d) = u;
            pr.delta(t, d) = softplus(u);
        }
        for (std::size_t n = 0; n < N; ++n) {
            double b = 0.0, c = 0.0;
            for (std::size_t j = 0; j < D; ++j) {
                b += p.b_proj(n, j) * xt[j];
                c += p.c_proj(n, j) * xt[j];
            }
            pr.B(t, n) = b;
            pr.C(t, n) = c;
        }
    });
    return pr;
}

[[noreturn]] void non_finite(std::size_t step, std::size_t channel) {
    throw NumericError(
        fmt::format("non-finite scan state at step {} (channel {})", step, channel), step);
}

// Sequential recurrence for one channel. Channels are independent once the
// projections are known.
template <typename T>
void scan_channel(std::size_t d, const Matrix& x, const Projections& pr, const SsmParams& p,
                  Matrix& y, ScanCache* cache) {
    const std::size_t L = x.rows, D = p.channels, N = p.state_dim;
    std::vector<T> h(N, T(0));
    std::vector<T> a(N);
    for (std::size_t n = 0; n < N; ++n) a[n] = static_cast<T>(p.A(d, n));
    for (std::size_t t = 0; t < L; ++t) {
        const T dt = static_cast<T>(pr.delta(t, d));
        const T xt = static_cast<T>(x(t, d));
        T acc = 0;
        for (std::size_t n = 0; n < N; ++n) {
            const Zoh<T> z = zoh(a[n], dt);
            h[n] = z.a_bar * h[n] + z.gain * static_cast<T>(pr.B(t, n)) * xt;
            acc += static_cast<T>(pr.C(t, n)) * h[n];
            if (cache != nullptr) {
                const std::size_t idx = (t * D + d) * N + n;
                cache->a_bar[idx] = static_cast<double>(z.a_bar);
                cache->gain[idx] = static_cast<double>(z.gain);
                cache->h[idx] = static_cast<double>(h[n]);
            }
        }
        if (!std::isfinite(acc)) non_finite(t, d);
        y(t, d) = static_cast<double>(acc);
    }
}

template <typename T>
Matrix run_scan(const Matrix& x, const SsmParams& params, unsigned workers, ScanCache* cache) {
    check_input(x, params);
    const std::size_t L = x.rows, D = params.channels, N = params.state_dim;
    Projections pr = project(x, params, workers);
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t d = 0; d < D; ++d)
            if (!std::isfinite(pr.delta(t, d))) non_finite(t, d);
    if (cache != nullptr) {
        cache->length = L;
        cache->a_bar.assign(L * D * N, 0.0);
        cache->gain.assign(L * D * N, 0.0);
        cache->h.assign(L * D * N, 0.0);
    }
    Matrix y(L, D);
    parallel_for(D, workers,
                 [&](std::size_t d) { scan_channel<T>(d, x, pr, params, y, cache); });
    if (cache != nullptr) {
        cache->x = x;
        cache->u = std::move(pr.u);
        cache->delta = std::move(pr.delta);
        cache->B = std::move(pr.B);
        cache->C = std::move(pr.C);
    }
    return y;
}

}  // namespace

Discretized discretize(double a, double b, double delta) {
    if (!(delta > 0.0)) {
        throw ContractError(fmt::format("step size delta must be > 0 (got {})", delta));
    }
    const Zoh<double> z = zoh(a, delta);
    return {z.a_bar, z.gain * b};
}

ScanResult selective_scan_fwd(const Matrix& x, const SsmParams& params, unsigned workers) {
    ScanResult r;
    r.y = run_scan<double>(x, params, workers, &r.cache);
    return r;
}

Matrix selective_scan(const Matrix& x, const SsmParams& params, const ScanOptions& options) {
    if (options.precision == Precision::f32) {
        return run_scan<float>(x, params, options.workers, nullptr);
    }
    return run_scan<double>(x, params, options.workers, nullptr);
}

ScanGradients selective_scan_bwd(const ScanCache& cache, const SsmParams& params,
                                 const Matrix& grad_y) {
    const std::size_t L = cache.length, D = params.channels, N = params.state_dim;
    if (grad_y.rows != L || grad_y.cols != D) {
        throw ContractError(fmt::format("grad_y is {}x{}, forward output was {}x{}", grad_y.rows,
                                        grad_y.cols, L, D));
    }
    if (cache.x.rows != L || cache.x.cols != D || cache.B.cols != N || cache.h.size() != L * D * N) {
        throw ContractError("scan cache does not match parameter shapes");
    }

    ScanGradients g;
    g.dx = Matrix(L, D);
    g.dparams = SsmParams::zeros_like(params);
    SsmParams& gp = g.dparams;

    std::vector<double> gh(D * N, 0.0);  // adjoint of h_t carried backwards
    std::vector<double> g_delta(D), g_B(N), g_C(N);
    for (std::size_t step = L; step-- > 0;) {
        std::fill(g_delta.begin(), g_delta.end(), 0.0);
        std::fill(g_B.begin(), g_B.end(), 0.0);
        std::fill(g_C.begin(), g_C.end(), 0.0);
        const auto xt = cache.x.row(step);
        for (std::size_t d = 0; d < D; ++d) {
            const double gy = grad_y(step, d);
            const double dt = cache.delta(step, d);
            for (std::size_t n = 0; n < N; ++n) {
                const std::size_t idx = (step * D + d) * N + n;
                const double a = params.A(d, n);
                const double a_bar = cache.a_bar[idx];
                const double gain = cache.gain[idx];
                const double b = cache.B(step, n);
                const double h_prev = step > 0 ? cache.h[idx - D * N] : 0.0;

                double& adj = gh[d * N + n];
                adj += cache.C(step, n) * gy;
                g_C[n] += gy * cache.h[idx];

                const double g_abar = adj * h_prev;
                const double g_bbar = adj * xt[d];
                g.dx(step, d) += adj * gain * b;

                // d gain / d delta and d gain / d A for gain = (exp(delta a) - 1) / a.
                double dgain_ddelta, dgain_da;
                if (std::abs(a) < kZohGuard) {
                    dgain_ddelta = 1.0;
                    dgain_da = 0.5 * dt * dt;
                } else {
                    dgain_ddelta = a_bar;
                    dgain_da = (dt * a_bar - gain) / a;
                }
                g_delta[d] += g_abar * a * a_bar + g_bbar * b * dgain_ddelta;
                gp.A(d, n) += g_abar * dt * a_bar + g_bbar * b * dgain_da;
                g_B[n] += g_bbar * gain;

                adj *= a_bar;
            }
        }
        for (std::size_t d = 0; d < D; ++d) {
            const double gu = g_delta[d] * sigmoid(cache.u(step, d));
            gp.delta_bias[d] += gu;
            for (std::size_t j = 0; j < D; ++j) {
                gp.delta_weight(d, j) += gu * xt[j];
                g.dx(step, j) += gu * params.delta_weight(d, j);
            }
        }
        for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t j = 0; j < D; ++j) {
                gp.b_proj(n, j) += g_B[n] * xt[j];
                gp.c_proj(n, j) += g_C[n] * xt[j];
                g.dx(step, j) += g_B[n] * params.b_proj(n, j) + g_C[n] * params.c_proj(n, j);
            }
        }
    }
    return g;
}

GradCheckReport finite_difference_check(const std::function<double(std::span<const double>)>& f,
                                        std::span<const double> theta,
                                        std::span<const double> analytic, double eps,
                                        const std::function<std::string(std::size_t)>& name_of) {
    if (theta.size() != analytic.size()) {
        throw ContractError(fmt::format("{} parameters but {} analytic gradients", theta.size(),
                                        analytic.size()));
    }
    GradCheckReport report;
    report.eps = eps;
    report.denom_floor = kGradDenomFloor;
    report.worst.rel_err = -1.0;
    std::vector<double> probe(theta.begin(), theta.end());
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double saved = probe[i];
        probe[i] = saved + eps;
        const double f_plus = f(probe);
        probe[i] = saved - eps;
        const double f_minus = f(probe);
        probe[i] = saved;
        const double numeric = (f_plus - f_minus) / (2.0 * eps);
        const double rel =
            std::abs(analytic[i] - numeric) / std::max(std::abs(numeric), kGradDenomFloor);
        if (rel > report.worst.rel_err) {
            report.worst = {name_of ? name_of(i) : fmt::format("theta[{}]", i), analytic[i],
                            numeric, rel};
        }
        ++report.checked;
    }
    if (report.checked == 0) report.worst.rel_err = 0.0;
    return report;
}

namespace {

// Flat layout used by grad_check: x first, then each parameter block.
struct FlatLayout {
    struct Segment {
        std::string name;
        std::size_t cols;
        std::size_t begin;
        std::size_t size;
    };
    std::vector<Segment> segments;
    std::size_t total = 0;

    std::string name_of(std::size_t i) const {
        for (const auto& s : segments) {
            if (i < s.begin + s.size) {
                const std::size_t k = i - s.begin;
                if (s.cols == 1) return fmt::format("{}[{}]", s.name, k);
                return fmt::format("{}[{},{}]", s.name, k / s.cols, k % s.cols);
            }
        }
        return fmt::format("theta[{}]", i);
    }
};

FlatLayout layout_of(const Matrix& x, SsmParams& p) {
    FlatLayout l;
    l.segments.push_back({"x", x.cols, 0, x.data.size()});
    l.total = x.data.size();
    for (auto& b : p.blocks()) {
        l.segments.push_back({b.name, b.cols, l.total, b.values.size()});
        l.total += b.values.size();
    }
    return l;
}

std::vector<double> flatten(const Matrix& x, SsmParams& p) {
    std::vector<double> v(x.data.begin(), x.data.end());
    for (auto& b : p.blocks()) v.insert(v.end(), b.values.begin(), b.values.end());
    return v;
}

void unflatten(std::span<const double> v, Matrix& x, SsmParams& p) {
    std::size_t off = 0;
    std::copy_n(v.begin(), x.data.size(), x.data.begin());
    off += x.data.size();
    for (auto& b : p.blocks()) {
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(off), b.values.size(),
                    b.values.begin());
        off += b.values.size();
    }
}

}  // namespace

GradCheckReport grad_check(const SsmParams& params, const Matrix& x, double eps,
                           const GradCheckOptions& options) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) {
        throw ContractError(fmt::format("eps {} outside [1e-7, 1e-3]", eps));
    }
    ScanResult fwd = selective_scan_fwd(x, params);
    ScanGradients grads =
        selective_scan_bwd(fwd.cache, params, Matrix(x.rows, params.channels, 1.0));
    if (options.tamper) options.tamper(grads);

    Matrix x_work = x;
    SsmParams p_work = params;
    const FlatLayout layout = layout_of(x_work, p_work);
    const std::vector<double> theta = flatten(x_work, p_work);
    const std::vector<double> analytic = flatten(grads.dx, grads.dparams);

    auto loss = [&](std::span<const double> v) {
        unflatten(v, x_work, p_work);
        // Perturbed A may cross zero only for absurd eps; the scan rejects it then.
        const Matrix y = selective_scan(x_work, p_work);
        double s = 0.0;
        for (double e : y.data) s += e;
        return s;
    };
    return finite_difference_check(loss, theta, analytic, eps,
                                   [&](std::size_t i) { return layout.name_of(i); });
}

// ---------------------------------------------------------------------------
// Snapshot file: "RSSM", version u32, N u32, D u32, seed u64, then raw doubles
// of every block in SsmParams::blocks() order.

namespace {
constexpr char kSnapMagic[4] = {'R', 'S', 'S', 'M'};
}

void write_params(const SsmParams& params, const std::filesystem::path& path) {
    params.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(fmt::format("cannot write '{}'", path.string()));
    auto put = [&](const auto& v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
    out.write(kSnapMagic, 4);
    put(kSsmSnapshotVersion);
    put(static_cast<std::uint32_t>(params.state_dim));
    put(static_cast<std::uint32_t>(params.channels));
    put(params.seed);
    SsmParams copy = params;
    for (auto& b : copy.blocks()) {
        out.write(reinterpret_cast<const char*>(b.values.data()),
                  static_cast<std::streamsize>(b.values.size() * sizeof(double)));
    }
    if (!out) throw FormatError(fmt::format("short write to '{}'", path.string()));
}

SsmParams read_params(const std::filesystem::path& path) {
    static_assert(std::endian::native == std::endian::little);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(fmt::format("cannot open '{}'", path.string()));
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 4 || std::memcmp(buf.data(), kSnapMagic, 4) != 0) {
        throw FormatError("magic: expected 'RSSM'");
    }
    constexpr std::size_t kHeader = 4 + 4 + 4 + 4 + 8;
    if (buf.size() < kHeader) throw FormatError("header: truncated");
    std::uint32_t version, n, d;
    std::uint64_t seed;
    std::memcpy(&version, buf.data() + 4, 4);
    std::memcpy(&n, buf.data() + 8, 4);
    std::memcpy(&d, buf.data() + 12, 4);
    std::memcpy(&seed, buf.data() + 16, 8);
    if (version != kSsmSnapshotVersion) {
        throw FormatError(fmt::format("version: expected {}, got {}", kSsmSnapshotVersion, version));
    }
    if (n == 0 || d == 0 || n > (1u << 16) || d > (1u << 16)) {
        throw FormatError(fmt::format("shape: invalid N={} D={}", n, d));
    }
    SsmParams p;
    p.state_dim = n;
    p.channels = d;
    p.seed = seed;
    p.A = Matrix(d, n);
    p.delta_weight = Matrix(d, d);
    p.delta_bias.assign(d, 0.0);
    p.b_proj = Matrix(n, d);
    p.c_proj = Matrix(n, d);
    const std::size_t expected = kHeader + p.parameter_count() * sizeof(double);
    if (buf.size() != expected) {
        throw FormatError(
            fmt::format("payload: expected {} bytes, got {}", expected, buf.size()));
    }
    std::size_t off = kHeader;
    for (auto& b : p.blocks()) {
        std::memcpy(b.values.data(), buf.data() + off, b.values.size() * sizeof(double));
        off += b.values.size() * sizeof(double);
    }
    try {
        p.validate();
    } catch (const Error& e) {
        throw FormatError(fmt::format("A: {}", e.what()));
    }
    return p;
}

}  // namespace rayserde
