// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "rayserde/error.hpp"
#include "rayserde/ssm.hpp"

using namespace rayserde;

namespace {

double max_abs_diff(const Matrix& a, const Matrix& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace

TEST_CASE("zero-order hold limits") {
    const Discretized integrator = discretize(0.0, 2.0, 0.1);
    CHECK(integrator.a_bar == 1.0);
    CHECK(integrator.b_bar == doctest::Approx(0.2).epsilon(1e-15));

    const Discretized half = discretize(-1.0, 3.0, std::log(2.0));
    CHECK(half.a_bar == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(half.b_bar == doctest::Approx(1.5).epsilon(1e-15));

    const Discretized tiny = discretize(-5.0, 1.0, 1e-12);
    CHECK(tiny.a_bar == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(std::abs(tiny.b_bar) < 1e-11);

    CHECK_THROWS_AS(discretize(-1.0, 1.0, 0.0), ContractError);
    CHECK_THROWS_AS(discretize(-1.0, 1.0, -0.1), ContractError);
}

TEST_CASE("parameter init shapes and validation") {
    const SsmParams p = SsmParams::init(16, 4, 3);
    p.validate();
    CHECK(p.A.rows == 4);
    CHECK(p.A.cols == 16);
    CHECK(p.A(2, 0) == -1.0);
    CHECK(p.A(2, 15) == -16.0);
    CHECK(p.parameter_count() == 4 * 16 + 16 + 4 + 2 * 16 * 4);
    CHECK(SsmParams::init(16, 4, 3) == p);
    CHECK_FALSE(SsmParams::init(16, 4, 4) == p);

    SsmParams bad = p;
    bad.A(0, 0) = 0.5;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("zero input gives zero output") {
    const SsmParams p = SsmParams::init(8, 3, 1);
    const Matrix y = selective_scan(Matrix(20, 3), p);
    for (double v : y.data) CHECK(v == 0.0);
}

TEST_CASE("scan matches naive recurrence") {
    const SsmParams p = SsmParams::init(16, 4, 7);
    const Matrix x = oracle::random_input(512, 4, 8);
    const Matrix expected = oracle::naive_scan(x, p);
    CHECK(max_abs_diff(selective_scan(x, p), expected) <= 1e-10);
    CHECK(max_abs_diff(selective_scan_fwd(x, p, 3).y, expected) <= 1e-10);
    CHECK(selective_scan(x, p, {1}) == selective_scan(x, p, {4}));
}

TEST_CASE("single precision path stays close") {
    const SsmParams p = SsmParams::init(16, 4, 2);
    const Matrix x = oracle::random_input(256, 4, 3);
    const Matrix y64 = selective_scan(x, p, {1, Precision::f64});
    const Matrix y32 = selective_scan(x, p, {1, Precision::f32});
    CHECK(max_abs_diff(y64, y32) < 1e-4);
    CHECK_FALSE(y64 == y32);
}

TEST_CASE("scan rejects mismatched input") {
    const SsmParams p = SsmParams::init(4, 3, 0);
    CHECK_THROWS_AS(selective_scan(Matrix(5, 2), p), ContractError);
}

TEST_CASE("zero upstream gradient gives zero gradients") {
    SsmParams p = SsmParams::init(8, 4, 5);
    const Matrix x = oracle::random_input(16, 4, 6);
    const auto fwd = selective_scan_fwd(x, p);
    ScanGradients g = selective_scan_bwd(fwd.cache, p, Matrix(16, 4));
    for (double v : g.dx.data) CHECK(v == 0.0);
    for (auto& block : g.dparams.blocks())
        for (double v : block.values) CHECK(v == 0.0);
}

TEST_CASE("gradient check on a single step") {
    const SsmParams p = SsmParams::init(4, 2, 9);
    const Matrix x = oracle::random_input(1, 2, 10);
    const GradCheckReport r = grad_check(p, x, 1e-5);
    CHECK(r.worst.rel_err <= 1e-4);
    CHECK(r.checked == 2 + p.parameter_count());
}

TEST_CASE("gradient check on a random instance") {
    const SsmParams p = SsmParams::init(8, 4, 21);
    const Matrix x = oracle::random_input(64, 4, 22);
    const GradCheckReport r = grad_check(p, x, 1e-5);
    INFO("worst ", r.worst.name, " rel_err ", r.worst.rel_err);
    CHECK(r.worst.rel_err <= 1e-4);
    CHECK_THROWS_AS(grad_check(p, x, 1e-2), ContractError);
}

TEST_CASE("finite difference harness on a linear toy") {
    const std::vector<double> theta{0.3, -1.2, 2.5};
    const std::vector<double> weights{1.5, -2.0, 0.25};
    auto f = [&](std::span<const double> t) {
        double s = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) s += weights[i] * t[i];
        return s;
    };
    const GradCheckReport r = finite_difference_check(f, theta, weights, 1e-5);
    CHECK(r.worst.rel_err <= 1e-10);
    CHECK(r.checked == 3);
}

TEST_CASE("corrupted backward is flagged") {
    const SsmParams p = SsmParams::init(8, 4, 31);
    const Matrix x = oracle::random_input(32, 4, 32);
    GradCheckOptions opts;
    opts.tamper = [](ScanGradients& g) {
        for (double& v : g.dx.data) v *= 2.0;
    };
    const GradCheckReport r = grad_check(p, x, 1e-5, opts);
    CHECK(r.worst.rel_err == doctest::Approx(1.0).epsilon(0.05));
    CHECK(r.worst.name.rfind("x[", 0) == 0);
}

TEST_CASE("parameter snapshot round trip") {
    const SsmParams p = SsmParams::init(6, 3, 77);
    const auto path = std::filesystem::temp_directory_path() / "rayserde_test_params.rssm";
    write_params(p, path);
    CHECK(read_params(path) == p);
    std::filesystem::resize_file(path, 20);
    CHECK_THROWS_AS(read_params(path), FormatError);
    std::filesystem::remove(path);
}
