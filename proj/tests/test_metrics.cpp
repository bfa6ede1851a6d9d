#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "pimol/metrics.hpp"
#include "pimol/rng.hpp"

using namespace pimol;

namespace {
constexpr double kPi = std::numbers::pi;
}

TEST_CASE("l2_rel basics") {
    Eigen::MatrixXd u = Eigen::MatrixXd::Constant(8, 16, 1.0);
    Eigen::MatrixXd v = Eigen::MatrixXd::Constant(8, 16, 1.1);
    CHECK(l2_rel(u, u) == 0.0);
    CHECK(l2_rel(u, v) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(l2_rel(u, Eigen::MatrixXd::Zero(8, 16)) == doctest::Approx(1.0).epsilon(1e-15));

    // scaled sine: ||u - 0.9 u|| / ||u|| = 0.1
    Eigen::MatrixXd s(4, 64);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 64; ++j) s(i, j) = std::sin(2 * kPi * j / 64.0);
    CHECK(l2_rel(s, 0.9 * s) == doctest::Approx(0.1).epsilon(1e-12));

    CHECK_THROWS_AS(l2_rel(Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(2, 2)),
                    DegenerateReference);
    CHECK_THROWS_AS(l2_rel(u, Eigen::MatrixXd::Zero(2, 2)), ShapeError);
}

TEST_CASE("h1_rel basics and the shifted-sine amplification") {
    Eigen::MatrixXd u = Eigen::MatrixXd::Constant(8, 16, 1.0);
    Eigen::MatrixXd v = Eigen::MatrixXd::Constant(8, 16, 1.1);
    CHECK(h1_rel(u, u) == 0.0);
    // constant fields have zero gradients: reduces to the L2 ratio
    CHECK(h1_rel(u, v) == doctest::Approx(0.1).epsilon(1e-12));

    // u = sin(2 pi x), v = sin(2 pi (x - delta)): a single mode shifts both
    // the value and derivative errors by the same factor, so H1 == L2 here;
    // the quadrature-oracle equality below is the substantive check
    const int nt = 8, nx = 64;
    const double delta = 0.05;
    Eigen::MatrixXd su(nt, nx), sv(nt, nx);
    for (int i = 0; i < nt; ++i)
        for (int j = 0; j < nx; ++j) {
            const double x = static_cast<double>(j) / nx;
            su(i, j) = std::sin(2 * kPi * x);
            sv(i, j) = std::sin(2 * kPi * (x - delta));
        }
    const double l2 = l2_rel(su, sv);
    const double h1 = h1_rel(su, sv);
    CHECK(h1 == doctest::Approx(l2).epsilon(1e-12));

    // with a second, higher mode the derivative reweighting bites: H1 > L2
    Eigen::MatrixXd mu(nt, nx), mv(nt, nx);
    for (int i = 0; i < nt; ++i)
        for (int j = 0; j < nx; ++j) {
            const double x = static_cast<double>(j) / nx;
            mu(i, j) = std::sin(2 * kPi * x) + 0.3 * std::sin(6 * kPi * x);
            mv(i, j) = std::sin(2 * kPi * (x - delta)) + 0.3 * std::sin(6 * kPi * (x - delta));
        }
    CHECK(h1_rel(mu, mv) > l2_rel(mu, mv));

    // quadrature oracle: direct sums with the same stencils
    auto stencil_dx = [&](const Eigen::MatrixXd& m, int i, int j) {
        const int jp = (j + 1) % nx, jm = (j + nx - 1) % nx;
        return (m(i, jp) - m(i, jm)) / (2.0 / nx);
    };
    double num = 0.0, den = 0.0;
    for (int i = 0; i < nt; ++i)
        for (int j = 0; j < nx; ++j) {
            const double dt_u = i == 0          ? (su(1, j) - su(0, j)) * nt
                                : i == nt - 1   ? (su(nt - 1, j) - su(nt - 2, j)) * nt
                                                : (su(i + 1, j) - su(i - 1, j)) * nt / 2.0;
            const double dt_v = i == 0          ? (sv(1, j) - sv(0, j)) * nt
                                : i == nt - 1   ? (sv(nt - 1, j) - sv(nt - 2, j)) * nt
                                                : (sv(i + 1, j) - sv(i - 1, j)) * nt / 2.0;
            const double du = su(i, j) - sv(i, j);
            const double ddx = stencil_dx(su, i, j) - stencil_dx(sv, i, j);
            const double ddt = dt_u - dt_v;
            num += du * du + ddx * ddx + ddt * ddt;
            den += su(i, j) * su(i, j) + stencil_dx(su, i, j) * stencil_dx(su, i, j) +
                   dt_u * dt_u;
        }
    CHECK(h1 == doctest::Approx(std::sqrt(num / den)).epsilon(1e-12));
}

TEST_CASE("row-masked metrics restrict to the selected slices") {
    Eigen::MatrixXd u = Eigen::MatrixXd::Constant(4, 8, 1.0);
    Eigen::MatrixXd v = u;
    v.row(1).array() = 2.0;  // error only on row 1
    std::vector<int> even{0, 2};
    std::vector<int> odd{1, 3};
    CHECK(l2_rel(u, v, &even) == 0.0);
    CHECK(l2_rel(u, v, &odd) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("percentiles match a brute-force sort") {
    Rng rng(3);
    std::vector<double> vals;
    for (int i = 0; i < 101; ++i) vals.push_back(rng.uniform(0, 10));
    std::vector<double> sorted = vals;
    std::sort(sorted.begin(), sorted.end());
    CHECK(percentile(vals, 50) == sorted[50]);
    CHECK(percentile(vals, 25) == sorted[25]);
    CHECK(percentile(vals, 0) == sorted.front());
    CHECK(percentile(vals, 100) == sorted.back());

    MetricSummary s = summarize(vals);
    double mean = 0;
    for (double v : vals) mean += v;
    CHECK(s.mean == doctest::Approx(mean / vals.size()).epsilon(1e-14));
    CHECK(s.p50 == sorted[50]);
}
