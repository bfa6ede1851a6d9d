#include <cmath>
#include <complex>
#include <numbers>

#include "doctest.h"
#include "pimol/dataset.hpp"
#include "pimol/solver.hpp"

using namespace pimol;

namespace {

constexpr double kPi = std::numbers::pi;

// Direct O(N^2) DFT (test-side reference, independent of the solver's FFT).
std::vector<std::complex<double>> dft(const Eigen::VectorXd& u) {
    const int n = static_cast<int>(u.size());
    std::vector<std::complex<double>> c(n);
    for (int k = 0; k < n; ++k) {
        std::complex<double> acc = 0.0;
        for (int j = 0; j < n; ++j)
            acc += u[j] * std::exp(std::complex<double>(0.0, -2.0 * kPi * k * j / n));
        c[k] = acc / static_cast<double>(n);
    }
    return c;
}

int signed_mode(int k, int n) { return k <= n / 2 ? k : k - n; }

// u(t, x_j) for the advected band-limited interpolant u0(x - q t)
Eigen::MatrixXd translation_oracle(const Eigen::VectorXd& u0, double q, int nt) {
    const int n = static_cast<int>(u0.size());
    auto c = dft(u0);
    Eigen::MatrixXd out(nt, n);
    for (int f = 0; f < nt; ++f) {
        const double t = static_cast<double>(f) / nt;
        for (int j = 0; j < n; ++j) {
            std::complex<double> acc = 0.0;
            for (int k = 0; k < n; ++k) {
                const int m = signed_mode(k, n);
                if (m == n / 2) continue;  // drop the unpaired Nyquist bin
                const double x = static_cast<double>(j) / n - q * t;
                acc += c[k] * std::exp(std::complex<double>(0.0, 2.0 * kPi * m * x));
            }
            out(f, j) = acc.real();
        }
    }
    return out;
}

// d'Alembert: u = (u0(x - qt) + u0(x + qt)) / 2 for u_t(0, .) = 0
Eigen::MatrixXd dalembert_oracle(const Eigen::VectorXd& u0, double q, int nt) {
    const int n = static_cast<int>(u0.size());
    auto c = dft(u0);
    Eigen::MatrixXd out(nt, n);
    for (int f = 0; f < nt; ++f) {
        const double t = static_cast<double>(f) / nt;
        for (int j = 0; j < n; ++j) {
            std::complex<double> acc = 0.0;
            for (int k = 0; k < n; ++k) {
                const int m = signed_mode(k, n);
                if (m == n / 2) continue;
                const double x = static_cast<double>(j) / n;
                acc += c[k] * std::cos(2.0 * kPi * m * q * t) *
                       std::exp(std::complex<double>(0.0, 2.0 * kPi * m * x));
            }
            out(f, j) = acc.real();
        }
    }
    return out;
}

double grid_l2_rel(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& got) {
    return (truth - got).norm() / truth.norm();
}

}  // namespace

TEST_CASE("spectral upsample preserves original nodes") {
    Eigen::VectorXd u0 = sample_ic(3, 64).values;
    Eigen::VectorXd fine = spectral_upsample(u0, 2);
    REQUIRE(fine.size() == 128);
    for (int j = 0; j < 64; ++j) CHECK(fine[2 * j] == doctest::Approx(u0[j]).epsilon(1e-12));
}

TEST_CASE("spectral derivative of a pure mode is exact to rounding") {
    const int n = 128;
    Eigen::VectorXd u(n), d1(n), d2(n);
    for (int j = 0; j < n; ++j) {
        const double x = static_cast<double>(j) / n;
        u[j] = std::sin(2 * kPi * 3 * x);
        d1[j] = 2 * kPi * 3 * std::cos(2 * kPi * 3 * x);
        d2[j] = -std::pow(2 * kPi * 3, 2) * std::sin(2 * kPi * 3 * x);
    }
    CHECK((spectral_derivative(u, 1) - d1).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((spectral_derivative(u, 2) - d2).cwiseAbs().maxCoeff() <= 1e-7);
}

TEST_CASE("advection matches the translation closed form") {
    Eigen::VectorXd u0 = sample_ic(11).values;
    Eigen::VectorXd q(1);
    q << 0.5;
    Eigen::MatrixXd got = solve_pde(FamilyId::Adv, q, u0);
    Eigen::MatrixXd want = translation_oracle(u0, 0.5, 64);
    CHECK(grid_l2_rel(want, got) <= 1e-3);
    // stored IC row equals u0
    CHECK((got.row(0).transpose() - u0).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("diffusion matches the Fourier mode-decay closed form") {
    const int n = 128, mode = 2;
    Eigen::VectorXd u0(n);
    for (int j = 0; j < n; ++j)
        u0[j] = 0.5 * (1.0 + std::sin(2 * kPi * mode * j / static_cast<double>(n)));
    Eigen::VectorXd q(1);
    q << 0.003;
    Eigen::MatrixXd got = solve_pde(FamilyId::Diff, q, u0);
    Eigen::MatrixXd want(64, n);
    for (int f = 0; f < 64; ++f) {
        const double t = f / 64.0;
        const double decay = std::exp(-0.003 * std::pow(2 * kPi * mode, 2) * t);
        for (int j = 0; j < n; ++j)
            want(f, j) = 0.5 + 0.5 * decay * std::sin(2 * kPi * mode * j / static_cast<double>(n));
    }
    CHECK(grid_l2_rel(want, got) <= 1e-3);
}

TEST_CASE("wave matches d'Alembert with zero initial velocity") {
    Eigen::VectorXd u0 = sample_ic(17).values;
    Eigen::VectorXd q(1);
    q << 0.5;
    Eigen::MatrixXd got = solve_pde(FamilyId::Wave, q, u0);
    Eigen::MatrixXd want = dalembert_oracle(u0, 0.5, 64);
    CHECK(grid_l2_rel(want, got) <= 1e-3);
    CHECK((got.row(0).transpose() - u0).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("time-step halving self-convergence on nonlinear families") {
    for (FamilyId f : {FamilyId::Burgers, FamilyId::ConsSin, FamilyId::SG}) {
        Eigen::VectorXd params = sample_params(f, 23);
        Eigen::VectorXd u0 = sample_ic(23).values;
        SolverOptions coarse, fine;
        fine.substep_multiplier = 2;
        Eigen::MatrixXd a = solve_pde(f, params, u0, coarse);
        Eigen::MatrixXd b = solve_pde(f, params, u0, fine);
        CHECK(grid_l2_rel(b, a) <= 1e-4);
    }
}

TEST_CASE("solver rejects bad input and reports blow-up") {
    Eigen::VectorXd u0 = sample_ic(29).values;
    Eigen::VectorXd two(2);
    two << 0.5, 0.1;
    CHECK_THROWS_AS(solve_pde(FamilyId::Adv, two, u0), ShapeError);

    // backward heat equation: modes grow without bound
    Eigen::VectorXd q(1);
    q << -0.003;
    CHECK_THROWS_AS(solve_pde(FamilyId::Diff, q, u0), SolverDiverged);
}
