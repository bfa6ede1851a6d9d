#include "pimol/solver.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <string>

#include <unsupported/Eigen/FFT>

namespace pimol {

namespace {

using Complex = std::complex<double>;

// signed wavenumber index for bin j of an N-point transform
inline long wave_index(long j, long n) { return j <= n / 2 ? j : j - n; }

struct Spectral {
    Eigen::FFT<double> fft;

    Eigen::VectorXcd forward(const Eigen::VectorXd& v) {
        Eigen::VectorXcd s;
        fft.fwd(s, v);
        return s;
    }
    Eigen::VectorXd inverse(const Eigen::VectorXcd& s) {
        Eigen::VectorXd v;
        fft.inv(v, s);
        return v;
    }

    // d/dx (order 1) or d2/dx2 (order 2) on the unit periodic interval
    Eigen::VectorXd derivative(const Eigen::VectorXd& v, int order) {
        const long n = v.size();
        Eigen::VectorXcd s = forward(v);
        for (long j = 0; j < n; ++j) {
            const double k = 2.0 * std::numbers::pi * static_cast<double>(wave_index(j, n));
            if (order == 1) {
                s[j] *= Complex(0.0, k);
                if (n % 2 == 0 && j == n / 2) s[j] = 0.0;  // odd derivative: drop Nyquist
            } else {
                s[j] *= -k * k;
            }
        }
        return inverse(s);
    }

    // spectral x-derivative of a product/flux with a 2/3-rule mask
    Eigen::VectorXd flux_dx(const Eigen::VectorXd& flux) {
        const long n = flux.size();
        Eigen::VectorXcd s = forward(flux);
        const long cutoff = n / 3;
        for (long j = 0; j < n; ++j) {
            const long ki = wave_index(j, n);
            if (std::abs(ki) > cutoff) {
                s[j] = 0.0;
                continue;
            }
            const double k = 2.0 * std::numbers::pi * static_cast<double>(ki);
            s[j] *= Complex(0.0, k);
            if (n % 2 == 0 && j == n / 2) s[j] = 0.0;
        }
        return inverse(s);
    }
};

struct AdvectiveDiffusive {
    double adv = 0.0;   // coefficient entering the CFL bound safety*dx/|q|
    double diff = 0.0;  // coefficient entering safety*dx^2/(2 q_diff)
};

AdvectiveDiffusive stiffness_coefficients(FamilyId family, const Eigen::VectorXd& params) {
    const double q = params[0];
    const double p = params.size() > 1 ? params[1] : 0.0;
    switch (family) {
        case FamilyId::Adv: return {std::abs(q), 0.0};
        case FamilyId::Diff:
        case FamilyId::DiffLin:
        case FamilyId::DiffLog:
        case FamilyId::DiffSLog:
        case FamilyId::DiffBi: return {0.0, std::abs(q)};
        case FamilyId::ConsCub:
        case FamilyId::ConsLin:
        case FamilyId::ConsSin:
        case FamilyId::Burgers: return {std::abs(q), std::abs(p) / std::numbers::pi};
        case FamilyId::Wave:
        case FamilyId::KG: return {std::abs(q), 0.0};
        case FamilyId::SG: return {std::max(std::abs(q), 1.0), 0.0};
    }
    throw UnknownFamily(std::to_string(static_cast<int>(family)));
}

}  // namespace

Eigen::VectorXd spectral_upsample(const Eigen::VectorXd& values, int factor) {
    if (factor <= 1) return values;
    Spectral sp;
    const long n = values.size();
    const long m = n * factor;
    Eigen::VectorXcd s = sp.forward(values);
    Eigen::VectorXcd t = Eigen::VectorXcd::Zero(m);
    for (long j = 0; j < n / 2; ++j) t[j] = s[j] * static_cast<double>(factor);
    for (long j = 1; j < n / 2; ++j) t[m - j] = s[n - j] * static_cast<double>(factor);
    if (n % 2 == 0) {
        // split the Nyquist bin symmetrically
        Complex half = s[n / 2] * (0.5 * factor);
        t[n / 2] = half;
        t[m - n / 2] = std::conj(half);
    }
    return sp.inverse(t);
}

Eigen::VectorXd spectral_derivative(const Eigen::VectorXd& values, int order) {
    if (order != 1 && order != 2) throw Unsupported("spectral_derivative order must be 1 or 2");
    Spectral sp;
    return sp.derivative(values, order);
}

double solver_time_step(FamilyId family, const Eigen::VectorXd& params,
                        const SolverOptions& opts) {
    const double dx = 1.0 / (opts.refine * opts.nx);
    AdvectiveDiffusive c = stiffness_coefficients(family, params);
    double dt = opts.dt_cap;
    if (c.adv > 0.0) dt = std::min(dt, opts.safety * dx / c.adv);
    if (c.diff > 0.0) dt = std::min(dt, opts.safety * dx * dx / (2.0 * c.diff));
    const double frame = 1.0 / opts.nt;
    const int steps_per_frame =
        static_cast<int>(std::ceil(frame / dt)) * std::max(1, opts.substep_multiplier);
    return frame / steps_per_frame;
}

Eigen::MatrixXd solve_pde(FamilyId family, const Eigen::VectorXd& params,
                          const Eigen::VectorXd& u0, const SolverOptions& opts) {
    const FamilyInfo& info = family_info(family);
    if (params.size() != info.param_count)
        throw ShapeError("parameter count mismatch for " + info.name);
    if (u0.size() != opts.nx) throw ShapeError("u0 must have nx samples");

    const long n = static_cast<long>(opts.refine) * opts.nx;
    const double q = params[0];
    const double p = info.param_count > 1 ? params[1] : 0.0;
    const double ppi = p / std::numbers::pi;

    Spectral sp;
    Eigen::VectorXd u = spectral_upsample(u0, opts.refine);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(info.second_order ? n : 0);  // v = u_t, IC' = 0

    auto rhs_u = [&](const Eigen::VectorXd& uu) -> Eigen::VectorXd {
        switch (family) {
            case FamilyId::Adv: return (-q) * sp.derivative(uu, 1);
            case FamilyId::Diff: return q * sp.derivative(uu, 2);
            case FamilyId::DiffLin: return q * sp.derivative(uu, 2) + p * uu;
            case FamilyId::DiffLog:
                return (q * sp.derivative(uu, 2).array() +
                        p * uu.array() * (1.0 - uu.array()))
                    .matrix();
            case FamilyId::DiffSLog:
                return (q * sp.derivative(uu, 2).array() +
                        p * uu.array().square() * (1.0 - uu.array()).square())
                    .matrix();
            case FamilyId::DiffBi:
                return (q * sp.derivative(uu, 2).array() +
                        p * uu.array().square() * (1.0 - uu.array()))
                    .matrix();
            case FamilyId::ConsCub:
                return (-q) * sp.flux_dx((uu.array().cube() / 3.0).matrix()) +
                       ppi * sp.derivative(uu, 2);
            case FamilyId::ConsLin:
                return (-q) * sp.flux_dx(uu) + ppi * sp.derivative(uu, 2);
            case FamilyId::ConsSin:
                return (-q) * sp.flux_dx(uu.array().sin().matrix()) +
                       ppi * sp.derivative(uu, 2);
            case FamilyId::Burgers:
                return (-q) * sp.flux_dx((0.5 * uu.array().square()).matrix()) +
                       ppi * sp.derivative(uu, 2);
            default: break;
        }
        throw UnknownFamily(info.name);
    };

    auto rhs_v = [&](const Eigen::VectorXd& uu) -> Eigen::VectorXd {
        switch (family) {
            case FamilyId::Wave: return (q * q) * sp.derivative(uu, 2);
            case FamilyId::KG:
                return (q * q) * sp.derivative(uu, 2) - (p * p * q * q * q * q) * uu;
            case FamilyId::SG:
                return sp.derivative(uu, 2) - q * uu.array().sin().matrix();
            default: break;
        }
        throw UnknownFamily(info.name);
    };

    const double frame = 1.0 / opts.nt;
    const double dt = solver_time_step(family, params, opts);
    const int steps_per_frame = static_cast<int>(std::llround(frame / dt));

    Eigen::MatrixXd out(opts.nt, opts.nx);
    auto store_frame = [&](int f) {
        for (int j = 0; j < opts.nx; ++j) out(f, j) = u[static_cast<long>(j) * opts.refine];
    };
    auto check_blowup = [&](int f) {
        if (!u.allFinite() || u.cwiseAbs().maxCoeff() > opts.blowup)
            throw SolverDiverged(info.name + " at frame " + std::to_string(f) +
                                 " (q=" + std::to_string(q) + ", p=" + std::to_string(p) + ")");
    };

    store_frame(0);
    for (int f = 1; f < opts.nt; ++f) {
        for (int s = 0; s < steps_per_frame; ++s) {
            if (!info.second_order) {
                Eigen::VectorXd k1 = rhs_u(u);
                Eigen::VectorXd k2 = rhs_u(u + 0.5 * dt * k1);
                Eigen::VectorXd k3 = rhs_u(u + 0.5 * dt * k2);
                Eigen::VectorXd k4 = rhs_u(u + dt * k3);
                u += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            } else {
                // y = (u, v): u' = v, v' = rhs_v(u)
                Eigen::VectorXd ku1 = v, kv1 = rhs_v(u);
                Eigen::VectorXd ku2 = v + 0.5 * dt * kv1, kv2 = rhs_v(u + 0.5 * dt * ku1);
                Eigen::VectorXd ku3 = v + 0.5 * dt * kv2, kv3 = rhs_v(u + 0.5 * dt * ku2);
                Eigen::VectorXd ku4 = v + dt * kv3, kv4 = rhs_v(u + dt * ku3);
                u += (dt / 6.0) * (ku1 + 2.0 * ku2 + 2.0 * ku3 + ku4);
                v += (dt / 6.0) * (kv1 + 2.0 * kv2 + 2.0 * kv3 + kv4);
            }
        }
        check_blowup(f);
        store_frame(f);
    }
    return out;
}

}  // namespace pimol
