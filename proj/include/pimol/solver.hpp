#pragma once

#include <Eigen/Core>

#include "pimol/symbolic.hpp"

namespace pimol {

/// Classical reference solver: method of lines on a refined periodic grid
/// (spectral spatial derivatives, explicit RK4 in time), subsampled to the
/// stored nt x nx grid. Second-order-in-time families integrate the system
/// (u, v = u_t) with v(0, .) = 0.
struct SolverOptions {
    int nt = 64;            // stored time frames, t_i = i/nt
    int nx = 128;           // stored spatial points, x_j = j/nx
    int refine = 2;         // fine grid = refine * nx
    double safety = 0.2;    // CFL fractions in the step-size bound
    double dt_cap = 1e-3;
    double blowup = 1e6;    // |u| beyond this raises SolverDiverged
    int substep_multiplier = 1;  // extra time refinement (self-convergence checks)
};

/// Solve one instance. `u0` holds nx samples of the initial condition.
/// Returns the nt x nx solution grid (time-major rows).
Eigen::MatrixXd solve_pde(FamilyId family, const Eigen::VectorXd& params,
                          const Eigen::VectorXd& u0, const SolverOptions& opts = {});

/// Time step actually used for the given family/params (after frame-count
/// rounding); exposed for the self-convergence checks.
double solver_time_step(FamilyId family, const Eigen::VectorXd& params,
                        const SolverOptions& opts = {});

/// Trigonometric interpolation of periodic samples onto a refined grid
/// (factor * n points). Values at the original nodes are preserved.
Eigen::VectorXd spectral_upsample(const Eigen::VectorXd& values, int factor);

/// Spectral derivative of periodic samples on [0,1): order 1 or 2.
Eigen::VectorXd spectral_derivative(const Eigen::VectorXd& values, int order);

}  // namespace pimol
