#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "pimol/errors.hpp"

namespace pimol {

/// Gradient pair on a uniform nt x nx grid over [0,1]^2: central differences
/// in the interior, one-sided at the temporal ends, periodic wrap in x.
struct GridGradient {
    Eigen::MatrixXd du_dt;
    Eigen::MatrixXd du_dx;
};

GridGradient grid_gradient(const Eigen::MatrixXd& u);

/// ||u - v|| / ||u|| under the discrete L2 norm (uniform quadrature). When
/// `rows` is given only those time slices enter the norms.
double l2_rel(const Eigen::MatrixXd& u_true, const Eigen::MatrixXd& u_pred,
              const std::vector<int>* rows = nullptr);

/// H1 relative error with ||u||_H1^2 = ||u||^2 + ||u_t||^2 + ||u_x||^2.
/// Ground-truth derivatives always come from grid central differences;
/// prediction derivatives default to the same stencil unless explicit
/// derivative grids (e.g. from an AD/FDM backend) are supplied.
double h1_rel(const Eigen::MatrixXd& u_true, const Eigen::MatrixXd& u_pred,
              const std::vector<int>* rows = nullptr,
              const GridGradient* pred_grad = nullptr);

/// Percentile by linear interpolation over the sorted sample (p in [0,100]).
double percentile(std::vector<double> values, double p);

struct MetricSummary {
    double mean = 0.0;
    double p25 = 0.0;
    double p50 = 0.0;
    double p75 = 0.0;
};

MetricSummary summarize(const std::vector<double>& values);

/// Per-instance and aggregate errors for one evaluation group.
struct MetricReport {
    std::vector<double> l2;  // per instance
    std::vector<double> h1;
    MetricSummary l2_summary;
    MetricSummary h1_summary;

    void finalize() {
        l2_summary = summarize(l2);
        h1_summary = summarize(h1);
    }
};

}  // namespace pimol
