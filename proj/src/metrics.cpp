#include "pimol/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace pimol {

GridGradient grid_gradient(const Eigen::MatrixXd& u) {
    const Eigen::Index nt = u.rows(), nx = u.cols();
    const double dt = 1.0 / static_cast<double>(nt);
    const double dx = 1.0 / static_cast<double>(nx);
    GridGradient g;
    g.du_dt.resize(nt, nx);
    g.du_dx.resize(nt, nx);
    for (Eigen::Index i = 0; i < nt; ++i) {
        if (i == 0)
            g.du_dt.row(i) = (u.row(1) - u.row(0)) / dt;
        else if (i == nt - 1)
            g.du_dt.row(i) = (u.row(nt - 1) - u.row(nt - 2)) / dt;
        else
            g.du_dt.row(i) = (u.row(i + 1) - u.row(i - 1)) / (2.0 * dt);
    }
    for (Eigen::Index j = 0; j < nx; ++j) {
        const Eigen::Index jp = (j + 1) % nx, jm = (j + nx - 1) % nx;
        g.du_dx.col(j) = (u.col(jp) - u.col(jm)) / (2.0 * dx);
    }
    return g;
}

namespace {

double masked_sq_norm(const Eigen::MatrixXd& m, const std::vector<int>* rows) {
    if (rows == nullptr) return m.squaredNorm();
    double s = 0.0;
    for (int r : *rows) s += m.row(r).squaredNorm();
    return s;
}

}  // namespace

double l2_rel(const Eigen::MatrixXd& u_true, const Eigen::MatrixXd& u_pred,
              const std::vector<int>* rows) {
    if (u_true.rows() != u_pred.rows() || u_true.cols() != u_pred.cols())
        throw ShapeError("l2_rel: grid shapes differ");
    const double ref = masked_sq_norm(u_true, rows);
    if (ref == 0.0) throw DegenerateReference("l2_rel: zero-norm ground truth");
    return std::sqrt(masked_sq_norm(u_true - u_pred, rows) / ref);
}

double h1_rel(const Eigen::MatrixXd& u_true, const Eigen::MatrixXd& u_pred,
              const std::vector<int>* rows, const GridGradient* pred_grad) {
    if (u_true.rows() != u_pred.rows() || u_true.cols() != u_pred.cols())
        throw ShapeError("h1_rel: grid shapes differ");
    GridGradient gt = grid_gradient(u_true);
    GridGradient gp = pred_grad != nullptr ? *pred_grad : grid_gradient(u_pred);

    const double ref = masked_sq_norm(u_true, rows) + masked_sq_norm(gt.du_dt, rows) +
                       masked_sq_norm(gt.du_dx, rows);
    if (ref == 0.0) throw DegenerateReference("h1_rel: zero-norm ground truth");
    const double err = masked_sq_norm(u_true - u_pred, rows) +
                       masked_sq_norm(gt.du_dt - gp.du_dt, rows) +
                       masked_sq_norm(gt.du_dx - gp.du_dx, rows);
    return std::sqrt(err / ref);
}

double percentile(std::vector<double> values, double p) {
    if (values.empty()) throw DegenerateReference("percentile of empty sample");
    std::sort(values.begin(), values.end());
    const double rank = (p / 100.0) * static_cast<double>(values.size() - 1);
    const size_t lo = static_cast<size_t>(std::floor(rank));
    const size_t hi = static_cast<size_t>(std::ceil(rank));
    const double w = rank - static_cast<double>(lo);
    return values[lo] * (1.0 - w) + values[hi] * w;
}

MetricSummary summarize(const std::vector<double>& values) {
    MetricSummary s;
    if (values.empty()) return s;
    double total = 0.0;
    for (double v : values) total += v;
    s.mean = total / static_cast<double>(values.size());
    s.p25 = percentile(values, 25.0);
    s.p50 = percentile(values, 50.0);
    s.p75 = percentile(values, 75.0);
    return s;
}

}  // namespace pimol
