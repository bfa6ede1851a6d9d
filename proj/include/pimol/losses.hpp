#pragma once

#include <Eigen/Core>
#include <array>
#include <functional>
#include <span>
#include <vector>

#include "pimol/dataset.hpp"
#include "pimol/graph.hpp"
#include "pimol/model.hpp"
#include "pimol/precision.hpp"
#include "pimol/symbolic.hpp"

namespace pimol {

// ---------------------------------------------------------------------------
// Collocation sampling
// ---------------------------------------------------------------------------

enum class CollocationStrategy { Resample, Fixed };

CollocationStrategy collocation_strategy_from_name(const std::string& name);
std::string collocation_strategy_name(CollocationStrategy s);

/// M i.i.d. uniform points in [0,1]^2 (columns t, x). Resample keys the draw
/// on (seed, iteration); Fixed ignores the iteration.
Eigen::ArrayXXd sample_collocation(CollocationStrategy strategy, int m, int64_t iteration,
                                   uint64_t seed);

// ---------------------------------------------------------------------------
// Derivative backends
// ---------------------------------------------------------------------------

enum class DiffBackend { forward_ad, reverse_ad, fdm };

DiffBackend backend_from_name(const std::string& name);
std::string backend_name(DiffBackend b);

struct DiffBackendConfig {
    DiffBackend backend = DiffBackend::forward_ad;
    double fdm_step = 1e-4;                   // shared step for t and x shifts
    Precision precision = Precision::f64;     // value rounding for the FDM stencil
};

/// Raises StepUnderflow when x + step rounds back to x in the target format.
void check_step_representable(double step, Precision precision);

// ---------------------------------------------------------------------------
// Surrogate interface: anything evaluable at batched query coordinates
// ---------------------------------------------------------------------------

class BatchSurrogate {
  public:
    virtual ~BatchSurrogate() = default;
    virtual Graph& graph() const = 0;
    virtual int batch_size() const = 0;
    /// Evaluate every item at shared M x 1 coordinates; one M x 1 Var each.
    virtual std::vector<Var> evaluate(Var t, Var x) const = 0;
};

/// The operator network (already encoded for its batch).
class ModelSurrogate : public BatchSurrogate {
  public:
    explicit ModelSurrogate(const BoundModel& bm) : bm_(&bm) {}
    Graph& graph() const override { return bm_->graph(); }
    int batch_size() const override { return bm_->batch_size(); }
    std::vector<Var> evaluate(Var t, Var x) const override { return bm_->query(t, x); }

  private:
    const BoundModel* bm_;
};

/// A subset view over an encoded model batch (for Z^data distinct from
/// Z^PDE: only the selected items are decoded).
class SubsetModelSurrogate : public BatchSurrogate {
  public:
    SubsetModelSurrogate(const BoundModel& bm, std::vector<int> items)
        : bm_(&bm), items_(std::move(items)) {}
    Graph& graph() const override { return bm_->graph(); }
    int batch_size() const override { return static_cast<int>(items_.size()); }
    std::vector<Var> evaluate(Var t, Var x) const override { return bm_->query(t, x, &items_); }

  private:
    const BoundModel* bm_;
    std::vector<int> items_;
};

/// Hard-wired test surrogates built from primitives (analytic oracles).
class CallableSurrogate : public BatchSurrogate {
  public:
    using Fn = std::function<Var(Graph&, Var, Var)>;
    CallableSurrogate(Graph& g, std::vector<Fn> items) : g_(&g), items_(std::move(items)) {}
    Graph& graph() const override { return *g_; }
    int batch_size() const override { return static_cast<int>(items_.size()); }
    std::vector<Var> evaluate(Var t, Var x) const override {
        std::vector<Var> out;
        out.reserve(items_.size());
        for (const Fn& f : items_) out.push_back(f(*g_, t, x));
        return out;
    }

  private:
    Graph* g_;
    std::vector<Fn> items_;
};

// ---------------------------------------------------------------------------
// Derivative channels
// ---------------------------------------------------------------------------

/// Per-item channel vars in the fixed order [u, u_t, u_tt, u_x, u_xx];
/// entries outside {U} + needed are left invalid and must not be read.
struct ChannelSet {
    std::vector<std::array<Var, kChannelCount>> items;
};

/// One evaluation pass plus backend-specific derivative extraction:
///  - forward_ad: vectorized JVP sweeps (nested for second order),
///  - fdm: one enlarged pass over stacked shifted blocks, central stencils,
///  - reverse_ad: per-output one-hot VJP sweeps (B*M of them per order).
ChannelSet compute_channels(const BatchSurrogate& f, const Eigen::ArrayXXd& tx,
                            const DerivSet& needed, const DiffBackendConfig& cfg);

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

struct LossWeights {
    double pde = 1.0;
    double ic = 1.0;
    double ic_prime = 1.0;
    double data = 1.0;
};

struct PdeLossResult {
    Var loss;                   // mean squared residual over items and points
    Eigen::ArrayXXd residuals;  // B x M values
};

PdeLossResult compute_pde_loss(const BatchSurrogate& f,
                               std::span<const PdeExpression* const> exprs,
                               const Eigen::ArrayXXd& tx, const DiffBackendConfig& cfg);

/// Mean squared mismatch of the t = 0 prediction against u0 on its grid.
Var compute_ic_loss(const BatchSurrogate& f, std::span<const Eigen::VectorXd* const> u0);

/// Mean squared du/dt at t = 0 over the items with time_order == 2 (returns
/// a zero scalar when the batch has none).
Var compute_ic_prime_loss(const BatchSurrogate& f, std::span<const int> time_orders, int nx,
                          const DiffBackendConfig& cfg);

/// Mean squared error against labels at the label-grid points.
Var compute_data_loss(const BatchSurrogate& f,
                      std::span<const Eigen::MatrixXd* const> labels, const LabelGrid& grid);

struct LossReport {
    double pde = 0.0, ic = 0.0, ic_prime = 0.0, data = 0.0;
    LossWeights weights;
    double total = 0.0;
    Eigen::ArrayXXd residuals;
};

struct TotalLoss {
    Var total;
    LossReport report;
};

/// Batch wiring for one iteration. The data term may use its own surrogate
/// (distinct Z^data); when `data_surrogate` is null it reuses `surrogate`
/// and `labels` must align with its items.
struct LossBatch {
    const BatchSurrogate* surrogate = nullptr;
    std::vector<const PdeExpression*> exprs;
    std::vector<const Eigen::VectorXd*> u0;
    const BatchSurrogate* data_surrogate = nullptr;
    std::vector<const Eigen::MatrixXd*> labels;
    const LabelGrid* label_grid = nullptr;
};

/// Weighted sum; terms with zero weight are skipped entirely (no forward or
/// backend calls on their behalf).
TotalLoss total_loss(const LossBatch& batch, const LossWeights& w, const Eigen::ArrayXXd& tx,
                     const DiffBackendConfig& cfg);

// ---------------------------------------------------------------------------
// Step-size law (central differences, n-th derivative)
// ---------------------------------------------------------------------------

/// (eps / R_n)^(1/(n+2)), proportional to the error-minimizing step.
double optimal_step_size(double eps, int n, double r_n);

/// eps^(2/(n+2)) * R_n^(n/(n+2)), the minimum relative-error scale.
double predicted_min_rel_error(double eps, int n, double r_n);

/// Scalar central differences with reduced-precision value rounding at the
/// shifted points (measurement utility for the error-law study).
double fdm_first_derivative(const std::function<double(double)>& f, double x, double step,
                            Precision precision = Precision::f64);
double fdm_second_derivative(const std::function<double(double)>& f, double x, double step,
                             Precision precision = Precision::f64);

}  // namespace pimol
