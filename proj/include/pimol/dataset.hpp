#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pimol/solver.hpp"
#include "pimol/symbolic.hpp"

namespace pimol {

// ---------------------------------------------------------------------------
// Initial conditions: superposition of sinusoidal waves, Min-Max normalized
// ---------------------------------------------------------------------------

struct ICSpec {
    int waves = 2;   // N
    int n_max = 4;   // max integer wavenumber
    std::vector<double> amplitudes;  // A_j ~ U[0,1]
    std::vector<double> phases;      // phi_j ~ U[0, 2pi)
    std::vector<int> modes;          // n_j ~ U{1..n_max}
    double raw_min = 0.0, raw_max = 0.0;  // normalization constants on the grid
};

struct SampledIC {
    ICSpec spec;
    Eigen::VectorXd values;  // nx samples, min 0 / max 1 on the grid
};

/// Draw an IC and evaluate it on the nx-point grid x_j = j/nx. Degenerate
/// (constant) draws are resampled with the next seed.
SampledIC sample_ic(uint64_t seed, int nx = 128, int waves = 2, int n_max = 4);

/// q ~ U[0.9 qc, 1.1 qc] (and p likewise for two-parameter families).
Eigen::VectorXd sample_params(FamilyId family, uint64_t seed);

// ---------------------------------------------------------------------------
// Instances and datasets
// ---------------------------------------------------------------------------

struct PdeInstance {
    FamilyId family = FamilyId::Adv;
    Eigen::VectorXd params;
    PdeExpression expression;
    Eigen::VectorXd u0;        // nx
    Eigen::MatrixXd solution;  // nt x nx (empty for unlabeled instances)
};

/// A split of instances from one family. Solution grids are read through an
/// accessor so that physics-only code paths can be audited.
class Dataset {
  public:
    Dataset() = default;
    Dataset(FamilyId family, std::string split, uint64_t seed, double noise_gamma);

    void add(PdeInstance inst) { instances_.push_back(std::move(inst)); }
    size_t size() const { return instances_.size(); }
    FamilyId family() const { return family_; }
    const std::string& split() const { return split_; }
    uint64_t seed() const { return seed_; }
    double noise_gamma() const { return noise_gamma_; }

    const PdeInstance& instance(size_t i) const { return instances_[i]; }
    const Eigen::VectorXd& u0(size_t i) const { return instances_[i].u0; }
    const PdeExpression& expression(size_t i) const { return instances_[i].expression; }

    /// Label access; counted so tests can assert physics-only training never
    /// touches solution grids.
    const Eigen::MatrixXd& solution(size_t i) const {
        ++solution_reads_;
        return instances_[i].solution;
    }
    size_t solution_reads() const { return solution_reads_; }

  private:
    FamilyId family_ = FamilyId::Adv;
    std::string split_;
    uint64_t seed_ = 0;
    double noise_gamma_ = 0.0;
    std::vector<PdeInstance> instances_;
    mutable size_t solution_reads_ = 0;
};

/// Deterministic instance generation: (family, seed) fixes IC, parameters,
/// and the solved grid. When `solve` is false the solution grid is left
/// empty (unlabeled inputs for physics-only training).
PdeInstance make_instance(FamilyId family, uint64_t seed, const SolverOptions& opts = {},
                          bool solve = true);

Dataset generate_dataset(FamilyId family, int count, uint64_t seed, const std::string& split,
                         const SolverOptions& opts = {}, bool solve = true);

// ---------------------------------------------------------------------------
// Label noise
// ---------------------------------------------------------------------------

/// D + gamma * (||D|| / ||z||) * z with z i.i.d. standard normal; the realized
/// relative L2 magnitude equals gamma to rounding.
Eigen::MatrixXd add_noise(const Eigen::MatrixXd& labels, double gamma, uint64_t seed);

/// Noise every instance's solution grid (per-instance seeds derived from
/// `seed`); returns a new dataset with gamma recorded.
Dataset add_noise(const Dataset& clean, double gamma, uint64_t seed);

// ---------------------------------------------------------------------------
// Binary dataset files ("PIMF") + JSON manifest
// ---------------------------------------------------------------------------

/// Layout (little-endian): magic "PIMF", u32 version=1, u32 family_id,
/// u32 record_count, u32 nt=64, u32 nx=128, u32 param_count; per record:
/// params (f64 x param_count), u0 (f64 x nx), solution (f64 x nt x nx,
/// time-major).
void save_dataset(const Dataset& ds, const std::string& path,
                  const std::string& scenario_json = "{}");
Dataset load_dataset(const std::string& path);

/// Manifest path for a dataset file ("foo.pimf" -> "foo.json").
std::string manifest_path(const std::string& dataset_path);

// ---------------------------------------------------------------------------
// Label grids (subsets of the stored 64 x 128 grid)
// ---------------------------------------------------------------------------

/// Training labels live on even time slices; tests on odd slices.
struct LabelGrid {
    std::vector<int> t_idx;  // row indices into the stored grid
    std::vector<int> x_idx;  // column indices
};

/// Uniform nt_lab x nx_lab subset of the even-slice training grid
/// (nt_lab in {2,4,8,16,32}, nx_lab in {8,16,32,64,128}).
LabelGrid sparse_label_grid(int nt_lab, int nx_lab);

/// First `span_steps` even time slices crossed with the full spatial grid.
LabelGrid partial_time_label_grid(int span_steps);

/// All even slices x full spatial grid.
LabelGrid full_train_label_grid();

/// Odd time slices (the held-out evaluation stamps).
std::vector<int> test_time_indices();

}  // namespace pimol
