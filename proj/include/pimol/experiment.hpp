#pragma once

#include <array>
#include <string>
#include <vector>

#include "pimol/dataset.hpp"
#include "pimol/losses.hpp"
#include "pimol/metrics.hpp"
#include "pimol/model.hpp"
#include "pimol/training.hpp"

namespace pimol {

// ---------------------------------------------------------------------------
// Experiment configuration (versioned JSON schema)
// ---------------------------------------------------------------------------

enum class ScenarioKind {
    sparse_grid,
    partial_time,
    sparse_func,
    noisy,
    collocation_study,
    fdm_study,
    finetune,
};

ScenarioKind scenario_from_name(const std::string& name);
std::string scenario_name(ScenarioKind k);

struct ExperimentConfig {
    ScenarioKind scenario = ScenarioKind::sparse_grid;
    bool has_scenario = false;
    std::vector<FamilyId> families;

    // dataset generation
    int train_per_family = 40;
    int val_per_family = 16;
    int test_per_family = 16;
    uint64_t data_seed = 1234;

    ModelConfig model;
    TrainConfig train;

    // scenario parameters
    std::vector<std::array<int, 2>> resolutions = {{4, 16}};     // sparse_grid (nt x nx)
    std::vector<int> spans = {16};                               // partial_time (even steps)
    std::vector<int> n_funcs = {10};                             // sparse_func
    std::vector<double> gammas = {0.5};                          // noisy
    std::vector<int> collocation_counts = {100};                 // collocation_study
    std::vector<double> fdm_steps = {1e-4, 1e-3, 1e-2};          // fdm_study
    std::vector<std::string> fdm_precisions = {"f64", "f32"};    // fdm_study
    std::string finetune_target = "Diff-Lin";                    // finetune
    int finetune_iterations = 1000;
    std::string checkpoint;  // optional pretrained checkpoint (fdm_study / finetune)

    // evaluation
    int eval_instances = -1;  // per family; -1 = whole test split
};

/// Parse + validate; ConfigError messages carry the offending JSON path.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

/// gen-data -> train -> eval -> emit CSV artifacts into out_dir. Every CSV
/// float is serialized with 17 significant digits; wall-time columns are the
/// only non-deterministic outputs.
void run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

// ---------------------------------------------------------------------------
// Differentiation benchmark (bench-diff)
// ---------------------------------------------------------------------------

struct BenchRow {
    std::string backend;
    std::string precision;
    double step = 0.0;
    double l2_rel_err = 0.0;
    double h1_rel_err = 0.0;
    double wall_time_s = 0.0;
    size_t peak_alloc_bytes = 0;
};

struct BenchOptions {
    int grid_nt = 16;       // evaluation subgrid (strided from 64 x 128)
    int grid_nx = 32;
    int instances = 2;      // test instances entering the error columns
    int timing_batch = 4;   // items in the timed PDE-loss iteration
    int timing_points = 32; // collocation points in the timed iteration
    int timing_reps = 3;    // median over repetitions
    uint64_t seed = 17;
};

/// One row per backend configuration. Error columns compare the prediction
/// and its backend-computed first derivatives against the dataset ground
/// truth on the subgrid; wall time and peak graph bytes cover one PDE-loss
/// evaluation plus the parameter-gradient sweep.
std::vector<BenchRow> bench_diff(const ModelParams& params, const Dataset& ds,
                                 const std::vector<DiffBackendConfig>& configs,
                                 const BenchOptions& opts = {});

void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows);

/// Wall-clock seconds and peak graph bytes for one PDE-loss + gradient
/// evaluation with the given backend (median over reps).
std::pair<double, size_t> time_pde_iteration(const ModelParams& params, const Dataset& ds,
                                             const DiffBackendConfig& cfg,
                                             const BenchOptions& opts);

/// 17-significant-digit float formatting used by every CSV writer.
std::string csv_double(double v);

}  // namespace pimol
