#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "pimol/dataset.hpp"
#include "pimol/losses.hpp"
#include "pimol/metrics.hpp"
#include "pimol/model.hpp"

namespace pimol {

// ---------------------------------------------------------------------------
// Optimizer: adaptive moments with decoupled weight decay
// ---------------------------------------------------------------------------

struct OptimizerConfig {
    double base_lr = 1e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-6;
};

struct OptimizerState {
    Eigen::VectorXd m;  // first moments
    Eigen::VectorXd v;  // second moments
    int64_t step = 0;

    static OptimizerState init(Eigen::Index n) {
        return OptimizerState{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), 0};
    }
};

/// Bias-corrected moment update; decay acts on the parameters directly:
/// theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
void optimizer_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, OptimizerState& state,
                    const OptimizerConfig& cfg, double lr);

// ---------------------------------------------------------------------------
// Learning-rate schedule: linear warmup, cosine decay
// ---------------------------------------------------------------------------

struct ScheduleConfig {
    int64_t t_warmup = 3200;
    int64_t t_max = 32000;
    double base_lr = 1e-4;

    void validate() const {
        if (t_warmup <= 0 || t_warmup >= t_max) throw ConfigError("need 0 < t_warmup < t_max");
    }
};

/// Ramp alpha * t / T_warmup for t <= T_warmup, then
/// 0.5 * (1 + cos(pi (t - T_warmup) / (T_max - T_warmup))) * alpha,
/// clamped to the final value past T_max.
double lr_at(int64_t t, const ScheduleConfig& cfg);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    int iterations = 2000;
    int batch = 16;
    int data_batch = 0;  // > 0: separate labeled batch (sparse function data)
    int n_func = -1;     // labeled instances per family; -1 labels everything

    ScheduleConfig schedule{200, 2000, 1e-4};
    OptimizerConfig optim;
    LossWeights weights;
    DiffBackendConfig backend;

    CollocationStrategy collocation = CollocationStrategy::Resample;
    int collocation_points = 100;
    uint64_t collocation_seed = 5;

    LabelGrid label_grid;  // data-loss points (subset of the training slices)
    uint64_t seed = 99;
    int val_every = 100;
    int val_instances = 8;
    bool validate_at_start = false;  // log an iteration-0 (zero-shot) record
};

struct TrainDatasets {
    std::vector<const Dataset*> train;  // one per family
    std::vector<const Dataset*> val;    // parallel to train
};

struct IterationRecord {
    int64_t iteration = 0;
    double lr = 0.0;
    LossReport losses;
    bool has_validation = false;
    double val_l2 = 0.0;
    double val_h1 = 0.0;
    double wall_time = 0.0;  // seconds spent in this iteration
};

struct TrainResult {
    ModelParams params;       // best-validation parameters
    ModelParams final_params;
    double best_val_l2 = 0.0;
    int64_t best_iteration = 0;
    std::vector<IterationRecord> log;
    std::vector<std::string> train_families;
};

/// Train from `init` (or a fresh deterministic init when null). Writes one
/// NDJSON record per iteration to `log_path` when non-empty.
TrainResult train(const ModelConfig& mcfg, const TrainConfig& tcfg, const TrainDatasets& data,
                  const ModelParams* init = nullptr, const std::string& log_path = "");

/// Physics-only adaptation to an unseen family: forces the data weight to
/// zero and refuses targets that appeared in pretraining. The train split
/// may be unlabeled; labels are only read by the validation logging.
TrainResult finetune_zero_shot(const ModelParams& pretrained,
                               const std::vector<std::string>& pretrain_families,
                               FamilyId target, const TrainConfig& tcfg,
                               const TrainDatasets& data, const std::string& log_path = "");

/// Mean L2/H1 relative test errors of a parameter set over a dataset,
/// evaluated on the held-out odd time slices (or the full grid).
MetricReport evaluate_params(const ModelParams& params, const Dataset& ds, int max_instances = -1,
                             bool odd_slices_only = true);

/// NDJSON serialization of one iteration record.
std::string iteration_record_json(const IterationRecord& rec);

}  // namespace pimol
