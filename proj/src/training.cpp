#include "pimol/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "json.hpp"
#include "pimol/rng.hpp"

namespace pimol {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

void optimizer_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, OptimizerState& state,
                    const OptimizerConfig& cfg, double lr) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw ShapeError("optimizer: parameter/gradient/state sizes differ");
    if (!grads.allFinite())
        throw NonFiniteGradient("at optimizer step " + std::to_string(state.step + 1));
    ++state.step;
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads;
    state.v = cfg.beta2 * state.v.array().matrix() +
              (1.0 - cfg.beta2) * grads.array().square().matrix();
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    Eigen::ArrayXd m_hat = state.m.array() / bc1;
    Eigen::ArrayXd v_hat = state.v.array() / bc2;
    params.array() -=
        lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * params.array());
}

double lr_at(int64_t t, const ScheduleConfig& cfg) {
    cfg.validate();
    if (t < 0) throw ConfigError("lr_at: negative iteration");
    if (t > cfg.t_max) t = cfg.t_max;
    if (t <= cfg.t_warmup)
        return cfg.base_lr * static_cast<double>(t) / static_cast<double>(cfg.t_warmup);
    const double frac = static_cast<double>(t - cfg.t_warmup) /
                        static_cast<double>(cfg.t_max - cfg.t_warmup);
    return 0.5 * (1.0 + std::cos(frac * std::numbers::pi)) * cfg.base_lr;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

struct Ref {
    int family_slot = 0;
    int index = 0;
};

std::vector<Ref> flatten_pool(const std::vector<const Dataset*>& sets, int limit_per_set = -1) {
    std::vector<Ref> pool;
    for (size_t s = 0; s < sets.size(); ++s) {
        const int n = limit_per_set < 0
                          ? static_cast<int>(sets[s]->size())
                          : std::min<int>(limit_per_set, static_cast<int>(sets[s]->size()));
        for (int i = 0; i < n; ++i) pool.push_back(Ref{static_cast<int>(s), i});
    }
    return pool;
}

// round-robin across families so a small validation subset covers them all
std::vector<Ref> interleave_pool(const std::vector<const Dataset*>& sets) {
    std::vector<Ref> pool;
    size_t longest = 0;
    for (const Dataset* d : sets) longest = std::max(longest, d->size());
    for (size_t i = 0; i < longest; ++i)
        for (size_t s = 0; s < sets.size(); ++s)
            if (i < sets[s]->size()) pool.push_back(Ref{static_cast<int>(s), static_cast<int>(i)});
    return pool;
}

std::pair<double, double> validate_params(const ModelParams& params,
                                          const std::vector<const Dataset*>& val,
                                          const std::vector<Ref>& subset) {
    const std::vector<int> odd = test_time_indices();
    double l2 = 0.0, h1 = 0.0;
    for (const Ref& r : subset) {
        const Dataset& ds = *val[r.family_slot];
        const PdeInstance& inst = ds.instance(r.index);
        ModelItem item{&inst.u0, &inst.expression.tokens};
        Eigen::MatrixXd pred = predict_grid(params, item, 64, 128, 4096);
        const Eigen::MatrixXd& truth = ds.solution(r.index);
        l2 += l2_rel(truth, pred, &odd);
        h1 += h1_rel(truth, pred, &odd);
    }
    const double n = static_cast<double>(subset.size());
    return {l2 / n, h1 / n};
}

}  // namespace

std::string iteration_record_json(const IterationRecord& rec) {
    json j{{"iteration", rec.iteration},
           {"lr", rec.lr},
           {"loss_pde", rec.losses.pde},
           {"loss_ic", rec.losses.ic},
           {"loss_ic_prime", rec.losses.ic_prime},
           {"loss_data", rec.losses.data},
           {"loss_total", rec.losses.total},
           {"wall_time", rec.wall_time}};
    if (rec.has_validation) {
        j["val_L2"] = rec.val_l2;
        j["val_H1"] = rec.val_h1;
    }
    return j.dump();
}

TrainResult train(const ModelConfig& mcfg, const TrainConfig& tcfg, const TrainDatasets& data,
                  const ModelParams* init, const std::string& log_path) {
    mcfg.validate();
    tcfg.schedule.validate();
    if (data.train.empty() || data.train.size() != data.val.size())
        throw ConfigError("need parallel train/val dataset lists");
    for (const Dataset* d : data.train)
        if (d == nullptr || d->size() == 0) throw ConfigError("empty training dataset");
    const bool uses_labels = tcfg.weights.data != 0.0;
    if (uses_labels)
        for (const Dataset* d : data.train)
            if (d->instance(0).solution.size() == 0)
                throw ConfigError("data term enabled but training solutions are absent");

    ModelParams params = init != nullptr ? *init : ModelParams::init(mcfg);
    if (params.config() != mcfg) throw ConfigError("initial parameters built for another config");
    OptimizerState opt = OptimizerState::init(params.count());

    const std::vector<Ref> pool = flatten_pool(data.train);
    const std::vector<Ref> labeled_pool = flatten_pool(data.train, tcfg.n_func);
    const std::vector<Ref> val_all = interleave_pool(data.val);
    const std::vector<Ref> val_subset(
        val_all.begin(),
        val_all.begin() + std::min<size_t>(val_all.size(),
                                           static_cast<size_t>(tcfg.val_instances)));

    TrainResult result{params, params, std::numeric_limits<double>::infinity(), 0, {}, {}};
    for (const Dataset* d : data.train)
        result.train_families.push_back(family_info(d->family()).name);

    std::ofstream log_out;
    if (!log_path.empty()) {
        log_out.open(log_path);
        if (!log_out) throw IoError("cannot open log '" + log_path + "'");
    }
    auto emit = [&](const IterationRecord& rec) {
        result.log.push_back(rec);
        if (log_out.is_open()) log_out << iteration_record_json(rec) << "\n";
    };
    auto run_validation = [&](IterationRecord& rec) {
        auto [l2, h1] = validate_params(params, data.val, val_subset);
        rec.has_validation = true;
        rec.val_l2 = l2;
        rec.val_h1 = h1;
        if (l2 < result.best_val_l2) {
            result.best_val_l2 = l2;
            result.best_iteration = rec.iteration;
            result.params = params;
        }
    };

    if (tcfg.validate_at_start) {
        IterationRecord rec;
        rec.iteration = 0;
        run_validation(rec);
        emit(rec);
    }

    Rng batch_stream(tcfg.seed, hash_tag("batch"));
    Rng data_stream(tcfg.seed, hash_tag("data-batch"));

    for (int64_t iter = 1; iter <= tcfg.iterations; ++iter) {
        const auto t0 = std::chrono::steady_clock::now();

        Rng brng = batch_stream.child(static_cast<uint64_t>(iter));
        std::vector<Ref> phys(tcfg.batch);
        for (int i = 0; i < tcfg.batch; ++i)
            phys[i] = pool[static_cast<size_t>(
                brng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))];

        const bool separate_data = uses_labels && tcfg.data_batch > 0;
        std::vector<Ref> data_refs;
        if (separate_data) {
            Rng drng = data_stream.child(static_cast<uint64_t>(iter));
            for (int i = 0; i < tcfg.data_batch; ++i)
                data_refs.push_back(labeled_pool[static_cast<size_t>(
                    drng.uniform_int(0, static_cast<int64_t>(labeled_pool.size()) - 1))]);
        } else if (uses_labels) {
            data_refs = phys;
        }

        // one encode pass over the union of physics and data items
        std::vector<ModelItem> items;
        std::vector<int> phys_idx, data_idx;
        for (const Ref& r : phys) {
            const PdeInstance& inst = data.train[r.family_slot]->instance(r.index);
            phys_idx.push_back(static_cast<int>(items.size()));
            items.push_back(ModelItem{&inst.u0, &inst.expression.tokens});
        }
        if (separate_data) {
            for (const Ref& r : data_refs) {
                const PdeInstance& inst = data.train[r.family_slot]->instance(r.index);
                data_idx.push_back(static_cast<int>(items.size()));
                items.push_back(ModelItem{&inst.u0, &inst.expression.tokens});
            }
        } else {
            data_idx = phys_idx;
        }

        Graph g;
        BoundModel bm(g, params);
        bm.encode(items);
        SubsetModelSurrogate phys_sur(bm, phys_idx);
        SubsetModelSurrogate data_sur(bm, data_idx);

        LossBatch lb;
        lb.surrogate = &phys_sur;
        for (const Ref& r : phys) {
            const PdeInstance& inst = data.train[r.family_slot]->instance(r.index);
            lb.exprs.push_back(&inst.expression);
            lb.u0.push_back(&inst.u0);
        }
        if (uses_labels) {
            lb.data_surrogate = &data_sur;
            for (const Ref& r : data_refs)
                lb.labels.push_back(&data.train[r.family_slot]->solution(r.index));
            lb.label_grid = &tcfg.label_grid;
        }

        Eigen::ArrayXXd tx = sample_collocation(tcfg.collocation, tcfg.collocation_points, iter,
                                                tcfg.collocation_seed);
        TotalLoss tl = total_loss(lb, tcfg.weights, tx, tcfg.backend);

        std::vector<Array> adj = grad_values(tl.total, bm.param_leaves());
        Eigen::VectorXd flat = bm.flatten_grads(adj);
        if (!flat.allFinite())
            throw NonFiniteGradient("training iteration " + std::to_string(iter));

        const double lr = lr_at(iter, tcfg.schedule);
        optimizer_step(params.flat(), flat, opt, tcfg.optim, lr);

        IterationRecord rec;
        rec.iteration = iter;
        rec.lr = lr;
        rec.losses = tl.report;
        rec.losses.residuals.resize(0, 0);  // not retained in the log
        if (tcfg.val_every > 0 && (iter % tcfg.val_every == 0 || iter == tcfg.iterations))
            run_validation(rec);
        rec.wall_time =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        emit(rec);
    }

    result.final_params = params;
    if (!std::isfinite(result.best_val_l2)) result.params = params;  // no validation ran
    return result;
}

TrainResult finetune_zero_shot(const ModelParams& pretrained,
                               const std::vector<std::string>& pretrain_families,
                               FamilyId target, const TrainConfig& tcfg,
                               const TrainDatasets& data, const std::string& log_path) {
    const std::string target_name = family_info(target).name;
    for (const std::string& f : pretrain_families)
        if (f == target_name)
            throw ConfigError("target family '" + target_name + "' was part of pretraining");
    for (const Dataset* d : data.train)
        if (d == nullptr || d->family() != target)
            throw ConfigError("finetune training data must be the target family");

    TrainConfig cfg = tcfg;
    cfg.weights.data = 0.0;  // physics-only objective
    cfg.data_batch = 0;
    cfg.validate_at_start = true;
    TrainResult r = train(pretrained.config(), cfg, data, &pretrained, log_path);
    r.train_families = {target_name};
    return r;
}

MetricReport evaluate_params(const ModelParams& params, const Dataset& ds, int max_instances,
                             bool odd_slices_only) {
    const std::vector<int> odd = test_time_indices();
    const std::vector<int>* rows = odd_slices_only ? &odd : nullptr;
    const size_t n = max_instances < 0
                         ? ds.size()
                         : std::min<size_t>(ds.size(), static_cast<size_t>(max_instances));
    MetricReport report;
    for (size_t i = 0; i < n; ++i) {
        const PdeInstance& inst = ds.instance(i);
        ModelItem item{&inst.u0, &inst.expression.tokens};
        Eigen::MatrixXd pred = predict_grid(params, item, 64, 128, 4096);
        const Eigen::MatrixXd& truth = ds.solution(i);
        report.l2.push_back(l2_rel(truth, pred, rows));
        report.h1.push_back(h1_rel(truth, pred, rows));
    }
    report.finalize();
    return report;
}

}  // namespace pimol
