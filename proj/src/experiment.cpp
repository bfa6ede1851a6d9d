#include "pimol/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "pimol/rng.hpp"

namespace pimol {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string csv_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

ScenarioKind scenario_from_name(const std::string& name) {
    if (name == "sparse_grid") return ScenarioKind::sparse_grid;
    if (name == "partial_time") return ScenarioKind::partial_time;
    if (name == "sparse_func") return ScenarioKind::sparse_func;
    if (name == "noisy") return ScenarioKind::noisy;
    if (name == "collocation_study") return ScenarioKind::collocation_study;
    if (name == "fdm_study") return ScenarioKind::fdm_study;
    if (name == "finetune") return ScenarioKind::finetune;
    throw ConfigError("scenario: unknown value '" + name + "'");
}

std::string scenario_name(ScenarioKind k) {
    switch (k) {
        case ScenarioKind::sparse_grid: return "sparse_grid";
        case ScenarioKind::partial_time: return "partial_time";
        case ScenarioKind::sparse_func: return "sparse_func";
        case ScenarioKind::noisy: return "noisy";
        case ScenarioKind::collocation_study: return "collocation_study";
        case ScenarioKind::fdm_study: return "fdm_study";
        case ScenarioKind::finetune: return "finetune";
    }
    return "?";
}

namespace {

template <class T>
T get_or(const json& j, const std::string& key, const T& fallback, const std::string& path) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(path + "." + key + ": wrong type");
    }
}

ModelConfig parse_model(const json& j, const std::string& path) {
    ModelConfig m;
    m.embed_dim = get_or(j, "embed_dim", m.embed_dim, path);
    m.heads = get_or(j, "heads", m.heads, path);
    m.ic_samples = get_or(j, "ic_samples", m.ic_samples, path);
    m.data_patch = get_or(j, "data_patch", m.data_patch, path);
    m.data_layers = get_or(j, "data_layers", m.data_layers, path);
    m.symbol_layers = get_or(j, "symbol_layers", m.symbol_layers, path);
    m.fusion_layers = get_or(j, "fusion_layers", m.fusion_layers, path);
    m.decoder_layers = get_or(j, "decoder_layers", m.decoder_layers, path);
    m.periodic_features = get_or(j, "periodic_features", m.periodic_features, path);
    m.mlp_ratio = get_or(j, "mlp_ratio", m.mlp_ratio, path);
    m.max_symbol_len = get_or(j, "max_symbol_len", m.max_symbol_len, path);
    m.seed = get_or<uint64_t>(j, "seed", m.seed, path);
    try {
        m.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return m;
}

TrainConfig parse_train(const json& j, const std::string& path) {
    TrainConfig t;
    t.iterations = get_or(j, "iterations", t.iterations, path);
    t.batch = get_or(j, "batch", t.batch, path);
    t.data_batch = get_or(j, "data_batch", t.data_batch, path);
    t.seed = get_or<uint64_t>(j, "seed", t.seed, path);
    t.val_every = get_or(j, "val_every", t.val_every, path);
    t.val_instances = get_or(j, "val_instances", t.val_instances, path);
    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        t.schedule.t_warmup = get_or<int64_t>(s, "t_warmup", t.schedule.t_warmup, path + ".schedule");
        t.schedule.t_max = get_or<int64_t>(s, "t_max", t.schedule.t_max, path + ".schedule");
        t.schedule.base_lr = get_or(s, "base_lr", t.schedule.base_lr, path + ".schedule");
    } else {
        t.schedule.t_max = t.iterations;
        t.schedule.t_warmup = std::max<int64_t>(1, t.iterations / 10);
    }
    t.optim.base_lr = t.schedule.base_lr;
    if (j.contains("optimizer")) {
        const json& o = j.at("optimizer");
        t.optim.weight_decay = get_or(o, "weight_decay", t.optim.weight_decay, path + ".optimizer");
        t.optim.beta1 = get_or(o, "beta1", t.optim.beta1, path + ".optimizer");
        t.optim.beta2 = get_or(o, "beta2", t.optim.beta2, path + ".optimizer");
        t.optim.eps = get_or(o, "eps", t.optim.eps, path + ".optimizer");
    }
    if (j.contains("weights")) {
        const json& w = j.at("weights");
        t.weights.pde = get_or(w, "pde", t.weights.pde, path + ".weights");
        t.weights.ic = get_or(w, "ic", t.weights.ic, path + ".weights");
        t.weights.ic_prime = get_or(w, "ic_prime", t.weights.ic_prime, path + ".weights");
        t.weights.data = get_or(w, "data", t.weights.data, path + ".weights");
    }
    if (j.contains("backend")) {
        const json& b = j.at("backend");
        t.backend.backend =
            backend_from_name(get_or<std::string>(b, "kind", "forward_ad", path + ".backend"));
        t.backend.fdm_step = get_or(b, "fdm_step", t.backend.fdm_step, path + ".backend");
        t.backend.precision = precision_from_name(
            get_or<std::string>(b, "fdm_precision", "f64", path + ".backend"));
    }
    if (j.contains("collocation")) {
        const json& c = j.at("collocation");
        t.collocation = collocation_strategy_from_name(
            get_or<std::string>(c, "strategy", "resample", path + ".collocation"));
        t.collocation_points = get_or(c, "points", t.collocation_points, path + ".collocation");
        t.collocation_seed =
            get_or<uint64_t>(c, "seed", t.collocation_seed, path + ".collocation");
    }
    t.n_func = get_or(j, "n_func", t.n_func, path);
    if (j.contains("label_grid")) {
        const json& lg = j.at("label_grid");
        const std::string type = get_or<std::string>(lg, "type", "full", path + ".label_grid");
        if (type == "sparse")
            t.label_grid = sparse_label_grid(get_or(lg, "nt", 4, path + ".label_grid"),
                                             get_or(lg, "nx", 16, path + ".label_grid"));
        else if (type == "partial")
            t.label_grid =
                partial_time_label_grid(get_or(lg, "span", 16, path + ".label_grid"));
        else if (type == "full")
            t.label_grid = full_train_label_grid();
        else
            throw ConfigError(path + ".label_grid.type: unknown value '" + type + "'");
    } else {
        t.label_grid = full_train_label_grid();
    }
    return t;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
    json j = json::parse(json_text, nullptr, false);
    if (j.is_discarded()) throw ConfigError("$: not valid JSON");
    const int version = get_or(j, "version", 1, "$");
    if (version != 1) throw ConfigError("$.version: unsupported value");

    ExperimentConfig c;
    // "scenario" is required by `experiment`; the plain `train`/`finetune`
    // subcommands accept configs without it
    c.has_scenario = j.contains("scenario");
    if (c.has_scenario) c.scenario = scenario_from_name(j.at("scenario").get<std::string>());
    if (!j.contains("families") || !j.at("families").is_array() || j.at("families").empty())
        throw ConfigError("$.families: need a non-empty array of family names");
    for (const auto& f : j.at("families")) c.families.push_back(family_from_name(f));

    if (j.contains("data")) {
        const json& d = j.at("data");
        c.train_per_family = get_or(d, "train_per_family", c.train_per_family, "$.data");
        c.val_per_family = get_or(d, "val_per_family", c.val_per_family, "$.data");
        c.test_per_family = get_or(d, "test_per_family", c.test_per_family, "$.data");
        c.data_seed = get_or<uint64_t>(d, "seed", c.data_seed, "$.data");
    }
    if (j.contains("model")) c.model = parse_model(j.at("model"), "$.model");
    if (j.contains("train")) c.train = parse_train(j.at("train"), "$.train");

    if (j.contains("scenario_params")) {
        const json& s = j.at("scenario_params");
        if (s.contains("resolutions")) {
            c.resolutions.clear();
            for (const auto& r : s.at("resolutions")) {
                if (!r.is_array() || r.size() != 2)
                    throw ConfigError("$.scenario_params.resolutions: entries are [nt, nx]");
                c.resolutions.push_back({r[0].get<int>(), r[1].get<int>()});
            }
        }
        c.spans = get_or(s, "spans", c.spans, "$.scenario_params");
        c.n_funcs = get_or(s, "n_funcs", c.n_funcs, "$.scenario_params");
        c.gammas = get_or(s, "gammas", c.gammas, "$.scenario_params");
        c.collocation_counts =
            get_or(s, "collocation_counts", c.collocation_counts, "$.scenario_params");
        c.fdm_steps = get_or(s, "fdm_steps", c.fdm_steps, "$.scenario_params");
        c.fdm_precisions = get_or(s, "fdm_precisions", c.fdm_precisions, "$.scenario_params");
        c.finetune_target =
            get_or<std::string>(s, "finetune_target", c.finetune_target, "$.scenario_params");
        c.finetune_iterations =
            get_or(s, "finetune_iterations", c.finetune_iterations, "$.scenario_params");
        c.checkpoint = get_or<std::string>(s, "checkpoint", c.checkpoint, "$.scenario_params");
    }
    c.eval_instances = get_or(j, "eval_instances", c.eval_instances, "$");

    if (c.scenario == ScenarioKind::finetune) {
        FamilyId target = family_from_name(c.finetune_target);
        for (FamilyId f : c.families)
            if (f == target)
                throw ConfigError("$.scenario_params.finetune_target: present in $.families");
    }
    return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_experiment_config(text);
}

// ---------------------------------------------------------------------------
// Experiment driver
// ---------------------------------------------------------------------------

namespace {

struct GeneratedData {
    std::vector<Dataset> train, val, test;
};

GeneratedData generate_all(const ExperimentConfig& cfg, const std::string& out_dir) {
    GeneratedData d;
    fs::create_directories(fs::path(out_dir) / "data");
    for (FamilyId f : cfg.families) {
        const std::string name = family_info(f).name;
        Rng fam(cfg.data_seed, hash_tag("family-" + name));
        d.train.push_back(
            generate_dataset(f, cfg.train_per_family, fam.child(0).engine()(), "train"));
        d.val.push_back(generate_dataset(f, cfg.val_per_family, fam.child(1).engine()(), "val"));
        d.test.push_back(generate_dataset(f, cfg.test_per_family, fam.child(2).engine()(), "test"));
        for (const Dataset* ds : {&d.train.back(), &d.val.back(), &d.test.back()})
            save_dataset(*ds, (fs::path(out_dir) / "data" /
                               (name + "_" + ds->split() + ".pimf"))
                                  .string());
    }
    return d;
}

TrainDatasets make_refs(const std::vector<Dataset>& train, const std::vector<Dataset>& val) {
    TrainDatasets td;
    for (const Dataset& d : train) td.train.push_back(&d);
    for (const Dataset& d : val) td.val.push_back(&d);
    return td;
}

MetricReport evaluate_all(const ModelParams& params, const std::vector<Dataset>& test,
                          int per_family) {
    MetricReport all;
    for (const Dataset& ds : test) {
        MetricReport r = evaluate_params(params, ds, per_family);
        all.l2.insert(all.l2.end(), r.l2.begin(), r.l2.end());
        all.h1.insert(all.h1.end(), r.h1.begin(), r.h1.end());
    }
    all.finalize();
    return all;
}

LossWeights physics_weights() { return LossWeights{1.0, 1.0, 1.0, 1.0}; }
LossWeights data_only_weights() { return LossWeights{0.0, 0.0, 0.0, 1.0}; }

struct CsvWriter {
    std::ofstream out;
    explicit CsvWriter(const std::string& path, const std::string& header) : out(path) {
        if (!out) throw IoError("cannot open CSV '" + path + "'");
        out << header << "\n";
    }
    void row(const std::vector<std::string>& cells) {
        for (size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
        out << "\n";
    }
};

std::string summary_cells(const MetricReport& r) {
    return csv_double(r.l2_summary.mean) + "," + csv_double(r.l2_summary.p25) + "," +
           csv_double(r.l2_summary.p50) + "," + csv_double(r.l2_summary.p75) + "," +
           csv_double(r.h1_summary.mean) + "," + csv_double(r.h1_summary.p25) + "," +
           csv_double(r.h1_summary.p50) + "," + csv_double(r.h1_summary.p75);
}

constexpr const char* kSummaryHeader =
    "l2_mean,l2_p25,l2_p50,l2_p75,h1_mean,h1_p25,h1_p50,h1_p75";

void run_sparse_grid(const ExperimentConfig& cfg, GeneratedData& d, const std::string& out_dir) {
    CsvWriter csv((fs::path(out_dir) / "error_vs_resolution.csv").string(),
                  std::string("nt_label,nx_label,variant,") + kSummaryHeader);
    for (const auto& res : cfg.resolutions) {
        for (bool physics : {true, false}) {
            TrainConfig tc = cfg.train;
            tc.weights = physics ? physics_weights() : data_only_weights();
            tc.label_grid = sparse_label_grid(res[0], res[1]);
            TrainResult r = train(cfg.model, tc, make_refs(d.train, d.val));
            MetricReport m = evaluate_all(r.params, d.test, cfg.eval_instances);
            csv.row({std::to_string(res[0]), std::to_string(res[1]),
                     physics ? "physics" : "data_only", summary_cells(m)});
        }
    }
}

void run_partial_time(const ExperimentConfig& cfg, GeneratedData& d, const std::string& out_dir) {
    CsvWriter summary((fs::path(out_dir) / "error_vs_time_span.csv").string(),
                      std::string("span_steps,span_fraction,variant,") + kSummaryHeader);
    CsvWriter slices((fs::path(out_dir) / "error_vs_time.csv").string(),
                     "span_steps,variant,t_index,t_value,regime,l2_mean");
    const std::vector<int> odd = test_time_indices();
    for (int span : cfg.spans) {
        for (bool physics : {true, false}) {
            TrainConfig tc = cfg.train;
            tc.weights = physics ? physics_weights() : data_only_weights();
            tc.label_grid = partial_time_label_grid(span);
            TrainResult r = train(cfg.model, tc, make_refs(d.train, d.val));
            MetricReport m = evaluate_all(r.params, d.test, cfg.eval_instances);
            summary.row({std::to_string(span), csv_double(span / 32.0),
                         physics ? "physics" : "data_only", summary_cells(m)});

            // per-slice decomposition: interpolation below the labeled span,
            // extrapolation beyond it
            const int last_labeled = 2 * (span - 1);
            std::vector<double> acc(64, 0.0);
            int count = 0;
            for (const Dataset& ds : d.test) {
                const int n = cfg.eval_instances < 0
                                  ? static_cast<int>(ds.size())
                                  : std::min<int>(cfg.eval_instances,
                                                  static_cast<int>(ds.size()));
                for (int i = 0; i < n; ++i) {
                    const PdeInstance& inst = ds.instance(i);
                    ModelItem item{&inst.u0, &inst.expression.tokens};
                    Eigen::MatrixXd pred = predict_grid(r.params, item, 64, 128, 4096);
                    const Eigen::MatrixXd& truth = ds.solution(i);
                    for (int ti : odd) {
                        std::vector<int> one{ti};
                        acc[ti] += l2_rel(truth, pred, &one);
                    }
                    ++count;
                }
            }
            for (int ti : odd)
                slices.row({std::to_string(span), physics ? "physics" : "data_only",
                            std::to_string(ti), csv_double(ti / 64.0),
                            ti < last_labeled ? "interpolation" : "extrapolation",
                            csv_double(acc[ti] / count)});
        }
    }
}

void run_sparse_func(const ExperimentConfig& cfg, GeneratedData& d, const std::string& out_dir) {
    CsvWriter csv((fs::path(out_dir) / "error_vs_nfunc.csv").string(),
                  std::string("n_func,variant,") + kSummaryHeader);
    for (int n_func : cfg.n_funcs) {
        for (bool physics : {true, false}) {
            TrainConfig tc = cfg.train;
            tc.weights = physics ? physics_weights() : data_only_weights();
            tc.label_grid = full_train_label_grid();
            tc.n_func = n_func;
            if (tc.data_batch <= 0) tc.data_batch = std::min(8, tc.batch);
            TrainResult r = train(cfg.model, tc, make_refs(d.train, d.val));
            MetricReport m = evaluate_all(r.params, d.test, cfg.eval_instances);
            csv.row({std::to_string(n_func), physics ? "physics" : "data_only",
                     summary_cells(m)});
        }
    }
}

void run_noisy(const ExperimentConfig& cfg, GeneratedData& d, const std::string& out_dir) {
    CsvWriter csv((fs::path(out_dir) / "error_vs_gamma.csv").string(),
                  std::string("gamma,variant,") + kSummaryHeader);
    for (double gamma : cfg.gammas) {
        std::vector<Dataset> noisy_train;
        for (size_t i = 0; i < d.train.size(); ++i)
            noisy_train.push_back(add_noise(d.train[i], gamma, cfg.data_seed + i));
        for (bool physics : {true, false}) {
            TrainConfig tc = cfg.train;
            tc.weights = physics ? physics_weights() : data_only_weights();
            tc.label_grid = full_train_label_grid();
            TrainResult r = train(cfg.model, tc, make_refs(noisy_train, d.val));
            MetricReport m = evaluate_all(r.params, d.test, cfg.eval_instances);
            csv.row({csv_double(gamma), physics ? "physics" : "data_only", summary_cells(m)});
        }
    }
}

void run_collocation_study(const ExperimentConfig& cfg, GeneratedData& d,
                           const std::string& out_dir) {
    CsvWriter csv((fs::path(out_dir) / "error_vs_collocation.csv").string(),
                  std::string("points,strategy,") + kSummaryHeader);
    for (int m : cfg.collocation_counts) {
        for (CollocationStrategy strat :
             {CollocationStrategy::Resample, CollocationStrategy::Fixed}) {
            TrainConfig tc = cfg.train;
            tc.weights = physics_weights();
            tc.label_grid = cfg.train.label_grid.t_idx.empty() ? sparse_label_grid(4, 16)
                                                               : cfg.train.label_grid;
            tc.collocation = strat;
            tc.collocation_points = m;
            TrainResult r = train(cfg.model, tc, make_refs(d.train, d.val));
            MetricReport mr = evaluate_all(r.params, d.test, cfg.eval_instances);
            csv.row({std::to_string(m), collocation_strategy_name(strat), summary_cells(mr)});
        }
    }
}

void run_fdm_study(const ExperimentConfig& cfg, GeneratedData& d, const std::string& out_dir) {
    ModelParams params = [&] {
        if (!cfg.checkpoint.empty()) return load_checkpoint(cfg.checkpoint).params;
        TrainConfig tc = cfg.train;
        tc.weights = physics_weights();
        tc.label_grid = sparse_label_grid(4, 16);
        return train(cfg.model, tc, make_refs(d.train, d.val)).params;
    }();

    std::vector<DiffBackendConfig> configs;
    configs.push_back(DiffBackendConfig{DiffBackend::forward_ad, 0.0, Precision::f64});
    configs.push_back(DiffBackendConfig{DiffBackend::reverse_ad, 0.0, Precision::f64});
    for (const std::string& prec : cfg.fdm_precisions)
        for (double step : cfg.fdm_steps)
            configs.push_back(DiffBackendConfig{DiffBackend::fdm, step,
                                                precision_from_name(prec)});
    std::vector<BenchRow> rows = bench_diff(params, d.test.front(), configs);
    write_bench_csv((fs::path(out_dir) / "error_vs_step.csv").string(), rows);
}

void run_finetune(const ExperimentConfig& cfg, GeneratedData& d, const std::string& out_dir) {
    const FamilyId target = family_from_name(cfg.finetune_target);

    // pretrained initialization (physics-informed on the listed families)
    ModelParams pretrained = [&] {
        if (!cfg.checkpoint.empty()) return load_checkpoint(cfg.checkpoint).params;
        TrainConfig tc = cfg.train;
        tc.weights = physics_weights();
        tc.label_grid = sparse_label_grid(4, 16);
        return train(cfg.model, tc, make_refs(d.train, d.val)).params;
    }();
    std::vector<std::string> pre_families;
    for (FamilyId f : cfg.families) pre_families.push_back(family_info(f).name);

    // target-family data: unlabeled train inputs, labeled val/test
    Rng fam(cfg.data_seed, hash_tag("family-" + cfg.finetune_target));
    Dataset ft_train = generate_dataset(target, cfg.train_per_family, fam.child(0).engine()(),
                                        "train", {}, /*solve=*/false);
    Dataset ft_val =
        generate_dataset(target, cfg.val_per_family, fam.child(1).engine()(), "val");
    Dataset ft_test =
        generate_dataset(target, cfg.test_per_family, fam.child(2).engine()(), "test");

    TrainConfig ft = cfg.train;
    ft.iterations = cfg.finetune_iterations;
    ft.schedule.t_max = cfg.finetune_iterations;
    ft.schedule.t_warmup = std::max<int64_t>(1, cfg.finetune_iterations / 10);
    ft.weights = physics_weights();
    ft.weights.data = 0.0;

    TrainDatasets target_refs;
    target_refs.train.push_back(&ft_train);
    target_refs.val.push_back(&ft_val);

    TrainResult tuned = finetune_zero_shot(pretrained, pre_families, target, ft, target_refs);

    TrainConfig scratch_cfg = ft;
    scratch_cfg.validate_at_start = true;
    TrainResult scratch = train(cfg.model, scratch_cfg, target_refs);

    CsvWriter csv((fs::path(out_dir) / "finetune_trajectory.csv").string(),
                  "iteration,variant,val_l2,val_h1");
    for (const IterationRecord& rec : tuned.log)
        if (rec.has_validation)
            csv.row({std::to_string(rec.iteration), "finetune", csv_double(rec.val_l2),
                     csv_double(rec.val_h1)});
    for (const IterationRecord& rec : scratch.log)
        if (rec.has_validation)
            csv.row({std::to_string(rec.iteration), "from_scratch", csv_double(rec.val_l2),
                     csv_double(rec.val_h1)});

    CsvWriter final_csv((fs::path(out_dir) / "finetune_final.csv").string(),
                        std::string("variant,") + kSummaryHeader);
    final_csv.row({"finetune", summary_cells(evaluate_params(tuned.params, ft_test,
                                                             cfg.eval_instances))});
    final_csv.row({"from_scratch", summary_cells(evaluate_params(scratch.params, ft_test,
                                                                 cfg.eval_instances))});
}

}  // namespace

void run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
    if (!cfg.has_scenario) throw ConfigError("$.scenario: missing");
    fs::create_directories(out_dir);
    GeneratedData d = generate_all(cfg, out_dir);
    switch (cfg.scenario) {
        case ScenarioKind::sparse_grid: run_sparse_grid(cfg, d, out_dir); break;
        case ScenarioKind::partial_time: run_partial_time(cfg, d, out_dir); break;
        case ScenarioKind::sparse_func: run_sparse_func(cfg, d, out_dir); break;
        case ScenarioKind::noisy: run_noisy(cfg, d, out_dir); break;
        case ScenarioKind::collocation_study: run_collocation_study(cfg, d, out_dir); break;
        case ScenarioKind::fdm_study: run_fdm_study(cfg, d, out_dir); break;
        case ScenarioKind::finetune: run_finetune(cfg, d, out_dir); break;
    }
}

// ---------------------------------------------------------------------------
// bench-diff
// ---------------------------------------------------------------------------

namespace {

// prediction + backend-computed first-derivative grids on a strided subgrid
struct PredictedFields {
    Eigen::MatrixXd u, ut, ux;
};

PredictedFields predict_with_derivatives(const ModelParams& params, const PdeInstance& inst,
                                         int nt, int nx, const DiffBackendConfig& cfg) {
    Eigen::ArrayXXd tx(static_cast<Eigen::Index>(nt) * nx, 2);
    Eigen::Index at = 0;
    for (int i = 0; i < nt; ++i)
        for (int j = 0; j < nx; ++j) {
            tx(at, 0) = static_cast<double>(i) / nt;
            tx(at, 1) = static_cast<double>(j) / nx;
            ++at;
        }
    Graph g;
    BoundModel bm(g, params);
    bm.encode({ModelItem{&inst.u0, &inst.expression.tokens}});
    ModelSurrogate sur(bm);
    DerivSet need;
    need.insert(Channel::Ut);
    need.insert(Channel::Ux);
    ChannelSet ch = compute_channels(sur, tx, need, cfg);

    PredictedFields f;
    f.u.resize(nt, nx);
    f.ut.resize(nt, nx);
    f.ux.resize(nt, nx);
    const auto& item = ch.items[0];
    at = 0;
    for (int i = 0; i < nt; ++i)
        for (int j = 0; j < nx; ++j) {
            f.u(i, j) = item[static_cast<int>(Channel::U)].value()(at, 0);
            f.ut(i, j) = item[static_cast<int>(Channel::Ut)].value()(at, 0);
            f.ux(i, j) = item[static_cast<int>(Channel::Ux)].value()(at, 0);
            ++at;
        }
    return f;
}

}  // namespace

std::pair<double, size_t> time_pde_iteration(const ModelParams& params, const Dataset& ds,
                                             const DiffBackendConfig& cfg,
                                             const BenchOptions& opts) {
    std::vector<double> times;
    size_t bytes = 0;
    for (int rep = 0; rep < opts.timing_reps; ++rep) {
        std::vector<ModelItem> items;
        std::vector<const PdeExpression*> exprs;
        for (int b = 0; b < opts.timing_batch; ++b) {
            const PdeInstance& inst = ds.instance(b % ds.size());
            items.push_back(ModelItem{&inst.u0, &inst.expression.tokens});
            exprs.push_back(&inst.expression);
        }
        Eigen::ArrayXXd tx = sample_collocation(CollocationStrategy::Fixed, opts.timing_points,
                                                0, opts.seed);
        const auto t0 = std::chrono::steady_clock::now();
        Graph g;
        BoundModel bm(g, params);
        bm.encode(items);
        ModelSurrogate sur(bm);
        PdeLossResult pde = compute_pde_loss(sur, exprs, tx, cfg);
        std::vector<Array> adj = grad_values(pde.loss, bm.param_leaves());
        (void)bm.flatten_grads(adj);
        times.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        bytes = std::max(bytes, g.value_bytes());
    }
    std::sort(times.begin(), times.end());
    return {times[times.size() / 2], bytes};
}

std::vector<BenchRow> bench_diff(const ModelParams& params, const Dataset& ds,
                                 const std::vector<DiffBackendConfig>& configs,
                                 const BenchOptions& opts) {
    if (ds.size() == 0) throw ConfigError("bench-diff needs a non-empty dataset");
    std::vector<BenchRow> rows;
    for (const DiffBackendConfig& cfg : configs) {
        BenchRow row;
        row.backend = backend_name(cfg.backend);
        row.precision = cfg.backend == DiffBackend::fdm ? precision_name(cfg.precision) : "f64";
        row.step = cfg.backend == DiffBackend::fdm ? cfg.fdm_step : 0.0;

        const int n = std::min<int>(opts.instances, static_cast<int>(ds.size()));
        double l2 = 0.0, h1 = 0.0;
        for (int i = 0; i < n; ++i) {
            const PdeInstance& inst = ds.instance(i);
            PredictedFields f =
                predict_with_derivatives(params, inst, opts.grid_nt, opts.grid_nx, cfg);
            // ground truth on the same strided subgrid
            Eigen::MatrixXd truth(opts.grid_nt, opts.grid_nx);
            const Eigen::MatrixXd& full = ds.solution(i);
            const int st = 64 / opts.grid_nt, sx = 128 / opts.grid_nx;
            for (int r = 0; r < opts.grid_nt; ++r)
                for (int c = 0; c < opts.grid_nx; ++c) truth(r, c) = full(r * st, c * sx);
            GridGradient pred_grad{f.ut, f.ux};
            l2 += l2_rel(truth, f.u);
            h1 += h1_rel(truth, f.u, nullptr, &pred_grad);
        }
        row.l2_rel_err = l2 / n;
        row.h1_rel_err = h1 / n;

        auto [seconds, bytes] = time_pde_iteration(params, ds, cfg, opts);
        row.wall_time_s = seconds;
        row.peak_alloc_bytes = bytes;
        rows.push_back(row);
    }
    return rows;
}

void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows) {
    CsvWriter csv(path, "backend,precision,step,L2_rel_err,H1_rel_err,wall_time_s,peak_alloc_bytes");
    for (const BenchRow& r : rows)
        csv.row({r.backend, r.precision, csv_double(r.step), csv_double(r.l2_rel_err),
                 csv_double(r.h1_rel_err), csv_double(r.wall_time_s),
                 std::to_string(r.peak_alloc_bytes)});
}

}  // namespace pimol
