// Command-line front end: dataset generation, training, evaluation,
// zero-shot fine-tuning, differentiation benchmarks, and full experiments.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pimol/dataset.hpp"
#include "pimol/experiment.hpp"
#include "pimol/losses.hpp"
#include "pimol/model.hpp"
#include "pimol/rng.hpp"
#include "pimol/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace pimol;

namespace {

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

struct LoadedSets {
    std::vector<Dataset> train, val;
};

// datasets for a run: either loaded from config.data.dir or generated
LoadedSets prepare_datasets(const ExperimentConfig& cfg, const std::string& data_dir,
                            bool unlabeled_train) {
    LoadedSets out;
    for (FamilyId f : cfg.families) {
        const std::string name = family_info(f).name;
        if (!data_dir.empty()) {
            out.train.push_back(load_dataset((fs::path(data_dir) / (name + "_train.pimf")).string()));
            out.val.push_back(load_dataset((fs::path(data_dir) / (name + "_val.pimf")).string()));
        } else {
            Rng fam(cfg.data_seed, hash_tag("family-" + name));
            out.train.push_back(generate_dataset(f, cfg.train_per_family,
                                                 fam.child(0).engine()(), "train", {},
                                                 !unlabeled_train));
            out.val.push_back(
                generate_dataset(f, cfg.val_per_family, fam.child(1).engine()(), "val"));
        }
    }
    return out;
}

std::string config_data_dir(const std::string& config_path) {
    std::ifstream in(config_path);
    if (!in) throw IoError("cannot open config '" + config_path + "'");
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("$: not valid JSON");
    if (j.contains("data") && j.at("data").contains("dir"))
        return j.at("data").at("dir").get<std::string>();
    return "";
}

void write_train_outputs(const TrainResult& r, const std::string& out_dir) {
    fs::create_directories(out_dir);
    save_checkpoint(r.params, (fs::path(out_dir) / "checkpoint.bin").string(),
                    r.best_iteration, r.train_families);
    save_checkpoint(r.final_params, (fs::path(out_dir) / "final.bin").string(),
                    r.log.empty() ? 0 : r.log.back().iteration, r.train_families);
    std::ofstream log((fs::path(out_dir) / "log.ndjson").string());
    for (const IterationRecord& rec : r.log) log << iteration_record_json(rec) << "\n";
    json summary{{"best_val_l2", r.best_val_l2},
                 {"best_iteration", r.best_iteration},
                 {"train_families", r.train_families},
                 {"iterations", r.log.empty() ? 0 : r.log.back().iteration}};
    std::ofstream(fs::path(out_dir) / "summary.json") << summary.dump(2) << "\n";
}

int cmd_gen_data(const std::string& family, int count, uint64_t seed, const std::string& out,
                 const std::string& split, bool unlabeled) {
    FamilyId f = family_from_name(family);
    Dataset ds = generate_dataset(f, count, seed, split, {}, !unlabeled);
    if (!fs::path(out).parent_path().empty()) fs::create_directories(fs::path(out).parent_path());
    save_dataset(ds, out);
    std::cout << "wrote " << ds.size() << " " << family << " records to " << out << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    LoadedSets sets = prepare_datasets(cfg, config_data_dir(config_path), false);
    TrainDatasets refs;
    for (const Dataset& d : sets.train) refs.train.push_back(&d);
    for (const Dataset& d : sets.val) refs.val.push_back(&d);
    TrainResult r = train(cfg.model, cfg.train, refs, nullptr,
                          (fs::create_directories(out_dir),
                           (fs::path(out_dir) / "log.ndjson").string()));
    write_train_outputs(r, out_dir);
    std::cout << "best val L2 " << r.best_val_l2 << " at iteration " << r.best_iteration << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset,
             const std::string& metrics_out) {
    Checkpoint ck = load_checkpoint(checkpoint);
    Dataset ds = load_dataset(dataset);
    MetricReport r = evaluate_params(ck.params, ds);
    json per = json::array();
    for (size_t i = 0; i < r.l2.size(); ++i)
        per.push_back(json{{"l2", r.l2[i]}, {"h1", r.h1[i]}});
    json out{{"family", family_info(ds.family()).name},
             {"split", ds.split()},
             {"instances", r.l2.size()},
             {"l2", {{"mean", r.l2_summary.mean},
                     {"p25", r.l2_summary.p25},
                     {"p50", r.l2_summary.p50},
                     {"p75", r.l2_summary.p75}}},
             {"h1", {{"mean", r.h1_summary.mean},
                     {"p25", r.h1_summary.p25},
                     {"p50", r.h1_summary.p50},
                     {"p75", r.h1_summary.p75}}},
             {"per_instance", per}};
    if (!fs::path(metrics_out).parent_path().empty())
        fs::create_directories(fs::path(metrics_out).parent_path());
    std::ofstream(metrics_out) << out.dump(2) << "\n";
    std::cout << "mean test L2 " << r.l2_summary.mean << ", H1 " << r.h1_summary.mean << "\n";
    return 0;
}

int cmd_finetune(const std::string& checkpoint, const std::string& family,
                 const std::string& config_path, const std::string& out_dir) {
    Checkpoint ck = load_checkpoint(checkpoint);
    ExperimentConfig cfg = load_experiment_config(config_path);
    FamilyId target = family_from_name(family);

    // target-family inputs: unlabeled train, labeled validation
    ExperimentConfig tcfg = cfg;
    tcfg.families = {target};
    LoadedSets sets = prepare_datasets(tcfg, config_data_dir(config_path), true);
    TrainDatasets refs;
    for (const Dataset& d : sets.train) refs.train.push_back(&d);
    for (const Dataset& d : sets.val) refs.val.push_back(&d);

    fs::create_directories(out_dir);
    TrainResult r = finetune_zero_shot(ck.params, ck.train_families, target, cfg.train, refs,
                                       (fs::path(out_dir) / "log.ndjson").string());
    write_train_outputs(r, out_dir);
    std::cout << "zero-shot val L2 " << (r.log.empty() ? 0.0 : r.log.front().val_l2)
              << ", best " << r.best_val_l2 << "\n";
    return 0;
}

int cmd_bench_diff(const std::string& checkpoint, const std::string& backends,
                   const std::string& steps, const std::string& precisions,
                   const std::string& out, const std::string& dataset) {
    Checkpoint ck = load_checkpoint(checkpoint);

    Dataset ds = [&] {
        if (!dataset.empty()) return load_dataset(dataset);
        // small deterministic benchmark set; Wave exercises both second-order
        // channels so every backend's full path is timed
        return generate_dataset(FamilyId::Wave, 4, 2024, "bench");
    }();

    std::vector<DiffBackendConfig> configs;
    for (const std::string& b : split_csv(backends)) {
        DiffBackend kind = backend_from_name(b);
        if (kind == DiffBackend::fdm) {
            for (const std::string& p : split_csv(precisions))
                for (const std::string& s : split_csv(steps))
                    configs.push_back(
                        DiffBackendConfig{kind, std::stod(s), precision_from_name(p)});
        } else {
            configs.push_back(DiffBackendConfig{kind, 0.0, Precision::f64});
        }
    }
    if (configs.empty()) throw ConfigError("no backend configurations requested");

    std::vector<BenchRow> rows = bench_diff(ck.params, ds, configs);
    if (!fs::path(out).parent_path().empty())
        fs::create_directories(fs::path(out).parent_path());
    write_bench_csv(out, rows);
    std::cout << "wrote " << rows.size() << " rows to " << out << "\n";
    return 0;
}

int cmd_experiment(const std::string& config_path, const std::string& out_dir) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    run_experiment(cfg, out_dir);
    std::cout << "experiment artifacts in " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"physics-informed multi-operator learning engine"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "sample and solve instances of one PDE family");
    std::string gd_family, gd_out, gd_split = "train";
    int gd_count = 10;
    uint64_t gd_seed = 0;
    bool gd_unlabeled = false;
    gen->add_option("--family", gd_family, "family name, e.g. Adv, Diff-Lin, Burgers")
        ->required();
    gen->add_option("--count", gd_count, "number of instances")->required();
    gen->add_option("--seed", gd_seed, "generation seed")->required();
    gen->add_option("--out", gd_out, "output .pimf path (manifest written alongside)")
        ->required();
    gen->add_option("--split", gd_split, "split label stored in the manifest");
    gen->add_flag("--unlabeled", gd_unlabeled, "skip the solver; store inputs only");

    // train
    auto* tr = app.add_subcommand("train", "train a model from a JSON config");
    std::string tr_config, tr_out;
    tr->add_option("--config", tr_config, "JSON run configuration")->required();
    tr->add_option("--out", tr_out, "output directory (checkpoints, log, summary)")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string ev_ckpt, ev_data, ev_out;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--dataset", ev_data, ".pimf dataset file")->required();
    ev->add_option("--metrics-out", ev_out, "metrics JSON output path")->required();

    // finetune
    auto* ft = app.add_subcommand("finetune",
                                  "physics-only zero-shot adaptation to an unseen family");
    std::string ft_ckpt, ft_family, ft_config, ft_out;
    ft->add_option("--checkpoint", ft_ckpt, "pretrained checkpoint")->required();
    ft->add_option("--family", ft_family, "target family name")->required();
    ft->add_option("--config", ft_config, "JSON run configuration")->required();
    ft->add_option("--out", ft_out, "output directory")->required();

    // bench-diff
    auto* bd = app.add_subcommand("bench-diff",
                                  "accuracy/cost comparison of derivative backends");
    std::string bd_ckpt, bd_backends = "forward_ad,reverse_ad,fdm";
    std::string bd_steps = "0.0001,0.001,0.01", bd_precisions = "f64,f32", bd_out, bd_data;
    bd->add_option("--checkpoint", bd_ckpt, "checkpoint file")->required();
    bd->add_option("--backends", bd_backends, "comma list: forward_ad,reverse_ad,fdm");
    bd->add_option("--steps", bd_steps, "comma list of FDM step sizes");
    bd->add_option("--precisions", bd_precisions,
                   "comma list: f64,f32,f16_emulated,bf16_emulated");
    bd->add_option("--out", bd_out, "output CSV path")->required();
    bd->add_option("--dataset", bd_data, "optional .pimf benchmark dataset");

    // experiment
    auto* ex = app.add_subcommand("experiment", "run a full study and emit CSV artifacts");
    std::string ex_config, ex_out;
    ex->add_option("--config", ex_config, "JSON experiment configuration")->required();
    ex->add_option("--out", ex_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;  // usage error
    }

    try {
        if (gen->parsed())
            return cmd_gen_data(gd_family, gd_count, gd_seed, gd_out, gd_split, gd_unlabeled);
        if (tr->parsed()) return cmd_train(tr_config, tr_out);
        if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_out);
        if (ft->parsed()) return cmd_finetune(ft_ckpt, ft_family, ft_config, ft_out);
        if (bd->parsed())
            return cmd_bench_diff(bd_ckpt, bd_backends, bd_steps, bd_precisions, bd_out, bd_data);
        if (ex->parsed()) return cmd_experiment(ex_config, ex_out);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
