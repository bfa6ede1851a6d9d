#include "pimol/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "pimol/rng.hpp"

namespace pimol {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

SampledIC sample_ic(uint64_t seed, int nx, int waves, int n_max) {
    for (uint64_t attempt = seed;; ++attempt) {
        Rng rng(attempt, hash_tag("ic"));
        ICSpec spec;
        spec.waves = waves;
        spec.n_max = n_max;
        for (int j = 0; j < waves; ++j) {
            spec.amplitudes.push_back(rng.uniform(0.0, 1.0));
            spec.phases.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
            spec.modes.push_back(static_cast<int>(rng.uniform_int(1, n_max)));
        }
        Eigen::VectorXd raw(nx);
        for (int i = 0; i < nx; ++i) {
            const double x = static_cast<double>(i) / nx;
            double s = 0.0;
            for (int j = 0; j < waves; ++j)
                s += spec.amplitudes[j] *
                     std::sin(2.0 * std::numbers::pi * spec.modes[j] * x + spec.phases[j]);
            raw[i] = s;
        }
        spec.raw_min = raw.minCoeff();
        spec.raw_max = raw.maxCoeff();
        if (spec.raw_max - spec.raw_min < 1e-12) continue;  // degenerate draw: next seed
        Eigen::VectorXd values = (raw.array() - spec.raw_min) / (spec.raw_max - spec.raw_min);
        return SampledIC{std::move(spec), std::move(values)};
    }
}

Eigen::VectorXd sample_params(FamilyId family, uint64_t seed) {
    const FamilyInfo& info = family_info(family);
    Rng rng(seed, hash_tag("params"));
    Eigen::VectorXd p(info.param_count);
    p[0] = rng.uniform(0.9 * info.q_center, 1.1 * info.q_center);
    if (info.param_count > 1) p[1] = rng.uniform(0.9 * info.p_center, 1.1 * info.p_center);
    return p;
}

// ---------------------------------------------------------------------------
// Instances
// ---------------------------------------------------------------------------

Dataset::Dataset(FamilyId family, std::string split, uint64_t seed, double noise_gamma)
    : family_(family), split_(std::move(split)), seed_(seed), noise_gamma_(noise_gamma) {}

PdeInstance make_instance(FamilyId family, uint64_t seed, const SolverOptions& opts, bool solve) {
    PdeInstance inst;
    inst.family = family;
    inst.params = sample_params(family, seed);
    inst.expression = build_residual(family, inst.params);
    inst.u0 = sample_ic(seed, opts.nx).values;
    if (solve) inst.solution = solve_pde(family, inst.params, inst.u0, opts);
    return inst;
}

Dataset generate_dataset(FamilyId family, int count, uint64_t seed, const std::string& split,
                         const SolverOptions& opts, bool solve) {
    Dataset ds(family, split, seed, 0.0);
    Rng base(seed, hash_tag("dataset-" + split));
    for (int i = 0; i < count; ++i) {
        const uint64_t inst_seed = base.child(static_cast<uint64_t>(i)).engine()();
        ds.add(make_instance(family, inst_seed, opts, solve));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Noise
// ---------------------------------------------------------------------------

Eigen::MatrixXd add_noise(const Eigen::MatrixXd& labels, double gamma, uint64_t seed) {
    if (gamma < 0.0) throw ConfigError("noise gamma must be non-negative");
    if (gamma == 0.0) return labels;
    const double d_norm = labels.norm();
    if (d_norm == 0.0) throw DegenerateSignal("cannot scale noise against a zero signal");
    Rng rng(seed, hash_tag("noise"));
    Eigen::MatrixXd z(labels.rows(), labels.cols());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
    return labels + (gamma * d_norm / z.norm()) * z;
}

Dataset add_noise(const Dataset& clean, double gamma, uint64_t seed) {
    Dataset noisy(clean.family(), clean.split(), clean.seed(), gamma);
    Rng base(seed, hash_tag("noise-dataset"));
    for (size_t i = 0; i < clean.size(); ++i) {
        PdeInstance inst = clean.instance(i);
        if (inst.solution.size() > 0)
            inst.solution = add_noise(inst.solution, gamma, base.child(i).engine()());
        noisy.add(std::move(inst));
    }
    return noisy;
}

// ---------------------------------------------------------------------------
// Binary IO
// ---------------------------------------------------------------------------

namespace {

void write_u32(std::ofstream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t read_u32(std::ifstream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

}  // namespace

std::string manifest_path(const std::string& dataset_path) {
    auto dot = dataset_path.rfind('.');
    std::string stem = dot == std::string::npos ? dataset_path : dataset_path.substr(0, dot);
    return stem + ".json";
}

void save_dataset(const Dataset& ds, const std::string& path, const std::string& scenario_json) {
    const int nt = 64, nx = 128;
    const int param_count = family_info(ds.family()).param_count;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write("PIMF", 4);
    write_u32(out, 1);
    write_u32(out, static_cast<uint32_t>(ds.family()));
    write_u32(out, static_cast<uint32_t>(ds.size()));
    write_u32(out, nt);
    write_u32(out, nx);
    write_u32(out, static_cast<uint32_t>(param_count));

    json symbols = json::array();
    for (size_t i = 0; i < ds.size(); ++i) {
        const PdeInstance& inst = ds.instance(i);
        if (inst.params.size() != param_count) throw ShapeError("record param count mismatch");
        if (inst.u0.size() != nx) throw ShapeError("record u0 size mismatch");
        out.write(reinterpret_cast<const char*>(inst.params.data()),
                  static_cast<std::streamsize>(sizeof(double) * param_count));
        out.write(reinterpret_cast<const char*>(inst.u0.data()),
                  static_cast<std::streamsize>(sizeof(double) * nx));
        Eigen::MatrixXd sol = inst.solution;
        if (sol.size() == 0) sol = Eigen::MatrixXd::Zero(nt, nx);
        if (sol.rows() != nt || sol.cols() != nx) throw ShapeError("record solution shape");
        // time-major: row i holds the nx values at stamp t_i
        for (int r = 0; r < nt; ++r) {
            Eigen::RowVectorXd row = sol.row(r);
            out.write(reinterpret_cast<const char*>(row.data()),
                      static_cast<std::streamsize>(sizeof(double) * nx));
        }
        symbols.push_back(tokens_to_string(inst.expression.tokens));
    }
    if (!out) throw IoError("short write to '" + path + "'");

    json manifest{{"format", "pimf-manifest"},
                  {"version", 1},
                  {"family", family_info(ds.family()).name},
                  {"family_id", static_cast<int>(ds.family())},
                  {"split", ds.split()},
                  {"count", ds.size()},
                  {"grid", {nt, nx}},
                  {"noise_gamma", ds.noise_gamma()},
                  {"seed", ds.seed()},
                  {"scenario", json::parse(scenario_json)},
                  {"symbols", symbols}};
    std::ofstream mout(manifest_path(path));
    if (!mout) throw IoError("cannot write manifest for '" + path + "'");
    mout << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "PIMF", 4) != 0)
        throw IoError("'" + path + "' is not a PIMF dataset");
    const uint32_t version = read_u32(in);
    if (version != 1) throw IoError("unsupported PIMF version");
    const uint32_t family_id = read_u32(in);
    const uint32_t count = read_u32(in);
    const uint32_t nt = read_u32(in);
    const uint32_t nx = read_u32(in);
    const uint32_t param_count = read_u32(in);
    if (family_id >= kFamilyCount) throw IoError("bad family id in '" + path + "'");

    double gamma = 0.0;
    uint64_t seed = 0;
    std::string split = "unknown";
    {
        std::ifstream min(manifest_path(path));
        if (min) {
            json manifest = json::parse(min, nullptr, false);
            if (!manifest.is_discarded()) {
                gamma = manifest.value("noise_gamma", 0.0);
                seed = manifest.value("seed", 0ull);
                split = manifest.value("split", "unknown");
            }
        }
    }

    Dataset ds(static_cast<FamilyId>(family_id), split, seed, gamma);
    for (uint32_t i = 0; i < count; ++i) {
        PdeInstance inst;
        inst.family = static_cast<FamilyId>(family_id);
        inst.params.resize(param_count);
        in.read(reinterpret_cast<char*>(inst.params.data()),
                static_cast<std::streamsize>(sizeof(double) * param_count));
        inst.u0.resize(nx);
        in.read(reinterpret_cast<char*>(inst.u0.data()),
                static_cast<std::streamsize>(sizeof(double) * nx));
        inst.solution.resize(nt, nx);
        for (uint32_t r = 0; r < nt; ++r) {
            Eigen::RowVectorXd row(nx);
            in.read(reinterpret_cast<char*>(row.data()),
                    static_cast<std::streamsize>(sizeof(double) * nx));
            inst.solution.row(r) = row;
        }
        if (!in) throw IoError("truncated record in '" + path + "'");
        inst.expression = build_residual(inst.family, inst.params);
        ds.add(std::move(inst));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Label grids
// ---------------------------------------------------------------------------

LabelGrid sparse_label_grid(int nt_lab, int nx_lab) {
    if (nt_lab < 1 || nt_lab > 32 || 32 % nt_lab != 0)
        throw ConfigError("nt_lab must divide 32");
    if (nx_lab < 1 || nx_lab > 128 || 128 % nx_lab != 0)
        throw ConfigError("nx_lab must divide 128");
    LabelGrid g;
    for (int i = 0; i < nt_lab; ++i) g.t_idx.push_back(i * (64 / nt_lab));
    for (int j = 0; j < nx_lab; ++j) g.x_idx.push_back(j * (128 / nx_lab));
    return g;
}

LabelGrid partial_time_label_grid(int span_steps) {
    if (span_steps < 1 || span_steps > 32) throw ConfigError("span_steps must be in [1, 32]");
    LabelGrid g;
    for (int i = 0; i < span_steps; ++i) g.t_idx.push_back(2 * i);
    for (int j = 0; j < 128; ++j) g.x_idx.push_back(j);
    return g;
}

LabelGrid full_train_label_grid() { return partial_time_label_grid(32); }

std::vector<int> test_time_indices() {
    std::vector<int> idx;
    for (int i = 1; i < 64; i += 2) idx.push_back(i);
    return idx;
}

}  // namespace pimol
