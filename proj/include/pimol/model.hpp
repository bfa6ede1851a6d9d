#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "pimol/graph.hpp"
#include "pimol/symbolic.hpp"

namespace pimol {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ModelConfig {
    int embed_dim = 64;         // N_emb
    int heads = 4;
    int ic_samples = 128;       // IC samples per item
    int data_patch = 8;         // non-overlapping patch size over the IC samples
    int data_layers = 2;        // self-attention depth per stream
    int symbol_layers = 2;
    int fusion_layers = 1;
    int decoder_layers = 2;     // cross-attention depth
    int periodic_features = 4;  // K_per harmonics in the query embedding
    int mlp_ratio = 4;
    int max_symbol_len = 32;    // model tokens after constant collapsing
    uint64_t seed = 0;

    int data_tokens() const { return ic_samples / data_patch; }
    int query_features() const { return 1 + 2 * periodic_features; }
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct TensorSpec {
    std::string name;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    Eigen::Index offset = 0;  // into the flat vector
};

/// All learnable weights, stored flat; named sub-tensors are views aliasing
/// the same memory. Construction is deterministic in (config, seed).
class ModelParams {
  public:
    static ModelParams init(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }
    const std::vector<TensorSpec>& specs() const { return specs_; }
    Eigen::Index count() const { return flat_.size(); }

    Eigen::VectorXd& flat() { return flat_; }
    const Eigen::VectorXd& flat() const { return flat_; }

    Eigen::Map<Eigen::MatrixXd> view(const std::string& name);
    Eigen::Map<const Eigen::MatrixXd> view(const std::string& name) const;

  private:
    friend ModelParams load_params_blob(const ModelConfig&, std::vector<TensorSpec>,
                                        Eigen::VectorXd);
    ModelConfig cfg_;
    std::vector<TensorSpec> specs_;
    std::unordered_map<std::string, size_t> index_;
    Eigen::VectorXd flat_;
};

// ---------------------------------------------------------------------------
// Checkpoints: JSON header (length-prefixed) + little-endian f64 blob
// ---------------------------------------------------------------------------

struct Checkpoint {
    ModelParams params;
    int64_t iteration = 0;
    std::vector<std::string> train_families;
};

void save_checkpoint(const ModelParams& params, const std::string& path, int64_t iteration = 0,
                     const std::vector<std::string>& train_families = {});
Checkpoint load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Symbol-stream tokens as seen by the encoder
// ---------------------------------------------------------------------------

/// One (add, N, E) constant triple collapses to a single value-carrying token;
/// every other token maps to a fixed vocabulary id.
struct SymTok {
    int id = 0;
    double value = 0.0;  // constant payload, 0 otherwise
};

std::vector<SymTok> model_tokens(const TokenSeq& tokens);

// ---------------------------------------------------------------------------
// Model bound to a graph
// ---------------------------------------------------------------------------

/// One batch item presented to the network.
struct ModelItem {
    const Eigen::VectorXd* u0 = nullptr;  // ic_samples values on the spatial grid
    const TokenSeq* symbols = nullptr;
};

/// Parameters materialized as leaf vars on a graph, plus the per-item encoded
/// context. `query` may be called repeatedly with different coordinate sets;
/// encoders run once per bind.
class BoundModel {
  public:
    BoundModel(Graph& g, const ModelParams& params);

    /// Run data/symbol encoders and fusion for each item.
    void encode(const std::vector<ModelItem>& items);

    /// Evaluate encoded items at shared coordinates (t, x are M x 1).
    /// Returns one M x 1 output per item. Pointwise in the query index.
    /// `items` restricts evaluation to a subset of the encoded batch.
    std::vector<Var> query(Var t, Var x, const std::vector<int>* items = nullptr) const;

    /// Query embedding: [t, sin(2 pi k x), cos(2 pi k x)]_k=1..K -> linear.
    /// x enters through period-1 features only (wrapped to [0,1)).
    Var embed_queries(Var t, Var x) const;

    Var encode_data_item(const Eigen::VectorXd& u0) const;
    Var encode_symbols_item(const std::vector<SymTok>& toks, int pad_to, Array* mask_out) const;
    Var fuse_item(Var data_tokens, Var symbol_tokens, const Array& symbol_mask,
                  Array* full_mask_out) const;

    Graph& graph() const { return *g_; }
    int batch_size() const { return static_cast<int>(contexts_.size()); }
    const std::vector<Var>& param_leaves() const { return leaves_; }

    /// Assemble adjoints (as returned by grad / grad_values over
    /// param_leaves) into a flat gradient aligned with ModelParams::flat().
    Eigen::VectorXd flatten_grads(const std::vector<Var>& adjoints) const;
    Eigen::VectorXd flatten_grads(const std::vector<Array>& adjoints) const;

    Var p(const std::string& name) const;

  private:
    Var self_block(const std::string& prefix, Var h, const Array* mask) const;
    Var cross_block(const std::string& prefix, Var q, Var ctx, const Array* mask) const;
    Var attention(const std::string& prefix, Var q_rows, Var kv, const Array* mask) const;
    Var mlp(const std::string& prefix, Var h) const;

    Graph* g_;
    const ModelParams* source_;
    ModelConfig cfg_;
    std::vector<Var> leaves_;  // aligned with source_->specs()
    std::unordered_map<std::string, Var> by_name_;
    std::vector<Var> contexts_;
    std::vector<Array> masks_;
};

// ---------------------------------------------------------------------------
// Convenience evaluation (fresh scratch graphs, no recording kept)
// ---------------------------------------------------------------------------

/// Forward pass values: U(b, m) for shared coordinates.
Array forward_values(const ModelParams& params, const std::vector<ModelItem>& items,
                     const Eigen::VectorXd& t, const Eigen::VectorXd& x);

/// Predict one item on the full nt x nx grid (t_i = i/nt, x_j = j/nx),
/// evaluated in query chunks to bound memory.
Eigen::MatrixXd predict_grid(const ModelParams& params, const ModelItem& item, int nt, int nx,
                             int chunk = 2048);

}  // namespace pimol
