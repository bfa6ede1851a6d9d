#include "pimol/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "pimol/rng.hpp"

namespace pimol {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
    if (embed_dim <= 0 || embed_dim % heads != 0)
        throw ConfigError("embed_dim must be a positive multiple of heads");
    if (periodic_features < 1) throw ConfigError("periodic_features must be >= 1");
    if (ic_samples <= 0 || data_patch <= 0 || ic_samples % data_patch != 0)
        throw ConfigError("ic_samples must be a positive multiple of data_patch");
    if (data_layers < 0 || symbol_layers < 0 || fusion_layers < 0 || decoder_layers < 1)
        throw ConfigError("invalid layer counts");
    if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be >= 1");
}

// ---------------------------------------------------------------------------
// Vocabulary for the symbol stream
// ---------------------------------------------------------------------------

namespace {

constexpr int kPadId = 0;
constexpr int kConstId = 15;
constexpr int kVocabSize = 16;

int op_token_id(OpCode op) { return 1 + static_cast<int>(op); }    // 1..9
int leaf_token_id(Channel c) { return 10 + static_cast<int>(c); }  // 10..14

}  // namespace

std::vector<SymTok> model_tokens(const TokenSeq& tokens) {
    std::vector<SymTok> out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        const Token& t = tokens[i];
        switch (t.kind) {
            case TokenKind::Operator:
                if (t.op == OpCode::Add && i + 2 < tokens.size() &&
                    tokens[i + 1].kind == TokenKind::Mantissa &&
                    tokens[i + 2].kind == TokenKind::Exponent) {
                    double v = decode_constant(tokens[i + 1].value, tokens[i + 2].value);
                    out.push_back(SymTok{kConstId, v});
                    i += 2;
                } else {
                    out.push_back(SymTok{op_token_id(t.op), 0.0});
                }
                break;
            case TokenKind::SolutionLeaf:
            case TokenKind::DerivativeLeaf:
                out.push_back(SymTok{leaf_token_id(t.leaf), 0.0});
                break;
            case TokenKind::Mantissa:
            case TokenKind::Exponent:
                throw VocabularyError("numeric token outside a constant triple");
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parameter construction
// ---------------------------------------------------------------------------

namespace {

struct SpecBuilder {
    std::vector<TensorSpec> specs;
    Eigen::Index total = 0;

    void add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        specs.push_back(TensorSpec{name, rows, cols, total});
        total += rows * cols;
    }

    void add_attention(const std::string& prefix, int embed) {
        for (const char* w : {"wq", "wk", "wv", "wo"}) add(prefix + "." + w, embed, embed);
        for (const char* b : {"bq", "bk", "bv", "bo"}) add(prefix + "." + b, 1, embed);
    }

    void add_block(const std::string& prefix, int embed, int hidden) {
        add_attention(prefix + ".attn", embed);
        add(prefix + ".ln1.g", 1, embed);
        add(prefix + ".ln1.b", 1, embed);
        add(prefix + ".ln2.g", 1, embed);
        add(prefix + ".ln2.b", 1, embed);
        add(prefix + ".mlp.w1", embed, hidden);
        add(prefix + ".mlp.b1", 1, hidden);
        add(prefix + ".mlp.w2", hidden, embed);
        add(prefix + ".mlp.b2", 1, embed);
    }

    void add_cross_block(const std::string& prefix, int embed, int hidden) {
        add_attention(prefix + ".attn", embed);
        add(prefix + ".lnq.g", 1, embed);
        add(prefix + ".lnq.b", 1, embed);
        add(prefix + ".lnkv.g", 1, embed);
        add(prefix + ".lnkv.b", 1, embed);
        add(prefix + ".ln2.g", 1, embed);
        add(prefix + ".ln2.b", 1, embed);
        add(prefix + ".mlp.w1", embed, hidden);
        add(prefix + ".mlp.b1", 1, hidden);
        add(prefix + ".mlp.w2", hidden, embed);
        add(prefix + ".mlp.b2", 1, embed);
    }
};

std::vector<TensorSpec> build_specs(const ModelConfig& cfg) {
    const int e = cfg.embed_dim;
    const int h = cfg.embed_dim * cfg.mlp_ratio;
    SpecBuilder b;
    b.add("query.w", cfg.query_features(), e);
    b.add("query.b", 1, e);
    b.add("data.patch_w", cfg.data_patch, e);
    b.add("data.patch_b", 1, e);
    b.add("data.pos", cfg.data_tokens(), e);
    for (int i = 0; i < cfg.data_layers; ++i) b.add_block("data.block" + std::to_string(i), e, h);
    b.add("sym.embed", kVocabSize, e);
    b.add("sym.const_dir", 1, e);
    b.add("sym.pos", cfg.max_symbol_len, e);
    for (int i = 0; i < cfg.symbol_layers; ++i) b.add_block("sym.block" + std::to_string(i), e, h);
    for (int i = 0; i < cfg.fusion_layers; ++i) b.add_block("fus.block" + std::to_string(i), e, h);
    for (int i = 0; i < cfg.decoder_layers; ++i)
        b.add_cross_block("dec.block" + std::to_string(i), e, h);
    b.add("dec.final_ln.g", 1, e);
    b.add("dec.final_ln.b", 1, e);
    b.add("head.w", e, 1);
    b.add("head.b", 1, 1);
    return b.specs;
}

bool is_ln_gain(const std::string& name) {
    auto n = name.size();
    return n > 2 && name.compare(n - 2, 2, ".g") == 0;
}

bool is_zero_init(const std::string& name) {
    // biases and layer-norm shifts start at zero
    auto pos = name.rfind('.');
    return pos != std::string::npos && name[pos + 1] == 'b';
}

bool is_table(const std::string& name) {
    return name == "sym.embed" || name == "sym.pos" || name == "sym.const_dir" ||
           name == "data.pos";
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.cfg_ = cfg;
    p.specs_ = build_specs(cfg);
    Eigen::Index total = 0;
    for (size_t i = 0; i < p.specs_.size(); ++i) {
        p.index_[p.specs_[i].name] = i;
        total += p.specs_[i].rows * p.specs_[i].cols;
    }
    p.flat_.resize(total);

    // truncated-normal, variance scaled to the tensor's fan; at toy widths a
    // flat sigma leaves the attention logits too small to ever train
    Rng rng(cfg.seed, hash_tag("model-init"));
    for (const TensorSpec& s : p.specs_) {
        auto block = p.flat_.segment(s.offset, s.rows * s.cols);
        if (is_ln_gain(s.name)) {
            block.setOnes();
        } else if (is_zero_init(s.name)) {
            block.setZero();
        } else {
            const double sigma =
                is_table(s.name)
                    ? 1.0 / std::sqrt(static_cast<double>(s.cols))
                    : std::sqrt(2.0 / static_cast<double>(s.rows + s.cols));
            for (Eigen::Index i = 0; i < block.size(); ++i)
                block[i] = rng.truncated_normal(sigma);
        }
    }
    return p;
}

Eigen::Map<Eigen::MatrixXd> ModelParams::view(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter tensor '" + name + "'");
    const TensorSpec& s = specs_[it->second];
    return {flat_.data() + s.offset, s.rows, s.cols};
}

Eigen::Map<const Eigen::MatrixXd> ModelParams::view(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter tensor '" + name + "'");
    const TensorSpec& s = specs_[it->second];
    return {flat_.data() + s.offset, s.rows, s.cols};
}

// ---------------------------------------------------------------------------
// Checkpoint IO
// ---------------------------------------------------------------------------

namespace {

json config_to_json(const ModelConfig& c) {
    return json{{"embed_dim", c.embed_dim},
                {"heads", c.heads},
                {"ic_samples", c.ic_samples},
                {"data_patch", c.data_patch},
                {"data_layers", c.data_layers},
                {"symbol_layers", c.symbol_layers},
                {"fusion_layers", c.fusion_layers},
                {"decoder_layers", c.decoder_layers},
                {"periodic_features", c.periodic_features},
                {"mlp_ratio", c.mlp_ratio},
                {"max_symbol_len", c.max_symbol_len},
                {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.embed_dim = j.at("embed_dim");
    c.heads = j.at("heads");
    c.ic_samples = j.at("ic_samples");
    c.data_patch = j.at("data_patch");
    c.data_layers = j.at("data_layers");
    c.symbol_layers = j.at("symbol_layers");
    c.fusion_layers = j.at("fusion_layers");
    c.decoder_layers = j.at("decoder_layers");
    c.periodic_features = j.at("periodic_features");
    c.mlp_ratio = j.at("mlp_ratio");
    c.max_symbol_len = j.at("max_symbol_len");
    c.seed = j.at("seed");
    return c;
}

}  // namespace

ModelParams load_params_blob(const ModelConfig& cfg, std::vector<TensorSpec> specs,
                             Eigen::VectorXd flat) {
    ModelParams p;
    p.cfg_ = cfg;
    p.specs_ = std::move(specs);
    for (size_t i = 0; i < p.specs_.size(); ++i) p.index_[p.specs_[i].name] = i;
    p.flat_ = std::move(flat);
    return p;
}

void save_checkpoint(const ModelParams& params, const std::string& path, int64_t iteration,
                     const std::vector<std::string>& train_families) {
    json tensors = json::array();
    for (const TensorSpec& s : params.specs())
        tensors.push_back(
            json{{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}, {"offset", s.offset}});
    json header{{"format", "pimol-checkpoint"},
                {"version", 1},
                {"config", config_to_json(params.config())},
                {"iteration", iteration},
                {"train_families", train_families},
                {"param_count", params.count()},
                {"tensors", tensors}};
    std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    uint32_t len = static_cast<uint32_t>(hs.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    out.write(reinterpret_cast<const char*>(params.flat().data()),
              static_cast<std::streamsize>(sizeof(double) * params.count()));
    if (!out) throw IoError("short write to '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    std::string hs(len, '\0');
    in.read(hs.data(), len);
    if (!in) throw IoError("truncated checkpoint header in '" + path + "'");
    json header = json::parse(hs, nullptr, false);
    if (header.is_discarded() || header.value("format", "") != "pimol-checkpoint")
        throw IoError("'" + path + "' is not a checkpoint file");

    ModelConfig cfg = config_from_json(header.at("config"));
    std::vector<TensorSpec> specs;
    for (const auto& t : header.at("tensors"))
        specs.push_back(TensorSpec{t.at("name"), t.at("rows"), t.at("cols"), t.at("offset")});
    Eigen::Index count = header.at("param_count");
    Eigen::VectorXd flat(count);
    in.read(reinterpret_cast<char*>(flat.data()),
            static_cast<std::streamsize>(sizeof(double) * count));
    if (!in) throw IoError("truncated checkpoint blob in '" + path + "'");

    Checkpoint ck{load_params_blob(cfg, std::move(specs), std::move(flat)),
                  header.at("iteration"),
                  {}};
    for (const auto& f : header.at("train_families")) ck.train_families.push_back(f);
    return ck;
}

// ---------------------------------------------------------------------------
// Bound model
// ---------------------------------------------------------------------------

BoundModel::BoundModel(Graph& g, const ModelParams& params)
    : g_(&g), source_(&params), cfg_(params.config()) {
    leaves_.reserve(params.specs().size());
    for (const TensorSpec& s : params.specs()) {
        Eigen::Map<const Eigen::MatrixXd> m(params.flat().data() + s.offset, s.rows, s.cols);
        Var v = g.leaf(m.array());
        leaves_.push_back(v);
        by_name_.emplace(s.name, v);
    }
}

Var BoundModel::p(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ConfigError("unknown parameter tensor '" + name + "'");
    return it->second;
}

Eigen::VectorXd BoundModel::flatten_grads(const std::vector<Var>& adjoints) const {
    if (adjoints.size() != leaves_.size()) throw ShapeError("adjoint count mismatch");
    Eigen::VectorXd flat = Eigen::VectorXd::Zero(source_->count());
    const auto& specs = source_->specs();
    for (size_t i = 0; i < specs.size(); ++i) {
        Eigen::Map<Eigen::MatrixXd> dst(flat.data() + specs[i].offset, specs[i].rows,
                                        specs[i].cols);
        dst = adjoints[i].value().matrix();
    }
    return flat;
}

Eigen::VectorXd BoundModel::flatten_grads(const std::vector<Array>& adjoints) const {
    if (adjoints.size() != leaves_.size()) throw ShapeError("adjoint count mismatch");
    Eigen::VectorXd flat = Eigen::VectorXd::Zero(source_->count());
    const auto& specs = source_->specs();
    for (size_t i = 0; i < specs.size(); ++i) {
        Eigen::Map<Eigen::MatrixXd> dst(flat.data() + specs[i].offset, specs[i].rows,
                                        specs[i].cols);
        dst = adjoints[i].matrix();
    }
    return flat;
}

Var BoundModel::mlp(const std::string& prefix, Var h) const {
    const auto r = h.rows();
    Var a = matmul(h, p(prefix + ".w1")) + broadcast_row(p(prefix + ".b1"), r);
    Var z = tanh(a);
    return matmul(z, p(prefix + ".w2")) + broadcast_row(p(prefix + ".b2"), r);
}

Var BoundModel::attention(const std::string& prefix, Var q_rows, Var kv,
                          const Array* mask) const {
    const int d = cfg_.embed_dim / cfg_.heads;
    const auto r = q_rows.rows();
    const auto l = kv.rows();
    Var q = matmul(q_rows, p(prefix + ".wq")) + broadcast_row(p(prefix + ".bq"), r);
    Var k = matmul(kv, p(prefix + ".wk")) + broadcast_row(p(prefix + ".bk"), l);
    Var v = matmul(kv, p(prefix + ".wv")) + broadcast_row(p(prefix + ".bv"), l);

    Var mask_row;  // additive 0 / -1e9 pre-softmax logits
    if (mask != nullptr) mask_row = g_->leaf(*mask);

    std::vector<Var> heads;
    heads.reserve(cfg_.heads);
    for (int hidx = 0; hidx < cfg_.heads; ++hidx) {
        Var qh = slice_cols(q, hidx * d, d);
        Var kh = slice_cols(k, hidx * d, d);
        Var vh = slice_cols(v, hidx * d, d);
        Var s = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(d)));
        if (mask_row.valid()) s = s + broadcast_row(mask_row, r);
        heads.push_back(matmul(softmax_rows(s), vh));
    }
    Var o = concat_cols(heads);
    return matmul(o, p(prefix + ".wo")) + broadcast_row(p(prefix + ".bo"), r);
}

Var BoundModel::self_block(const std::string& prefix, Var h, const Array* mask) const {
    Var hn = layer_norm_rows(h, p(prefix + ".ln1.g"), p(prefix + ".ln1.b"));
    h = h + attention(prefix + ".attn", hn, hn, mask);
    Var h2 = layer_norm_rows(h, p(prefix + ".ln2.g"), p(prefix + ".ln2.b"));
    return h + mlp(prefix + ".mlp", h2);
}

Var BoundModel::cross_block(const std::string& prefix, Var q, Var ctx, const Array* mask) const {
    Var qn = layer_norm_rows(q, p(prefix + ".lnq.g"), p(prefix + ".lnq.b"));
    Var kvn = layer_norm_rows(ctx, p(prefix + ".lnkv.g"), p(prefix + ".lnkv.b"));
    q = q + attention(prefix + ".attn", qn, kvn, mask);
    Var q2 = layer_norm_rows(q, p(prefix + ".ln2.g"), p(prefix + ".ln2.b"));
    return q + mlp(prefix + ".mlp", q2);
}

Var BoundModel::embed_queries(Var t, Var x) const {
    if (t.cols() != 1 || x.cols() != 1 || t.rows() != x.rows())
        throw ShapeError("embed_queries expects matching M x 1 coordinates");
    // wrap x to [0,1): x = 0 and x = 1 produce bit-identical features
    Var xw = x - g_->leaf(x.value().floor());
    std::vector<Var> feats;
    feats.reserve(cfg_.query_features());
    feats.push_back(t);
    for (int k = 1; k <= cfg_.periodic_features; ++k) {
        Var phase = scale(xw, 2.0 * std::numbers::pi * k);
        feats.push_back(sin(phase));
        feats.push_back(cos(phase));
    }
    Var f = concat_cols(feats);
    return matmul(f, p("query.w")) + broadcast_row(p("query.b"), t.rows());
}

Var BoundModel::encode_data_item(const Eigen::VectorXd& u0) const {
    if (u0.size() != cfg_.ic_samples)
        throw ShapeError("expected " + std::to_string(cfg_.ic_samples) + " IC samples, got " +
                         std::to_string(u0.size()));
    Var row = g_->leaf(u0.transpose().array());  // 1 x ic_samples
    std::vector<Var> patches;
    const int n = cfg_.data_tokens();
    patches.reserve(n);
    for (int i = 0; i < n; ++i)
        patches.push_back(slice_cols(row, i * cfg_.data_patch, cfg_.data_patch));
    Var x = concat_rows(patches);  // n x patch
    Var h = matmul(x, p("data.patch_w")) + broadcast_row(p("data.patch_b"), n) + p("data.pos");
    for (int i = 0; i < cfg_.data_layers; ++i)
        h = self_block("data.block" + std::to_string(i), h, nullptr);
    return h;
}

Var BoundModel::encode_symbols_item(const std::vector<SymTok>& toks, int pad_to,
                                    Array* mask_out) const {
    if (static_cast<int>(toks.size()) > cfg_.max_symbol_len || pad_to > cfg_.max_symbol_len)
        throw VocabularyError("symbol sequence longer than max_symbol_len");
    if (pad_to < static_cast<int>(toks.size())) throw ShapeError("pad_to below sequence length");
    Var table = p("sym.embed");
    std::vector<Var> rows;
    rows.reserve(pad_to);
    for (int i = 0; i < pad_to; ++i) {
        if (i < static_cast<int>(toks.size())) {
            const SymTok& tk = toks[i];
            if (tk.id < 0 || tk.id >= kVocabSize) throw VocabularyError("token id out of range");
            Var row = slice_rows(table, tk.id, 1);
            if (tk.id == kConstId) row = row + scale(p("sym.const_dir"), tk.value);
            rows.push_back(row);
        } else {
            rows.push_back(slice_rows(table, kPadId, 1));
        }
    }
    Var h = concat_rows(rows) + slice_rows(p("sym.pos"), 0, pad_to);
    Array mask = Array::Zero(1, pad_to);
    for (int i = static_cast<int>(toks.size()); i < pad_to; ++i) mask(0, i) = -1e9;
    if (mask_out != nullptr) *mask_out = mask;
    for (int i = 0; i < cfg_.symbol_layers; ++i)
        h = self_block("sym.block" + std::to_string(i), h, &mask);
    return h;
}

Var BoundModel::fuse_item(Var data_tokens, Var symbol_tokens, const Array& symbol_mask,
                          Array* full_mask_out) const {
    std::vector<Var> parts{data_tokens, symbol_tokens};
    Var ctx = concat_rows(parts);
    Array mask = Array::Zero(1, ctx.rows());
    mask.rightCols(symbol_mask.cols()) = symbol_mask;
    if (full_mask_out != nullptr) *full_mask_out = mask;
    for (int i = 0; i < cfg_.fusion_layers; ++i)
        ctx = self_block("fus.block" + std::to_string(i), ctx, &mask);
    return ctx;
}

void BoundModel::encode(const std::vector<ModelItem>& items) {
    contexts_.clear();
    masks_.clear();
    int pad_to = 1;
    std::vector<std::vector<SymTok>> toks;
    toks.reserve(items.size());
    for (const ModelItem& it : items) {
        toks.push_back(model_tokens(*it.symbols));
        pad_to = std::max(pad_to, static_cast<int>(toks.back().size()));
    }
    for (size_t b = 0; b < items.size(); ++b) {
        Var data = encode_data_item(*items[b].u0);
        Array sym_mask;
        Var sym = encode_symbols_item(toks[b], pad_to, &sym_mask);
        Array full_mask;
        Var ctx = fuse_item(data, sym, sym_mask, &full_mask);
        contexts_.push_back(ctx);
        masks_.push_back(std::move(full_mask));
    }
}

std::vector<Var> BoundModel::query(Var t, Var x, const std::vector<int>* items) const {
    if (contexts_.empty()) throw ShapeError("query before encode");
    std::vector<int> all;
    if (items == nullptr) {
        all.resize(contexts_.size());
        for (size_t b = 0; b < contexts_.size(); ++b) all[b] = static_cast<int>(b);
        items = &all;
    }
    Var q0 = embed_queries(t, x);
    std::vector<Var> out;
    out.reserve(items->size());
    for (int b : *items) {
        if (b < 0 || b >= static_cast<int>(contexts_.size()))
            throw ShapeError("query item index out of range");
        Var q = q0;
        for (int i = 0; i < cfg_.decoder_layers; ++i)
            q = cross_block("dec.block" + std::to_string(i), q, contexts_[b],
                            &masks_[static_cast<size_t>(b)]);
        Var qn = layer_norm_rows(q, p("dec.final_ln.g"), p("dec.final_ln.b"));
        out.push_back(matmul(qn, p("head.w")) + broadcast_row(p("head.b"), q.rows()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convenience evaluation
// ---------------------------------------------------------------------------

Array forward_values(const ModelParams& params, const std::vector<ModelItem>& items,
                     const Eigen::VectorXd& t, const Eigen::VectorXd& x) {
    Graph g;
    BoundModel bm(g, params);
    bm.encode(items);
    Var tv = g.leaf(t.array());
    Var xv = g.leaf(x.array());
    std::vector<Var> rows = bm.query(tv, xv);
    Array u(static_cast<Eigen::Index>(items.size()), t.size());
    for (size_t b = 0; b < rows.size(); ++b) u.row(b) = rows[b].value().col(0).transpose();
    return u;
}

Eigen::MatrixXd predict_grid(const ModelParams& params, const ModelItem& item, int nt, int nx,
                             int chunk) {
    Eigen::MatrixXd out(nt, nx);
    const int total = nt * nx;
    for (int start = 0; start < total; start += chunk) {
        const int n = std::min(chunk, total - start);
        Eigen::VectorXd t(n), x(n);
        for (int i = 0; i < n; ++i) {
            int idx = start + i;
            t[i] = static_cast<double>(idx / nx) / nt;
            x[i] = static_cast<double>(idx % nx) / nx;
        }
        Array u = forward_values(params, {item}, t, x);
        for (int i = 0; i < n; ++i) {
            int idx = start + i;
            out(idx / nx, idx % nx) = u(0, i);
        }
    }
    return out;
}

}  // namespace pimol
