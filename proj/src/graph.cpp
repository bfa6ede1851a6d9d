#include "pimol/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pimol {

const Array& Var::value() const { return graph->node(id).value; }

Var Graph::leaf(Array value) { return emit(Op::Leaf, {}, std::move(value)); }

Var Graph::emit(Op op, std::vector<int32_t> in, Array value, double s, int64_t p0, int64_t p1) {
    Node n;
    n.op = op;
    n.in = std::move(in);
    n.s = s;
    n.p0 = p0;
    n.p1 = p1;
    n.value = std::move(value);
    value_bytes_ += sizeof(double) * static_cast<size_t>(n.value.size());
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

namespace {

Graph* same_graph(Var a, Var b) {
    if (!a.valid() || !b.valid() || a.graph != b.graph)
        throw ShapeError("operands must live on the same graph");
    return a.graph;
}

void check_same_shape(const Var& a, const Var& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError(std::string(what) + ": shapes " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
}

Var zeros_like(Var a) { return a.graph->leaf(Array::Zero(a.rows(), a.cols())); }

}  // namespace

// ---------------------------------------------------------------------------
// Primitive emission
// ---------------------------------------------------------------------------

Var operator+(Var a, Var b) {
    Graph* g = same_graph(a, b);
    check_same_shape(a, b, "add");
    return g->emit(Op::Add, {a.id, b.id}, a.value() + b.value());
}

Var operator-(Var a, Var b) {
    Graph* g = same_graph(a, b);
    check_same_shape(a, b, "sub");
    return g->emit(Op::Sub, {a.id, b.id}, a.value() - b.value());
}

Var operator*(Var a, Var b) {
    Graph* g = same_graph(a, b);
    check_same_shape(a, b, "mul");
    return g->emit(Op::Mul, {a.id, b.id}, a.value() * b.value());
}

Var operator/(Var a, Var b) {
    Graph* g = same_graph(a, b);
    check_same_shape(a, b, "div");
    return g->emit(Op::Div, {a.id, b.id}, a.value() / b.value());
}

Var operator-(Var a) { return a.graph->emit(Op::Neg, {a.id}, -a.value()); }
Var sin(Var a) { return a.graph->emit(Op::Sin, {a.id}, a.value().sin()); }
Var cos(Var a) { return a.graph->emit(Op::Cos, {a.id}, a.value().cos()); }
Var exp(Var a) { return a.graph->emit(Op::Exp, {a.id}, a.value().exp()); }
Var log(Var a) { return a.graph->emit(Op::Log, {a.id}, a.value().log()); }
Var tanh(Var a) { return a.graph->emit(Op::Tanh, {a.id}, a.value().tanh()); }
Var sqrt(Var a) { return a.graph->emit(Op::Sqrt, {a.id}, a.value().sqrt()); }

Var pow(Var a, Var b) {
    Graph* g = same_graph(a, b);
    check_same_shape(a, b, "pow");
    Array v = a.value().binaryExpr(b.value(), [](double x, double y) { return std::pow(x, y); });
    return g->emit(Op::Pow, {a.id, b.id}, std::move(v));
}

Var matmul(Var a, Var b) {
    Graph* g = same_graph(a, b);
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.rows()));
    return g->emit(Op::Matmul, {a.id, b.id}, (a.value().matrix() * b.value().matrix()).array());
}

Var transpose(Var a) { return a.graph->emit(Op::Transpose, {a.id}, a.value().transpose()); }

Var row_sum(Var a) {
    Array v = a.value().rowwise().sum();
    return a.graph->emit(Op::RowSum, {a.id}, std::move(v));
}

Var col_sum(Var a) {
    Array v = a.value().colwise().sum();
    return a.graph->emit(Op::ColSum, {a.id}, std::move(v));
}

Var sum(Var a) {
    return a.graph->emit(Op::Sum, {a.id}, Array::Constant(1, 1, a.value().sum()));
}

Var broadcast_row(Var a, Eigen::Index rows) {
    if (a.rows() != 1) throw ShapeError("broadcast_row expects a 1 x c operand");
    Array v = a.value().replicate(rows, 1);
    return a.graph->emit(Op::BroadcastRow, {a.id}, std::move(v), 0.0, rows);
}

Var broadcast_col(Var a, Eigen::Index cols) {
    if (a.cols() != 1) throw ShapeError("broadcast_col expects an r x 1 operand");
    Array v = a.value().replicate(1, cols);
    return a.graph->emit(Op::BroadcastCol, {a.id}, std::move(v), 0.0, cols);
}

Var broadcast_scalar(Var a, Eigen::Index rows, Eigen::Index cols) {
    if (a.size() != 1) throw ShapeError("broadcast_scalar expects a 1 x 1 operand");
    return a.graph->emit(Op::BroadcastScalar, {a.id}, Array::Constant(rows, cols, a.value()(0, 0)),
                         0.0, rows, cols);
}

Var scale(Var a, double s) { return a.graph->emit(Op::Scale, {a.id}, a.value() * s, s); }
Var add_scalar(Var a, double s) { return a.graph->emit(Op::AddScalar, {a.id}, a.value() + s, s); }

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows of zero parts");
    Graph* g = parts[0].graph;
    Eigen::Index rows = 0, cols = parts[0].cols();
    std::vector<int32_t> in;
    for (const Var& p : parts) {
        if (p.graph != g) throw ShapeError("concat parts on different graphs");
        if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
        rows += p.rows();
        in.push_back(p.id);
    }
    Array v(rows, cols);
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        v.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    return g->emit(Op::ConcatRows, std::move(in), std::move(v));
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols of zero parts");
    Graph* g = parts[0].graph;
    Eigen::Index cols = 0, rows = parts[0].rows();
    std::vector<int32_t> in;
    for (const Var& p : parts) {
        if (p.graph != g) throw ShapeError("concat parts on different graphs");
        if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch");
        cols += p.cols();
        in.push_back(p.id);
    }
    Array v(rows, cols);
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        v.middleCols(at, p.cols()) = p.value();
        at += p.cols();
    }
    return g->emit(Op::ConcatCols, std::move(in), std::move(v));
}

Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count) {
    if (begin < 0 || count < 0 || begin + count > a.rows()) throw ShapeError("slice_rows bounds");
    Array v = a.value().middleRows(begin, count);
    return a.graph->emit(Op::SliceRows, {a.id}, std::move(v), 0.0, begin, count);
}

Var slice_cols(Var a, Eigen::Index begin, Eigen::Index count) {
    if (begin < 0 || count < 0 || begin + count > a.cols()) throw ShapeError("slice_cols bounds");
    Array v = a.value().middleCols(begin, count);
    return a.graph->emit(Op::SliceCols, {a.id}, std::move(v), 0.0, begin, count);
}

Var pad_rows(Var a, Eigen::Index begin, Eigen::Index total) {
    if (begin < 0 || begin + a.rows() > total) throw ShapeError("pad_rows bounds");
    Array v = Array::Zero(total, a.cols());
    v.middleRows(begin, a.rows()) = a.value();
    return a.graph->emit(Op::PadRows, {a.id}, std::move(v), 0.0, begin, total);
}

Var pad_cols(Var a, Eigen::Index begin, Eigen::Index total) {
    if (begin < 0 || begin + a.cols() > total) throw ShapeError("pad_cols bounds");
    Array v = Array::Zero(a.rows(), total);
    v.middleCols(begin, a.cols()) = a.value();
    return a.graph->emit(Op::PadCols, {a.id}, std::move(v), 0.0, begin, total);
}

Var quantize(Var a, Precision p) {
    Array v = a.value().unaryExpr([p](double x) { return quantize_value(x, p); });
    return a.graph->emit(Op::Quantize, {a.id}, std::move(v), 0.0, static_cast<int64_t>(p));
}

Var detach(Var a) { return a.graph->emit(Op::Detach, {a.id}, a.value()); }

// ---------------------------------------------------------------------------
// Composites
// ---------------------------------------------------------------------------

Var square(Var a) { return a * a; }

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Var row_mean(Var a) { return scale(row_sum(a), 1.0 / static_cast<double>(a.cols())); }

Var softmax_rows(Var a) {
    // constant shift; softmax is invariant to it, so derivatives stay exact
    Var shift = a.graph->leaf(a.value().rowwise().maxCoeff());
    Var e = exp(a - broadcast_col(shift, a.cols()));
    return e / broadcast_col(row_sum(e), a.cols());
}

Var layer_norm_rows(Var x, Var gain, Var bias) {
    if (gain.rows() != 1 || bias.rows() != 1 || gain.cols() != x.cols() || bias.cols() != x.cols())
        throw ShapeError("layer_norm_rows: affine params must be 1 x cols");
    const Eigen::Index c = x.cols();
    const Eigen::Index r = x.rows();
    Var centered = x - broadcast_col(row_mean(x), c);
    Var variance = row_mean(square(centered));
    Var inv = x.graph->constant_like(1.0, r, 1) / sqrt(add_scalar(variance, 1e-5));
    Var normalized = centered * broadcast_col(inv, c);
    return normalized * broadcast_row(gain, r) + broadcast_row(bias, r);
}

// ---------------------------------------------------------------------------
// Forward-mode sweep
// ---------------------------------------------------------------------------

std::vector<Var> jvp_sweep(std::span<const Var> outputs, std::span<const std::pair<Var, Var>> seeds) {
    if (outputs.empty()) return {};
    Graph* g = outputs[0].graph;
    ++g->jvp_sweeps_;

    int32_t hi = -1;
    for (const Var& o : outputs) {
        if (o.graph != g) throw ShapeError("jvp outputs on different graphs");
        hi = std::max(hi, o.id);
    }
    int32_t lo = hi;
    std::vector<int32_t> tan(static_cast<size_t>(hi) + 1, -1);
    for (const auto& [input, tangent] : seeds) {
        if (input.graph != g || tangent.graph != g) throw ShapeError("jvp seeds on wrong graph");
        check_same_shape(input, tangent, "jvp seed");
        if (input.id <= hi) {
            tan[input.id] = tangent.id;
            lo = std::min(lo, input.id);
        }
    }

    auto tv = [&](int32_t id) { return Var{g, tan[id]}; };

    for (int32_t id = lo; id <= hi; ++id) {
        const Node& n = g->node(id);
        if (n.op == Op::Leaf || n.op == Op::Detach) continue;
        if (tan[id] >= 0) continue;  // seeded directly
        bool any = false;
        for (int32_t i : n.in) any = any || tan[i] >= 0;
        if (!any) continue;

        Var out{g, id};
        Var a{g, n.in[0]};
        const bool ta = tan[n.in[0]] >= 0;
        Var t;
        switch (n.op) {
            case Op::Add: {
                const bool tb = tan[n.in[1]] >= 0;
                t = ta && tb ? tv(n.in[0]) + tv(n.in[1]) : (ta ? tv(n.in[0]) : tv(n.in[1]));
                break;
            }
            case Op::Sub: {
                const bool tb = tan[n.in[1]] >= 0;
                t = ta && tb ? tv(n.in[0]) - tv(n.in[1]) : (ta ? tv(n.in[0]) : -tv(n.in[1]));
                break;
            }
            case Op::Mul: {
                Var b{g, n.in[1]};
                const bool tb = tan[n.in[1]] >= 0;
                if (ta && tb) t = tv(n.in[0]) * b + a * tv(n.in[1]);
                else if (ta) t = tv(n.in[0]) * b;
                else t = a * tv(n.in[1]);
                break;
            }
            case Op::Div: {
                Var b{g, n.in[1]};
                const bool tb = tan[n.in[1]] >= 0;
                if (ta && tb) t = (tv(n.in[0]) - out * tv(n.in[1])) / b;
                else if (ta) t = tv(n.in[0]) / b;
                else t = -(out * tv(n.in[1])) / b;
                break;
            }
            case Op::Neg: t = -tv(n.in[0]); break;
            case Op::Sin: t = tv(n.in[0]) * cos(a); break;
            case Op::Cos: t = -(tv(n.in[0]) * sin(a)); break;
            case Op::Exp: t = tv(n.in[0]) * out; break;
            case Op::Log: t = tv(n.in[0]) / a; break;
            case Op::Tanh: t = tv(n.in[0]) * add_scalar(-square(out), 1.0); break;
            case Op::Sqrt: t = scale(tv(n.in[0]) / out, 0.5); break;
            case Op::Pow: {
                Var b{g, n.in[1]};
                const bool tb = tan[n.in[1]] >= 0;
                Var acc;
                if (ta) acc = tv(n.in[0]) * b * pow(a, add_scalar(b, -1.0));
                if (tb) {
                    Var term = tv(n.in[1]) * out * log(a);
                    acc = acc.valid() ? acc + term : term;
                }
                t = acc;
                break;
            }
            case Op::Matmul: {
                Var b{g, n.in[1]};
                const bool tb = tan[n.in[1]] >= 0;
                if (ta && tb) t = matmul(tv(n.in[0]), b) + matmul(a, tv(n.in[1]));
                else if (ta) t = matmul(tv(n.in[0]), b);
                else t = matmul(a, tv(n.in[1]));
                break;
            }
            case Op::Transpose: t = transpose(tv(n.in[0])); break;
            case Op::RowSum: t = row_sum(tv(n.in[0])); break;
            case Op::ColSum: t = col_sum(tv(n.in[0])); break;
            case Op::Sum: t = sum(tv(n.in[0])); break;
            case Op::BroadcastRow: t = broadcast_row(tv(n.in[0]), n.value.rows()); break;
            case Op::BroadcastCol: t = broadcast_col(tv(n.in[0]), n.value.cols()); break;
            case Op::BroadcastScalar:
                t = broadcast_scalar(tv(n.in[0]), n.value.rows(), n.value.cols());
                break;
            case Op::Scale: t = scale(tv(n.in[0]), n.s); break;
            case Op::AddScalar: t = tv(n.in[0]); break;
            case Op::ConcatRows:
            case Op::ConcatCols: {
                std::vector<Var> parts;
                parts.reserve(n.in.size());
                for (int32_t i : n.in)
                    parts.push_back(tan[i] >= 0 ? tv(i) : zeros_like(Var{g, i}));
                t = n.op == Op::ConcatRows ? concat_rows(parts) : concat_cols(parts);
                break;
            }
            case Op::SliceRows: t = slice_rows(tv(n.in[0]), n.p0, n.p1); break;
            case Op::SliceCols: t = slice_cols(tv(n.in[0]), n.p0, n.p1); break;
            case Op::PadRows: t = pad_rows(tv(n.in[0]), n.p0, n.p1); break;
            case Op::PadCols: t = pad_cols(tv(n.in[0]), n.p0, n.p1); break;
            case Op::Quantize: t = tv(n.in[0]); break;  // linearized as identity
            case Op::Leaf:
            case Op::Detach: break;
        }
        if (t.valid()) tan[id] = t.id;
    }

    std::vector<Var> result;
    result.reserve(outputs.size());
    for (const Var& o : outputs)
        result.push_back(tan[o.id] >= 0 ? Var{g, tan[o.id]} : zeros_like(o));
    return result;
}

// ---------------------------------------------------------------------------
// Reverse-mode sweep
// ---------------------------------------------------------------------------

std::vector<Var> vjp_sweep(Var output, std::span<const Var> wrt, Var cotangent) {
    Graph* g = same_graph(output, cotangent);
    check_same_shape(output, cotangent, "vjp cotangent");
    ++g->vjp_sweeps_;

    const int32_t out = output.id;
    int32_t lo = out;
    for (const Var& v : wrt) {
        if (v.graph != g) throw ShapeError("vjp wrt on wrong graph");
        lo = std::min(lo, v.id);
    }

    // adjoints flow only through nodes that feed the output and depend on wrt
    std::vector<char> anc(static_cast<size_t>(out) + 1, 0);
    anc[out] = 1;
    for (int32_t id = out; id >= lo; --id) {
        if (!anc[id]) continue;
        for (int32_t i : g->node(id).in) anc[i] = 1;
    }
    std::vector<char> desc(static_cast<size_t>(out) + 1, 0);
    for (const Var& v : wrt)
        if (v.id <= out) desc[v.id] = 1;
    for (int32_t id = lo; id <= out; ++id) {
        if (desc[id]) continue;
        for (int32_t i : g->node(id).in)
            if (desc[i]) {
                desc[id] = 1;
                break;
            }
    }
    auto active = [&](int32_t id) { return id <= out && anc[id] && desc[id]; };

    std::vector<int32_t> adj(static_cast<size_t>(out) + 1, -1);
    if (active(out)) adj[out] = cotangent.id;

    auto accumulate = [&](int32_t id, Var contrib) {
        adj[id] = adj[id] >= 0 ? (Var{g, adj[id]} + contrib).id : contrib.id;
    };

    for (int32_t id = out; id >= lo; --id) {
        if (adj[id] < 0) continue;
        const Node& n = g->node(id);
        if (n.op == Op::Leaf || n.op == Op::Detach) continue;
        Var w{g, adj[id]};
        Var outv{g, id};
        Var a{g, n.in[0]};
        const bool na = active(n.in[0]);
        switch (n.op) {
            case Op::Add: {
                if (na) accumulate(n.in[0], w);
                if (active(n.in[1])) accumulate(n.in[1], w);
                break;
            }
            case Op::Sub: {
                if (na) accumulate(n.in[0], w);
                if (active(n.in[1])) accumulate(n.in[1], -w);
                break;
            }
            case Op::Mul: {
                Var b{g, n.in[1]};
                if (na) accumulate(n.in[0], w * b);
                if (active(n.in[1])) accumulate(n.in[1], w * a);
                break;
            }
            case Op::Div: {
                Var b{g, n.in[1]};
                if (na) accumulate(n.in[0], w / b);
                if (active(n.in[1])) accumulate(n.in[1], -(w * outv) / b);
                break;
            }
            case Op::Neg: if (na) accumulate(n.in[0], -w); break;
            case Op::Sin: if (na) accumulate(n.in[0], w * cos(a)); break;
            case Op::Cos: if (na) accumulate(n.in[0], -(w * sin(a))); break;
            case Op::Exp: if (na) accumulate(n.in[0], w * outv); break;
            case Op::Log: if (na) accumulate(n.in[0], w / a); break;
            case Op::Tanh: if (na) accumulate(n.in[0], w * add_scalar(-square(outv), 1.0)); break;
            case Op::Sqrt: if (na) accumulate(n.in[0], scale(w / outv, 0.5)); break;
            case Op::Pow: {
                Var b{g, n.in[1]};
                if (na) accumulate(n.in[0], w * b * pow(a, add_scalar(b, -1.0)));
                if (active(n.in[1])) accumulate(n.in[1], w * outv * log(a));
                break;
            }
            case Op::Matmul: {
                Var b{g, n.in[1]};
                if (na) accumulate(n.in[0], matmul(w, transpose(b)));
                if (active(n.in[1])) accumulate(n.in[1], matmul(transpose(a), w));
                break;
            }
            case Op::Transpose: if (na) accumulate(n.in[0], transpose(w)); break;
            case Op::RowSum: if (na) accumulate(n.in[0], broadcast_col(w, a.cols())); break;
            case Op::ColSum: if (na) accumulate(n.in[0], broadcast_row(w, a.rows())); break;
            case Op::Sum: if (na) accumulate(n.in[0], broadcast_scalar(w, a.rows(), a.cols())); break;
            case Op::BroadcastRow: if (na) accumulate(n.in[0], col_sum(w)); break;
            case Op::BroadcastCol: if (na) accumulate(n.in[0], row_sum(w)); break;
            case Op::BroadcastScalar: if (na) accumulate(n.in[0], sum(w)); break;
            case Op::Scale: if (na) accumulate(n.in[0], scale(w, n.s)); break;
            case Op::AddScalar: if (na) accumulate(n.in[0], w); break;
            case Op::ConcatRows: {
                Eigen::Index at = 0;
                for (int32_t i : n.in) {
                    Var part{g, i};
                    if (active(i)) accumulate(i, slice_rows(w, at, part.rows()));
                    at += part.rows();
                }
                break;
            }
            case Op::ConcatCols: {
                Eigen::Index at = 0;
                for (int32_t i : n.in) {
                    Var part{g, i};
                    if (active(i)) accumulate(i, slice_cols(w, at, part.cols()));
                    at += part.cols();
                }
                break;
            }
            case Op::SliceRows: if (na) accumulate(n.in[0], pad_rows(w, n.p0, a.rows())); break;
            case Op::SliceCols: if (na) accumulate(n.in[0], pad_cols(w, n.p0, a.cols())); break;
            case Op::PadRows: if (na) accumulate(n.in[0], slice_rows(w, n.p0, a.rows())); break;
            case Op::PadCols: if (na) accumulate(n.in[0], slice_cols(w, n.p0, a.cols())); break;
            case Op::Quantize: if (na) accumulate(n.in[0], w); break;  // pass-through
            case Op::Leaf:
            case Op::Detach: break;
        }
    }

    std::vector<Var> result;
    result.reserve(wrt.size());
    for (const Var& v : wrt)
        result.push_back(v.id <= out && adj[v.id] >= 0 ? Var{g, adj[v.id]} : zeros_like(v));
    return result;
}

std::vector<Var> grad(Var loss, std::span<const Var> params) {
    if (loss.size() != 1) throw NotScalar("grad expects a 1 x 1 loss");
    Var one = loss.graph->scalar(1.0);
    return vjp_sweep(loss, params, one);
}

// ---------------------------------------------------------------------------
// Value-only reverse sweep
// ---------------------------------------------------------------------------

std::vector<Array> vjp_values(Var output, std::span<const Var> wrt, const Array& cotangent) {
    Graph* g = output.graph;
    if (cotangent.rows() != output.rows() || cotangent.cols() != output.cols())
        throw ShapeError("vjp cotangent shape mismatch");

    const int32_t out = output.id;
    int32_t lo = out;
    for (const Var& v : wrt) {
        if (v.graph != g) throw ShapeError("vjp wrt on wrong graph");
        lo = std::min(lo, v.id);
    }

    std::vector<char> anc(static_cast<size_t>(out) + 1, 0);
    anc[out] = 1;
    for (int32_t id = out; id >= lo; --id) {
        if (!anc[id]) continue;
        for (int32_t i : g->node(id).in) anc[i] = 1;
    }
    std::vector<char> desc(static_cast<size_t>(out) + 1, 0);
    for (const Var& v : wrt)
        if (v.id <= out) desc[v.id] = 1;
    for (int32_t id = lo; id <= out; ++id) {
        if (desc[id]) continue;
        for (int32_t i : g->node(id).in)
            if (desc[i]) {
                desc[id] = 1;
                break;
            }
    }
    auto active = [&](int32_t id) { return id <= out && anc[id] && desc[id]; };

    std::vector<Array> adj(static_cast<size_t>(out) + 1);
    std::vector<char> has(static_cast<size_t>(out) + 1, 0);
    std::vector<char> keep(static_cast<size_t>(out) + 1, 0);
    for (const Var& v : wrt)
        if (v.id <= out) keep[v.id] = 1;
    auto accumulate = [&](int32_t id, auto&& expr) {
        if (has[id]) adj[id] += expr;
        else {
            adj[id] = expr;
            has[id] = 1;
        }
    };
    if (active(out)) accumulate(out, cotangent);

    for (int32_t id = out; id >= lo; --id) {
        if (!has[id]) continue;
        const Node& n = g->node(id);
        if (n.op == Op::Leaf || n.op == Op::Detach) continue;
        const Array& w = adj[id];
        const Array& outv = n.value;
        const Array& a = g->node(n.in[0]).value;
        const bool na = active(n.in[0]);
        switch (n.op) {
            case Op::Add: {
                if (na) accumulate(n.in[0], w);
                if (active(n.in[1])) accumulate(n.in[1], w);
                break;
            }
            case Op::Sub: {
                if (na) accumulate(n.in[0], w);
                if (active(n.in[1])) accumulate(n.in[1], -w);
                break;
            }
            case Op::Mul: {
                const Array& b = g->node(n.in[1]).value;
                if (na) accumulate(n.in[0], w * b);
                if (active(n.in[1])) accumulate(n.in[1], w * a);
                break;
            }
            case Op::Div: {
                const Array& b = g->node(n.in[1]).value;
                if (na) accumulate(n.in[0], w / b);
                if (active(n.in[1])) accumulate(n.in[1], -(w * outv) / b);
                break;
            }
            case Op::Neg: if (na) accumulate(n.in[0], -w); break;
            case Op::Sin: if (na) accumulate(n.in[0], w * a.cos()); break;
            case Op::Cos: if (na) accumulate(n.in[0], -(w * a.sin())); break;
            case Op::Exp: if (na) accumulate(n.in[0], w * outv); break;
            case Op::Log: if (na) accumulate(n.in[0], w / a); break;
            case Op::Tanh: if (na) accumulate(n.in[0], w * (1.0 - outv.square())); break;
            case Op::Sqrt: if (na) accumulate(n.in[0], 0.5 * (w / outv)); break;
            case Op::Pow: {
                const Array& b = g->node(n.in[1]).value;
                if (na)
                    accumulate(n.in[0], w * b *
                                            a.binaryExpr(b, [](double x, double y) {
                                                return std::pow(x, y - 1.0);
                                            }));
                if (active(n.in[1])) accumulate(n.in[1], w * outv * a.log());
                break;
            }
            case Op::Matmul: {
                const Array& b = g->node(n.in[1]).value;
                if (na) accumulate(n.in[0], (w.matrix() * b.matrix().transpose()).array());
                if (active(n.in[1]))
                    accumulate(n.in[1], (a.matrix().transpose() * w.matrix()).array());
                break;
            }
            case Op::Transpose: if (na) accumulate(n.in[0], w.transpose()); break;
            case Op::RowSum:
                if (na) accumulate(n.in[0], w.replicate(1, a.cols()));
                break;
            case Op::ColSum:
                if (na) accumulate(n.in[0], w.replicate(a.rows(), 1));
                break;
            case Op::Sum:
                if (na) accumulate(n.in[0], Array::Constant(a.rows(), a.cols(), w(0, 0)));
                break;
            case Op::BroadcastRow: {
                if (na) accumulate(n.in[0], w.colwise().sum());
                break;
            }
            case Op::BroadcastCol: {
                if (na) accumulate(n.in[0], w.rowwise().sum());
                break;
            }
            case Op::BroadcastScalar:
                if (na) accumulate(n.in[0], Array::Constant(1, 1, w.sum()));
                break;
            case Op::Scale: if (na) accumulate(n.in[0], w * n.s); break;
            case Op::AddScalar: if (na) accumulate(n.in[0], w); break;
            case Op::ConcatRows: {
                Eigen::Index at = 0;
                for (int32_t i : n.in) {
                    const Eigen::Index r = g->node(i).value.rows();
                    if (active(i)) accumulate(i, w.middleRows(at, r));
                    at += r;
                }
                break;
            }
            case Op::ConcatCols: {
                Eigen::Index at = 0;
                for (int32_t i : n.in) {
                    const Eigen::Index c = g->node(i).value.cols();
                    if (active(i)) accumulate(i, w.middleCols(at, c));
                    at += c;
                }
                break;
            }
            case Op::SliceRows: {
                if (na) {
                    Array padded = Array::Zero(a.rows(), a.cols());
                    padded.middleRows(n.p0, n.p1) = w;
                    accumulate(n.in[0], padded);
                }
                break;
            }
            case Op::SliceCols: {
                if (na) {
                    Array padded = Array::Zero(a.rows(), a.cols());
                    padded.middleCols(n.p0, n.p1) = w;
                    accumulate(n.in[0], padded);
                }
                break;
            }
            case Op::PadRows: if (na) accumulate(n.in[0], w.middleRows(n.p0, a.rows())); break;
            case Op::PadCols: if (na) accumulate(n.in[0], w.middleCols(n.p0, a.cols())); break;
            case Op::Quantize: if (na) accumulate(n.in[0], w); break;
            case Op::Leaf:
            case Op::Detach: break;
        }
        if (!keep[id]) adj[id].resize(0, 0);  // free as we go
    }

    std::vector<Array> result;
    result.reserve(wrt.size());
    for (const Var& v : wrt) {
        if (v.id <= out && has[v.id]) result.push_back(adj[v.id]);
        else result.push_back(Array::Zero(v.rows(), v.cols()));
    }
    return result;
}

std::vector<Array> grad_values(Var loss, std::span<const Var> params) {
    if (loss.size() != 1) throw NotScalar("grad expects a 1 x 1 loss");
    return vjp_values(loss, params, Array::Constant(1, 1, 1.0));
}

// ---------------------------------------------------------------------------
// Functional wrappers
// ---------------------------------------------------------------------------

JvpResult jvp(const TensorFn& f, const std::vector<Array>& inputs,
              const std::vector<Array>& tangents) {
    if (inputs.size() != tangents.size()) throw ShapeError("jvp: tangent count mismatch");
    Graph g;
    std::vector<Var> in;
    std::vector<std::pair<Var, Var>> seeds;
    for (size_t i = 0; i < inputs.size(); ++i) {
        Var v = g.leaf(inputs[i]);
        in.push_back(v);
        seeds.emplace_back(v, g.leaf(tangents[i]));
    }
    Var out = f(g, in);
    std::vector<Var> t = jvp_sweep(std::vector<Var>{out}, seeds);
    return {out.value(), t[0].value()};
}

Array nested_jvp(const TensorFn& f, const std::vector<Array>& inputs,
                 const std::vector<std::vector<Array>>& directions) {
    if (directions.empty() || directions.size() > 2)
        throw Unsupported("nested_jvp supports derivative order 1 or 2");
    Graph g;
    std::vector<Var> in;
    for (const Array& a : inputs) in.push_back(g.leaf(a));
    Var cur = f(g, in);
    for (const auto& dir : directions) {
        if (dir.size() != inputs.size()) throw ShapeError("nested_jvp: direction count mismatch");
        std::vector<std::pair<Var, Var>> seeds;
        for (size_t i = 0; i < in.size(); ++i) seeds.emplace_back(in[i], g.leaf(dir[i]));
        cur = jvp_sweep(std::vector<Var>{cur}, seeds)[0];
    }
    return cur.value();
}

std::vector<Array> vjp(const TensorFn& f, const std::vector<Array>& inputs,
                       const Array& cotangent) {
    Graph g;
    std::vector<Var> in;
    for (const Array& a : inputs) in.push_back(g.leaf(a));
    Var out = f(g, in);
    std::vector<Var> adj = vjp_sweep(out, in, g.leaf(cotangent));
    std::vector<Array> result;
    result.reserve(adj.size());
    for (const Var& v : adj) result.push_back(v.value());
    return result;
}

}  // namespace pimol
