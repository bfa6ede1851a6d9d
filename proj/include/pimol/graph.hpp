#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "pimol/errors.hpp"
#include "pimol/precision.hpp"

namespace pimol {

using Array = Eigen::ArrayXXd;

// ---------------------------------------------------------------------------
// Recorded primitives
// ---------------------------------------------------------------------------

enum class Op : uint8_t {
    Leaf,
    Add, Sub, Mul, Div, Neg,
    Sin, Cos, Exp, Log, Tanh, Sqrt, Pow,
    Matmul, Transpose,
    RowSum, ColSum, Sum,
    BroadcastRow,     // 1 x c -> r x c
    BroadcastCol,     // r x 1 -> r x c
    BroadcastScalar,  // 1 x 1 -> r x c
    Scale,            // value * s
    AddScalar,        // value + s
    ConcatRows, ConcatCols,
    SliceRows, SliceCols,     // payload (begin, count)
    PadRows, PadCols,         // payload (begin, parent extent); scatter into zeros
    Quantize,                 // round values to payload precision; identity derivative
    Detach,                   // identity value; blocks both derivative modes
};

struct Node {
    Op op = Op::Leaf;
    std::vector<int32_t> in;
    double s = 0.0;      // Scale / AddScalar payload
    int64_t p0 = 0;      // slice begin / pad begin / broadcast extent / precision
    int64_t p1 = 0;      // slice count / pad parent extent / broadcast extent
    Array value;
};

class Graph;

/// Handle to one value on a graph. Cheap to copy; valid as long as the graph
/// lives. A default-constructed Var is empty.
struct Var {
    Graph* graph = nullptr;
    int32_t id = -1;

    bool valid() const { return graph != nullptr && id >= 0; }
    const Array& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    Eigen::Index size() const { return value().size(); }
};

// ---------------------------------------------------------------------------
// Graph (tape): append-only record of primitive evaluations
// ---------------------------------------------------------------------------

/// Values are computed eagerly on emission; the record exists so that forward
/// (JVP) and reverse (VJP) transformations can replay it. Both transformations
/// append ordinary nodes, so they compose: nested JVPs give higher-order
/// coordinate derivatives, and a reverse sweep over a tape that already
/// contains tangent nodes differentiates through them.
class Graph {
  public:
    Var leaf(Array value);
    Var scalar(double v) { return leaf(Array::Constant(1, 1, v)); }
    Var constant_like(double v, Eigen::Index rows, Eigen::Index cols) {
        return leaf(Array::Constant(rows, cols, v));
    }

    size_t size() const { return nodes_.size(); }
    const Node& node(int32_t id) const { return nodes_[static_cast<size_t>(id)]; }

    /// Total bytes of node values ever allocated on this graph (peak proxy:
    /// the graph is append-only and freed as a whole).
    size_t value_bytes() const { return value_bytes_; }
    size_t vjp_sweep_count() const { return vjp_sweeps_; }
    size_t jvp_sweep_count() const { return jvp_sweeps_; }

    Var emit(Op op, std::vector<int32_t> in, Array value, double s = 0.0, int64_t p0 = 0,
             int64_t p1 = 0);

    friend std::vector<Var> jvp_sweep(std::span<const Var> outputs,
                                      std::span<const std::pair<Var, Var>> seeds);
    friend std::vector<Var> vjp_sweep(Var output, std::span<const Var> wrt, Var cotangent);

  private:
    std::deque<Node> nodes_;  // deque: appends never invalidate references
    size_t value_bytes_ = 0;
    size_t vjp_sweeps_ = 0;
    size_t jvp_sweeps_ = 0;
};

// ---------------------------------------------------------------------------
// Primitives (free functions; all shapes checked)
// ---------------------------------------------------------------------------

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var sin(Var a);
Var cos(Var a);
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var sqrt(Var a);
Var pow(Var a, Var b);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var row_sum(Var a);
Var col_sum(Var a);
Var sum(Var a);
Var broadcast_row(Var a, Eigen::Index rows);
Var broadcast_col(Var a, Eigen::Index cols);
Var broadcast_scalar(Var a, Eigen::Index rows, Eigen::Index cols);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index begin, Eigen::Index count);
Var pad_rows(Var a, Eigen::Index begin, Eigen::Index total);
Var pad_cols(Var a, Eigen::Index begin, Eigen::Index total);
Var quantize(Var a, Precision p);
Var detach(Var a);

// composites
Var square(Var a);
Var mean(Var a);      // mean over all entries -> 1 x 1
Var row_mean(Var a);  // -> r x 1
/// Row-wise softmax, shifted by a detached row max for stability.
Var softmax_rows(Var a);
/// Normalize each row to zero mean / unit variance (stabilizer 1e-5 under the
/// square root), then apply the affine gain/bias (both 1 x c).
Var layer_norm_rows(Var x, Var gain, Var bias);

// ---------------------------------------------------------------------------
// Derivative transformations
// ---------------------------------------------------------------------------

/// Forward-mode sweep: propagate the seed tangents through every recorded
/// node up to `outputs`, appending tangent nodes. Returns one tangent per
/// output (zeros when an output does not depend on any seed).
std::vector<Var> jvp_sweep(std::span<const Var> outputs,
                           std::span<const std::pair<Var, Var>> seeds);

/// Reverse-mode sweep: cotangent has the output's shape; returns one adjoint
/// per `wrt` entry. Adjoints are themselves graph nodes, so parameter
/// gradients of values computed from them remain available.
std::vector<Var> vjp_sweep(Var output, std::span<const Var> wrt, Var cotangent);

/// Gradient of a scalar (1 x 1) loss with respect to each of `params`.
std::vector<Var> grad(Var loss, std::span<const Var> params);

/// Value-only reverse sweep: same rules as vjp_sweep but adjoints live in
/// plain buffers instead of graph nodes. Use when nothing differentiates
/// through the adjoints (the ordinary training gradient).
std::vector<Array> vjp_values(Var output, std::span<const Var> wrt, const Array& cotangent);
std::vector<Array> grad_values(Var loss, std::span<const Var> params);

// ---------------------------------------------------------------------------
// Functional wrappers (build a scratch graph internally)
// ---------------------------------------------------------------------------

using TensorFn = std::function<Var(Graph&, const std::vector<Var>&)>;

struct JvpResult {
    Array value;
    Array tangent;
};

/// value and directional derivative of f at `inputs` along `tangents`.
JvpResult jvp(const TensorFn& f, const std::vector<Array>& inputs,
              const std::vector<Array>& tangents);

/// Nested forward mode: `directions` is one tangent set per derivative order
/// (at most 2, else Unsupported). Returns the highest-order derivative.
Array nested_jvp(const TensorFn& f, const std::vector<Array>& inputs,
                 const std::vector<std::vector<Array>>& directions);

/// Reverse mode: adjoint of each input for the given output cotangent.
std::vector<Array> vjp(const TensorFn& f, const std::vector<Array>& inputs,
                       const Array& cotangent);

}  // namespace pimol
