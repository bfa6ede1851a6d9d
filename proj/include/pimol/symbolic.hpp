#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pimol/errors.hpp"

namespace pimol {

// ---------------------------------------------------------------------------
// Tokens
// ---------------------------------------------------------------------------

enum class OpCode : uint8_t { Add, Sub, Mul, Div, Pow, Neg, Sin, Cos, Exp };

/// Channel order is fixed everywhere: [u, u_t, u_tt, u_x, u_xx].
enum class Channel : uint8_t { U = 0, Ut = 1, Utt = 2, Ux = 3, Uxx = 4 };
inline constexpr int kChannelCount = 5;

enum class TokenKind : uint8_t { Operator, DerivativeLeaf, SolutionLeaf, Mantissa, Exponent };

struct Token {
    TokenKind kind;
    OpCode op = OpCode::Add;    // valid when kind == Operator
    Channel leaf = Channel::U;  // valid for leaf kinds
    int64_t value = 0;          // mantissa or exponent payload

    static Token operator_(OpCode op) { return Token{TokenKind::Operator, op, Channel::U, 0}; }
    static Token leaf_(Channel c) {
        return Token{c == Channel::U ? TokenKind::SolutionLeaf : TokenKind::DerivativeLeaf,
                     OpCode::Add, c, 0};
    }
    static Token mantissa(int64_t m) { return Token{TokenKind::Mantissa, OpCode::Add, Channel::U, m}; }
    static Token exponent(int64_t e) { return Token{TokenKind::Exponent, OpCode::Add, Channel::U, e}; }

    bool operator==(const Token&) const = default;
};

using TokenSeq = std::vector<Token>;

std::string token_text(const Token& t);
std::string tokens_to_string(const TokenSeq& tokens);
TokenSeq tokens_from_string(const std::string& text);

int op_arity(OpCode op);
std::string op_name(OpCode op);

// ---------------------------------------------------------------------------
// Constant encoding
// ---------------------------------------------------------------------------

/// A PDE coefficient is serialized as the atomic triple (add, N<m>, E<e>)
/// with value m * 10^e; `add` acts as the constant-combiner marker and is
/// disambiguated from arithmetic addition by its N/E operands. The mantissa
/// keeps at most 7 significant digits so that decode(encode(v)) has relative
/// error at most 5e-7.
std::array<Token, 3> encode_constant(double v);

/// Value of an (N, E) mantissa/exponent pair.
double decode_constant(int64_t mantissa, int64_t exponent);

// ---------------------------------------------------------------------------
// Expression trees
// ---------------------------------------------------------------------------

enum class ExprKind : uint8_t { Operator, Leaf, Constant };

struct ExprTree {
    ExprKind kind = ExprKind::Constant;
    OpCode op = OpCode::Add;
    Channel leaf = Channel::U;
    double constant = 0.0;
    std::vector<ExprTree> children;

    static ExprTree make_leaf(Channel c) {
        ExprTree n;
        n.kind = ExprKind::Leaf;
        n.leaf = c;
        return n;
    }
    static ExprTree make_constant(double v) {
        ExprTree n;
        n.kind = ExprKind::Constant;
        n.constant = v;
        return n;
    }
    static ExprTree make_op(OpCode op, std::vector<ExprTree> kids) {
        ExprTree n;
        n.kind = ExprKind::Operator;
        n.op = op;
        n.children = std::move(kids);
        return n;
    }

    bool operator==(const ExprTree&) const = default;
};

/// Prefix-order recursive-descent parse. The (add, N, E) pattern is consumed
/// as one constant node; the whole sequence must be consumed exactly.
ExprTree parse(const TokenSeq& tokens);

/// Prefix traversal; parse(serialize(t)) reproduces t exactly (constants in
/// a tree are always canonical decoded values).
TokenSeq serialize(const ExprTree& tree);

// ---------------------------------------------------------------------------
// PDE families
// ---------------------------------------------------------------------------

enum class FamilyId : uint8_t {
    Adv = 0,
    Diff = 1,
    DiffLin = 2,
    DiffLog = 3,
    DiffSLog = 4,
    DiffBi = 5,
    ConsCub = 6,
    ConsLin = 7,
    ConsSin = 8,
    Burgers = 9,
    Wave = 10,
    KG = 11,
    SG = 12,
};
inline constexpr int kFamilyCount = 13;

struct FamilyInfo {
    FamilyId id;
    std::string name;      // e.g. "Diff-Lin"
    int param_count;       // 1 or 2
    double q_center;
    double p_center;       // unused when param_count == 1
    bool second_order;     // has u_tt
};

const FamilyInfo& family_info(FamilyId id);
const std::array<FamilyInfo, kFamilyCount>& all_families();
FamilyId family_from_name(const std::string& name);

// ---------------------------------------------------------------------------
// Derivative sets
// ---------------------------------------------------------------------------

/// Subset of {u_t, u_tt, u_x, u_xx}; the solution channel u is implicit.
struct DerivSet {
    std::array<bool, kChannelCount> has{};  // index by Channel; has[U] unused

    void insert(Channel c) { has[static_cast<int>(c)] = true; }
    bool contains(Channel c) const { return has[static_cast<int>(c)]; }
    DerivSet& merge(const DerivSet& o) {
        for (int i = 0; i < kChannelCount; ++i) has[i] = has[i] || o.has[i];
        return *this;
    }
    bool operator==(const DerivSet&) const = default;
};

// ---------------------------------------------------------------------------
// Compiled residual expression
// ---------------------------------------------------------------------------

struct PdeExpression {
    TokenSeq tokens;
    ExprTree tree;
    FamilyId family = FamilyId::Adv;
    Eigen::VectorXd params;   // sampled parameter vector q (and p)
    DerivSet derivatives;     // exactly the derivative leaves in `tree`
    int time_order = 1;       // 2 iff u_tt appears
};

/// Canonical residual "time-derivative term minus right-hand side", with
/// conservation-law fluxes expanded by the chain rule before encoding so that
/// only the five channels appear as leaves. Coefficients are rounded by
/// encode_constant, so the tree stores the decoded values.
PdeExpression build_residual(FamilyId family, const Eigen::VectorXd& params);

/// Exact set of derivative leaves in the tree.
DerivSet required_derivatives(const ExprTree& tree);
DerivSet required_derivatives(const PdeExpression& expr);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Element-wise evaluation over a channel matrix Z (M x 5, fixed channel
/// order). Channels not named by the expression are never read. Raises
/// NonFiniteResidual if the result contains NaN/inf.
Eigen::ArrayXd eval_residual(const ExprTree& tree, const Eigen::ArrayXXd& channels);

/// Generic evaluation core shared by the plain-array path above and the
/// autodiff path in the loss module. `Ops` supplies the arithmetic for value
/// type `Ops::value`; `Env` supplies channel(Channel) and constant(double).
template <class Ops, class Env>
typename Ops::value eval_expr(const ExprTree& n, Env& env) {
    using V = typename Ops::value;
    switch (n.kind) {
        case ExprKind::Leaf: return env.channel(n.leaf);
        case ExprKind::Constant: return env.constant(n.constant);
        case ExprKind::Operator: break;
    }
    if (n.children.size() == 1) {
        V a = eval_expr<Ops>(n.children[0], env);
        switch (n.op) {
            case OpCode::Neg: return Ops::neg(a);
            case OpCode::Sin: return Ops::sin(a);
            case OpCode::Cos: return Ops::cos(a);
            case OpCode::Exp: return Ops::exp(a);
            default: break;
        }
    } else {
        V a = eval_expr<Ops>(n.children[0], env);
        V b = eval_expr<Ops>(n.children[1], env);
        switch (n.op) {
            case OpCode::Add: return Ops::add(a, b);
            case OpCode::Sub: return Ops::sub(a, b);
            case OpCode::Mul: return Ops::mul(a, b);
            case OpCode::Div: return Ops::div(a, b);
            case OpCode::Pow: return Ops::pow(a, b);
            default: break;
        }
    }
    throw MalformedExpression("operator arity does not match node");
}

}  // namespace pimol
