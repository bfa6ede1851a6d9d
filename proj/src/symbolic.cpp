#include "pimol/symbolic.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <numbers>
#include <sstream>

namespace pimol {

// ---------------------------------------------------------------------------
// Token text form
// ---------------------------------------------------------------------------

int op_arity(OpCode op) {
    switch (op) {
        case OpCode::Add:
        case OpCode::Sub:
        case OpCode::Mul:
        case OpCode::Div:
        case OpCode::Pow: return 2;
        case OpCode::Neg:
        case OpCode::Sin:
        case OpCode::Cos:
        case OpCode::Exp: return 1;
    }
    return 0;
}

std::string op_name(OpCode op) {
    switch (op) {
        case OpCode::Add: return "add";
        case OpCode::Sub: return "sub";
        case OpCode::Mul: return "mul";
        case OpCode::Div: return "div";
        case OpCode::Pow: return "pow";
        case OpCode::Neg: return "neg";
        case OpCode::Sin: return "sin";
        case OpCode::Cos: return "cos";
        case OpCode::Exp: return "exp";
    }
    return "?";
}

static std::string channel_name(Channel c) {
    switch (c) {
        case Channel::U: return "u";
        case Channel::Ut: return "u_t";
        case Channel::Utt: return "u_tt";
        case Channel::Ux: return "u_x";
        case Channel::Uxx: return "u_xx";
    }
    return "?";
}

std::string token_text(const Token& t) {
    switch (t.kind) {
        case TokenKind::Operator: return op_name(t.op);
        case TokenKind::DerivativeLeaf:
        case TokenKind::SolutionLeaf: return channel_name(t.leaf);
        case TokenKind::Mantissa: return "N" + std::to_string(t.value);
        case TokenKind::Exponent: return "E" + std::to_string(t.value);
    }
    return "?";
}

std::string tokens_to_string(const TokenSeq& tokens) {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += token_text(tokens[i]);
    }
    return out;
}

TokenSeq tokens_from_string(const std::string& text) {
    TokenSeq out;
    std::istringstream in(text);
    std::string w;
    while (in >> w) {
        if (w == "u") out.push_back(Token::leaf_(Channel::U));
        else if (w == "u_t") out.push_back(Token::leaf_(Channel::Ut));
        else if (w == "u_tt") out.push_back(Token::leaf_(Channel::Utt));
        else if (w == "u_x") out.push_back(Token::leaf_(Channel::Ux));
        else if (w == "u_xx") out.push_back(Token::leaf_(Channel::Uxx));
        else if (w == "add") out.push_back(Token::operator_(OpCode::Add));
        else if (w == "sub") out.push_back(Token::operator_(OpCode::Sub));
        else if (w == "mul") out.push_back(Token::operator_(OpCode::Mul));
        else if (w == "div") out.push_back(Token::operator_(OpCode::Div));
        else if (w == "pow") out.push_back(Token::operator_(OpCode::Pow));
        else if (w == "neg") out.push_back(Token::operator_(OpCode::Neg));
        else if (w == "sin") out.push_back(Token::operator_(OpCode::Sin));
        else if (w == "cos") out.push_back(Token::operator_(OpCode::Cos));
        else if (w == "exp") out.push_back(Token::operator_(OpCode::Exp));
        else if ((w[0] == 'N' || w[0] == 'E') && w.size() > 1) {
            char* end = nullptr;
            long long v = std::strtoll(w.c_str() + 1, &end, 10);
            if (end == nullptr || *end != '\0')
                throw MalformedExpression("bad numeric token '" + w + "'");
            out.push_back(w[0] == 'N' ? Token::mantissa(v) : Token::exponent(v));
        } else {
            throw MalformedExpression("unknown token '" + w + "'");
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Constant encoding
// ---------------------------------------------------------------------------

std::array<Token, 3> encode_constant(double v) {
    if (!std::isfinite(v)) throw InvalidConstant("value is not finite");
    if (std::abs(v) >= 1e15) throw InvalidConstant("magnitude out of range");
    if (v == 0.0) return {Token::operator_(OpCode::Add), Token::mantissa(0), Token::exponent(0)};

    // %.6e renders 7 correctly rounded significant digits: d.dddddd e+xx.
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6e", v);
    const char* epos = std::strchr(buf, 'e');
    if (epos == nullptr) throw InvalidConstant("unexpected printf format");
    int64_t exp10 = std::strtoll(epos + 1, nullptr, 10) - 6;

    int64_t mant = 0;
    bool neg = false;
    for (const char* c = buf; c != epos; ++c) {
        if (*c == '-') neg = true;
        else if (*c >= '0' && *c <= '9') mant = mant * 10 + (*c - '0');
    }
    if (neg) mant = -mant;
    while (mant != 0 && mant % 10 == 0) {
        mant /= 10;
        ++exp10;
    }
    return {Token::operator_(OpCode::Add), Token::mantissa(mant), Token::exponent(exp10)};
}

double decode_constant(int64_t mantissa, int64_t exponent) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%llde%lld", static_cast<long long>(mantissa),
                  static_cast<long long>(exponent));
    return std::strtod(buf, nullptr);
}

// ---------------------------------------------------------------------------
// Parse / serialize
// ---------------------------------------------------------------------------

namespace {

struct Cursor {
    const TokenSeq& toks;
    size_t pos = 0;

    const Token& next() {
        if (pos >= toks.size()) throw UnexpectedEnd("token sequence ended mid-expression");
        return toks[pos++];
    }
    const Token* peek(size_t ahead = 0) const {
        return pos + ahead < toks.size() ? &toks[pos + ahead] : nullptr;
    }
};

ExprTree parse_expr(Cursor& c) {
    const Token& t = c.next();
    switch (t.kind) {
        case TokenKind::SolutionLeaf:
        case TokenKind::DerivativeLeaf: return ExprTree::make_leaf(t.leaf);
        case TokenKind::Mantissa:
        case TokenKind::Exponent:
            throw MalformedExpression("numeric token outside a constant triple");
        case TokenKind::Operator: break;
    }
    // (add, N, E) is an atomic constant, never arithmetic addition.
    if (t.op == OpCode::Add) {
        const Token* a = c.peek(0);
        const Token* b = c.peek(1);
        if (a && b && a->kind == TokenKind::Mantissa && b->kind == TokenKind::Exponent) {
            c.pos += 2;
            return ExprTree::make_constant(decode_constant(a->value, b->value));
        }
    }
    std::vector<ExprTree> kids;
    const int arity = op_arity(t.op);
    kids.reserve(arity);
    for (int i = 0; i < arity; ++i) kids.push_back(parse_expr(c));
    return ExprTree::make_op(t.op, std::move(kids));
}

void serialize_into(const ExprTree& n, TokenSeq& out) {
    switch (n.kind) {
        case ExprKind::Leaf: out.push_back(Token::leaf_(n.leaf)); return;
        case ExprKind::Constant: {
            auto triple = encode_constant(n.constant);
            out.insert(out.end(), triple.begin(), triple.end());
            return;
        }
        case ExprKind::Operator: break;
    }
    out.push_back(Token::operator_(n.op));
    for (const auto& k : n.children) serialize_into(k, out);
}

}  // namespace

ExprTree parse(const TokenSeq& tokens) {
    if (tokens.empty()) throw UnexpectedEnd("empty token sequence");
    Cursor c{tokens};
    ExprTree t = parse_expr(c);
    if (c.pos != tokens.size()) throw TrailingTokens("tokens remain after a complete expression");
    return t;
}

TokenSeq serialize(const ExprTree& tree) {
    TokenSeq out;
    serialize_into(tree, out);
    return out;
}

// ---------------------------------------------------------------------------
// Families
// ---------------------------------------------------------------------------

static const std::array<FamilyInfo, kFamilyCount> kFamilies = {{
    {FamilyId::Adv, "Adv", 1, 0.5, 0.0, false},
    {FamilyId::Diff, "Diff", 1, 0.003, 0.0, false},
    {FamilyId::DiffLin, "Diff-Lin", 2, 0.003, 0.1, false},
    {FamilyId::DiffLog, "Diff-Log", 2, 0.003, 1.0, false},
    {FamilyId::DiffSLog, "Diff-SLog", 2, 0.003, 1.0, false},
    {FamilyId::DiffBi, "Diff-Bi", 2, 0.003, 1.0, false},
    {FamilyId::ConsCub, "Cons-Cub", 2, 1.0, 0.01, false},
    {FamilyId::ConsLin, "Cons-Lin", 2, 1.0, 0.01, false},
    {FamilyId::ConsSin, "Cons-Sin", 2, 1.0, 0.01, false},
    {FamilyId::Burgers, "Burgers", 2, 1.0, 0.01, false},
    {FamilyId::Wave, "Wave", 1, 0.5, 0.0, true},
    {FamilyId::KG, "KG", 2, 1.0, 0.1, true},
    {FamilyId::SG, "SG", 1, 1.0, 0.0, true},
}};

const std::array<FamilyInfo, kFamilyCount>& all_families() { return kFamilies; }

const FamilyInfo& family_info(FamilyId id) {
    auto idx = static_cast<size_t>(id);
    if (idx >= kFamilyCount) throw UnknownFamily("family id " + std::to_string(idx));
    return kFamilies[idx];
}

FamilyId family_from_name(const std::string& name) {
    for (const auto& f : kFamilies)
        if (f.name == name) return f.id;
    throw UnknownFamily("'" + name + "'");
}

// ---------------------------------------------------------------------------
// Residual construction
// ---------------------------------------------------------------------------

namespace {

// Constant node holding the canonical (encode-rounded) value of v.
ExprTree enc(double v) {
    auto triple = encode_constant(v);
    return ExprTree::make_constant(decode_constant(triple[1].value, triple[2].value));
}

ExprTree leaf(Channel c) { return ExprTree::make_leaf(c); }
ExprTree op2(OpCode o, ExprTree a, ExprTree b) { return ExprTree::make_op(o, {std::move(a), std::move(b)}); }
ExprTree op1(OpCode o, ExprTree a) { return ExprTree::make_op(o, {std::move(a)}); }

ExprTree add(ExprTree a, ExprTree b) { return op2(OpCode::Add, std::move(a), std::move(b)); }
ExprTree sub(ExprTree a, ExprTree b) { return op2(OpCode::Sub, std::move(a), std::move(b)); }
ExprTree mul(ExprTree a, ExprTree b) { return op2(OpCode::Mul, std::move(a), std::move(b)); }
ExprTree pow2(ExprTree a) { return op2(OpCode::Pow, std::move(a), enc(2.0)); }

}  // namespace

PdeExpression build_residual(FamilyId family, const Eigen::VectorXd& params) {
    const FamilyInfo& info = family_info(family);
    if (params.size() != info.param_count)
        throw ShapeError("family " + info.name + " expects " + std::to_string(info.param_count) +
                         " parameter(s), got " + std::to_string(params.size()));
    const double q = params[0];
    const double p = info.param_count > 1 ? params[1] : 0.0;
    const double inv_pi = 1.0 / std::numbers::pi;

    ExprTree tree;
    switch (family) {
        case FamilyId::Adv:  // u_t + q u_x
            tree = add(leaf(Channel::Ut), mul(enc(q), leaf(Channel::Ux)));
            break;
        case FamilyId::Diff:  // u_t - q u_xx
            tree = sub(leaf(Channel::Ut), mul(enc(q), leaf(Channel::Uxx)));
            break;
        case FamilyId::DiffLin:  // u_t - (q u_xx + p u)
            tree = sub(leaf(Channel::Ut),
                       add(mul(enc(q), leaf(Channel::Uxx)), mul(enc(p), leaf(Channel::U))));
            break;
        case FamilyId::DiffLog:  // u_t - (q u_xx + p u (1 - u))
            tree = sub(leaf(Channel::Ut),
                       add(mul(enc(q), leaf(Channel::Uxx)),
                           mul(enc(p), mul(leaf(Channel::U), sub(enc(1.0), leaf(Channel::U))))));
            break;
        case FamilyId::DiffSLog:  // u_t - (q u_xx + p u^2 (1 - u)^2)
            tree = sub(leaf(Channel::Ut),
                       add(mul(enc(q), leaf(Channel::Uxx)),
                           mul(enc(p), mul(pow2(leaf(Channel::U)),
                                           pow2(sub(enc(1.0), leaf(Channel::U)))))));
            break;
        case FamilyId::DiffBi:  // u_t - (q u_xx + p u^2 (1 - u))
            tree = sub(leaf(Channel::Ut),
                       add(mul(enc(q), leaf(Channel::Uxx)),
                           mul(enc(p), mul(pow2(leaf(Channel::U)),
                                           sub(enc(1.0), leaf(Channel::U))))));
            break;
        case FamilyId::ConsCub:  // u_t + q u^2 u_x - (p/pi) u_xx,  (u^3/3)_x -> u^2 u_x
            tree = sub(add(leaf(Channel::Ut),
                           mul(enc(q), mul(pow2(leaf(Channel::U)), leaf(Channel::Ux)))),
                       mul(enc(p * inv_pi), leaf(Channel::Uxx)));
            break;
        case FamilyId::ConsLin:  // u_t + q u_x - (p/pi) u_xx
            tree = sub(add(leaf(Channel::Ut), mul(enc(q), leaf(Channel::Ux))),
                       mul(enc(p * inv_pi), leaf(Channel::Uxx)));
            break;
        case FamilyId::ConsSin:  // u_t + q cos(u) u_x - (p/pi) u_xx,  (sin u)_x -> cos(u) u_x
            tree = sub(add(leaf(Channel::Ut),
                           mul(enc(q), mul(op1(OpCode::Cos, leaf(Channel::U)), leaf(Channel::Ux)))),
                       mul(enc(p * inv_pi), leaf(Channel::Uxx)));
            break;
        case FamilyId::Burgers:  // u_t + q u u_x - (p/pi) u_xx,  (u^2/2)_x -> u u_x
            tree = sub(add(leaf(Channel::Ut),
                           mul(enc(q), mul(leaf(Channel::U), leaf(Channel::Ux)))),
                       mul(enc(p * inv_pi), leaf(Channel::Uxx)));
            break;
        case FamilyId::Wave:  // u_tt - q^2 u_xx
            tree = sub(leaf(Channel::Utt), mul(enc(q * q), leaf(Channel::Uxx)));
            break;
        case FamilyId::KG:  // u_tt + p^2 q^4 u - q^2 u_xx
            tree = sub(add(leaf(Channel::Utt), mul(enc(p * p * q * q * q * q), leaf(Channel::U))),
                       mul(enc(q * q), leaf(Channel::Uxx)));
            break;
        case FamilyId::SG:  // u_tt + q sin(u) - u_xx
            tree = sub(add(leaf(Channel::Utt), mul(enc(q), op1(OpCode::Sin, leaf(Channel::U)))),
                       leaf(Channel::Uxx));
            break;
        default: throw UnknownFamily(std::to_string(static_cast<int>(family)));
    }

    PdeExpression expr;
    expr.tree = std::move(tree);
    expr.tokens = serialize(expr.tree);
    expr.family = family;
    expr.params = params;
    expr.derivatives = required_derivatives(expr.tree);
    expr.time_order = expr.derivatives.contains(Channel::Utt) ? 2 : 1;
    return expr;
}

// ---------------------------------------------------------------------------
// Derivative sets & evaluation
// ---------------------------------------------------------------------------

static void collect_derivatives(const ExprTree& n, DerivSet& out) {
    if (n.kind == ExprKind::Leaf && n.leaf != Channel::U) out.insert(n.leaf);
    for (const auto& k : n.children) collect_derivatives(k, out);
}

DerivSet required_derivatives(const ExprTree& tree) {
    DerivSet s;
    collect_derivatives(tree, s);
    return s;
}

DerivSet required_derivatives(const PdeExpression& expr) { return expr.derivatives; }

namespace {

struct PlainOps {
    using value = Eigen::ArrayXd;
    static value add(const value& a, const value& b) { return a + b; }
    static value sub(const value& a, const value& b) { return a - b; }
    static value mul(const value& a, const value& b) { return a * b; }
    static value div(const value& a, const value& b) { return a / b; }
    static value pow(const value& a, const value& b) {
        return a.binaryExpr(b, [](double x, double y) { return std::pow(x, y); });
    }
    static value neg(const value& a) { return -a; }
    static value sin(const value& a) { return a.sin(); }
    static value cos(const value& a) { return a.cos(); }
    static value exp(const value& a) { return a.exp(); }
};

struct PlainEnv {
    const Eigen::ArrayXXd& z;
    Eigen::ArrayXd channel(Channel c) const { return z.col(static_cast<int>(c)); }
    Eigen::ArrayXd constant(double v) const {
        return Eigen::ArrayXd::Constant(z.rows(), v);
    }
};

}  // namespace

Eigen::ArrayXd eval_residual(const ExprTree& tree, const Eigen::ArrayXXd& channels) {
    if (channels.cols() != kChannelCount)
        throw ShapeError("channel matrix must have " + std::to_string(kChannelCount) + " columns");
    PlainEnv env{channels};
    Eigen::ArrayXd r = eval_expr<PlainOps>(tree, env);
    if (!r.isFinite().all())
        throw NonFiniteResidual("residual evaluation produced a non-finite value");
    return r;
}

}  // namespace pimol
