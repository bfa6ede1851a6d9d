#include <Eigen/Core>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "pimol/rng.hpp"
#include "pimol/symbolic.hpp"

using namespace pimol;

namespace {

double decode_rounded(double v) {
    auto t = encode_constant(v);
    return decode_constant(t[1].value, t[2].value);
}

// Hand-coded closed-form residuals, independent of the tree-evaluation path.
// Coefficients are the encode-rounded values actually stored in the tree.
Eigen::ArrayXd oracle_residual(FamilyId f, const Eigen::VectorXd& params,
                               const Eigen::ArrayXXd& z) {
    const Eigen::ArrayXd u = z.col(0), ut = z.col(1), utt = z.col(2), ux = z.col(3),
                         uxx = z.col(4);
    const double q = decode_rounded(params[0]);
    const double p = params.size() > 1 ? decode_rounded(params[1]) : 0.0;
    const double ppi =
        params.size() > 1 ? decode_rounded(params[1] / std::numbers::pi) : 0.0;
    switch (f) {
        case FamilyId::Adv: return ut + q * ux;
        case FamilyId::Diff: return ut - q * uxx;
        case FamilyId::DiffLin: return ut - (q * uxx + p * u);
        case FamilyId::DiffLog: return ut - (q * uxx + p * (u * (1.0 - u)));
        case FamilyId::DiffSLog:
            return ut - (q * uxx + p * (u.pow(2.0) * (1.0 - u).pow(2.0)));
        case FamilyId::DiffBi: return ut - (q * uxx + p * (u.pow(2.0) * (1.0 - u)));
        case FamilyId::ConsCub: return (ut + q * (u.pow(2.0) * ux)) - ppi * uxx;
        case FamilyId::ConsLin: return (ut + q * ux) - ppi * uxx;
        case FamilyId::ConsSin: return (ut + q * (u.cos() * ux)) - ppi * uxx;
        case FamilyId::Burgers: return (ut + q * (u * ux)) - ppi * uxx;
        case FamilyId::Wave: return utt - decode_rounded(params[0] * params[0]) * uxx;
        case FamilyId::KG: {
            double qq = params[0], pp = params[1];
            return (utt + decode_rounded(pp * pp * qq * qq * qq * qq) * u) -
                   decode_rounded(qq * qq) * uxx;
        }
        case FamilyId::SG: return (utt + q * u.sin()) - uxx;
    }
    return ut;
}

Eigen::VectorXd sample_family_params(FamilyId f, Rng& rng) {
    const auto& info = family_info(f);
    Eigen::VectorXd p(info.param_count);
    p[0] = rng.uniform(0.9 * info.q_center, 1.1 * info.q_center);
    if (info.param_count > 1) p[1] = rng.uniform(0.9 * info.p_center, 1.1 * info.p_center);
    return p;
}

}  // namespace

TEST_CASE("constant encoding matches the documented examples") {
    auto t = encode_constant(0.514);
    CHECK(t[0] == Token::operator_(OpCode::Add));
    CHECK(t[1] == Token::mantissa(514));
    CHECK(t[2] == Token::exponent(-3));

    t = encode_constant(0.0);
    CHECK(t[1] == Token::mantissa(0));
    CHECK(t[2] == Token::exponent(0));

    t = encode_constant(1.0);
    CHECK(t[1] == Token::mantissa(1));
    CHECK(t[2] == Token::exponent(0));
}

TEST_CASE("constant decode accuracy and idempotence") {
    Rng rng(42);
    for (int i = 0; i < 5000; ++i) {
        double mag = std::pow(10.0, rng.uniform(-9.0, 9.0));
        double v = (rng.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0) * mag * rng.uniform(0.1, 1.0);
        auto t = encode_constant(v);
        double d = decode_constant(t[1].value, t[2].value);
        CHECK(std::abs(d - v) <= 5e-7 * std::abs(v));
        auto t2 = encode_constant(d);  // canonical values re-encode to the same triple
        CHECK(t2[1].value == t[1].value);
        CHECK(t2[2].value == t[2].value);
    }
    CHECK_THROWS_AS(encode_constant(std::nan("")), InvalidConstant);
    CHECK_THROWS_AS(encode_constant(std::numeric_limits<double>::infinity()), InvalidConstant);
    CHECK_THROWS_AS(encode_constant(1e16), InvalidConstant);
}

TEST_CASE("parse recognizes constants and rejects malformed streams") {
    // single-leaf expression
    ExprTree t = parse(tokens_from_string("u_t"));
    CHECK(t == ExprTree::make_leaf(Channel::Ut));

    // paper advection example: add u_t mul add N514 E-3 u_x
    t = parse(tokens_from_string("add u_t mul add N514 E-3 u_x"));
    REQUIRE(t.kind == ExprKind::Operator);
    CHECK(t.op == OpCode::Add);
    REQUIRE(t.children.size() == 2);
    CHECK(t.children[0] == ExprTree::make_leaf(Channel::Ut));
    const ExprTree& m = t.children[1];
    REQUIRE(m.op == OpCode::Mul);
    CHECK(m.children[0].kind == ExprKind::Constant);
    CHECK(m.children[0].constant == doctest::Approx(0.514).epsilon(1e-12));
    CHECK(m.children[1] == ExprTree::make_leaf(Channel::Ux));

    // Wave residual at q = 0.5: u_tt - 0.25 u_xx
    t = parse(tokens_from_string("sub u_tt mul add N25 E-2 u_xx"));
    CHECK(t.op == OpCode::Sub);
    CHECK(t.children[1].children[0].constant == doctest::Approx(0.25).epsilon(1e-15));

    CHECK_THROWS_AS(parse(TokenSeq{}), UnexpectedEnd);
    CHECK_THROWS_AS(parse(tokens_from_string("add u_t")), UnexpectedEnd);
    CHECK_THROWS_AS(parse(tokens_from_string("u_t u_x")), TrailingTokens);
    CHECK_THROWS_AS(parse(tokens_from_string("mul N5 u")), MalformedExpression);
    CHECK_THROWS_AS(parse(tokens_from_string("add N5 u")), MalformedExpression);
}

TEST_CASE("serialize examples") {
    CHECK(tokens_to_string(serialize(ExprTree::make_leaf(Channel::U))) == "u");

    Eigen::VectorXd qv(1);
    qv << 0.514;
    auto adv = build_residual(FamilyId::Adv, qv);
    CHECK(tokens_to_string(adv.tokens) == "add u_t mul add N514 E-3 u_x");

    Eigen::VectorXd qp(2);
    qp << 0.003, 0.1;
    auto dl = build_residual(FamilyId::DiffLin, qp);
    CHECK(tokens_to_string(dl.tokens) == "sub u_t add mul add N3 E-3 u_xx mul add N1 E-1 u");
}

TEST_CASE("round-trip: parse(serialize(build_residual)) is identity for all families") {
    Rng rng(7);
    for (const auto& info : all_families()) {
        for (int rep = 0; rep < 100; ++rep) {
            Eigen::VectorXd p = sample_family_params(info.id, rng);
            auto expr = build_residual(info.id, p);
            ExprTree again = parse(serialize(expr.tree));
            CHECK(again == expr.tree);
            // text form round-trips as well
            TokenSeq toks = tokens_from_string(tokens_to_string(expr.tokens));
            CHECK(toks == expr.tokens);
        }
    }
}

TEST_CASE("required derivatives per family") {
    auto at_center = [](FamilyId f) {
        const auto& info = family_info(f);
        Eigen::VectorXd p(info.param_count);
        p[0] = info.q_center;
        if (info.param_count > 1) p[1] = info.p_center;
        return build_residual(f, p);
    };
    auto adv = at_center(FamilyId::Adv);
    CHECK(adv.derivatives.contains(Channel::Ut));
    CHECK(adv.derivatives.contains(Channel::Ux));
    CHECK(!adv.derivatives.contains(Channel::Uxx));
    CHECK(!adv.derivatives.contains(Channel::Utt));
    CHECK(adv.time_order == 1);

    auto diff = at_center(FamilyId::Diff);
    CHECK(diff.derivatives.contains(Channel::Ut));
    CHECK(diff.derivatives.contains(Channel::Uxx));
    CHECK(!diff.derivatives.contains(Channel::Ux));

    auto kg = at_center(FamilyId::KG);
    CHECK(kg.derivatives.contains(Channel::Utt));
    CHECK(kg.derivatives.contains(Channel::Uxx));
    CHECK(!kg.derivatives.contains(Channel::Ut));
    CHECK(kg.time_order == 2);
}

TEST_CASE("residual compiler matches hand-coded oracle on all 13 families") {
    Rng rng(123);
    const int M = 32;
    for (const auto& info : all_families()) {
        for (int rep = 0; rep < 10; ++rep) {
            Eigen::VectorXd p = sample_family_params(info.id, rng);
            auto expr = build_residual(info.id, p);
            Eigen::ArrayXXd z(M, kChannelCount);
            for (int i = 0; i < M; ++i)
                for (int c = 0; c < kChannelCount; ++c) z(i, c) = rng.uniform(-1.0, 1.0);
            Eigen::ArrayXd got = eval_residual(expr.tree, z);
            Eigen::ArrayXd want = oracle_residual(info.id, p, z);
            CHECK((got - want).abs().maxCoeff() <= 1e-12);
        }
    }
}

TEST_CASE("eval_residual point examples") {
    Eigen::VectorXd qv(1);
    qv << 0.5;
    auto adv = build_residual(FamilyId::Adv, qv);
    // analytic field u(t,x) = e^{-t} sin(2 pi x) at (0, 0.25): u_t = -1, u_x = 0
    Eigen::ArrayXXd z = Eigen::ArrayXXd::Zero(1, kChannelCount);
    z(0, 1) = -1.0;  // u_t
    z(0, 3) = 0.0;   // u_x
    CHECK(eval_residual(adv.tree, z)(0) == doctest::Approx(-1.0).epsilon(1e-15));

    // all channels zero: linear homogeneous residuals vanish
    Eigen::ArrayXXd zero = Eigen::ArrayXXd::Zero(4, kChannelCount);
    for (FamilyId f : {FamilyId::Adv, FamilyId::Diff, FamilyId::Wave}) {
        const auto& info = family_info(f);
        Eigen::VectorXd p(1);
        p << info.q_center;
        CHECK(eval_residual(build_residual(f, p).tree, zero).abs().maxCoeff() == 0.0);
    }

    // Diff-Log at u = 1, u_t = 0, u_xx = 0: logistic term vanishes
    Eigen::VectorXd qp(2);
    qp << 0.003, 1.0;
    auto dlog = build_residual(FamilyId::DiffLog, qp);
    Eigen::ArrayXXd z1 = Eigen::ArrayXXd::Zero(1, kChannelCount);
    z1(0, 0) = 1.0;
    CHECK(eval_residual(dlog.tree, z1)(0) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("eval_residual surfaces non-finite values") {
    // u_t / u with u = 0 divides by zero
    ExprTree t = parse(tokens_from_string("div u_t u"));
    Eigen::ArrayXXd z = Eigen::ArrayXXd::Zero(2, kChannelCount);
    z(0, 1) = 1.0;
    CHECK_THROWS_AS(eval_residual(t, z), NonFiniteResidual);
}

TEST_CASE("eval_residual is pure: repeated calls are bit-identical") {
    Rng rng(5);
    Eigen::VectorXd p(2);
    p << 1.02, 0.0097;
    auto expr = build_residual(FamilyId::ConsSin, p);
    Eigen::ArrayXXd z(16, kChannelCount);
    for (int i = 0; i < z.size(); ++i) z(i) = rng.uniform(-1.0, 1.0);
    Eigen::ArrayXd a = eval_residual(expr.tree, z);
    Eigen::ArrayXd b = eval_residual(expr.tree, z);
    CHECK((a == b).all());
}

TEST_CASE("build_residual rejects bad input") {
    Eigen::VectorXd p1(1);
    p1 << 0.5;
    CHECK_THROWS_AS(build_residual(static_cast<FamilyId>(99), p1), UnknownFamily);
    CHECK_THROWS_AS(build_residual(FamilyId::KG, p1), ShapeError);
}
