#include <cmath>
#include <cstdio>
#include <numbers>

#include "doctest.h"
#include "pimol/model.hpp"
#include "pimol/rng.hpp"

using namespace pimol;

namespace {

ModelConfig tiny_config(uint64_t seed = 7) {
    ModelConfig c;
    c.embed_dim = 16;
    c.heads = 4;
    c.data_layers = 1;
    c.symbol_layers = 1;
    c.fusion_layers = 1;
    c.decoder_layers = 1;
    c.periodic_features = 2;
    c.mlp_ratio = 2;
    c.seed = seed;
    return c;
}

Eigen::VectorXd sine_ic(int n = 128) {
    Eigen::VectorXd u0(n);
    for (int i = 0; i < n; ++i) u0[i] = 0.5 * (1.0 + std::sin(2 * std::numbers::pi * i / n));
    return u0;
}

PdeExpression adv_expr(double q = 0.5) {
    Eigen::VectorXd p(1);
    p << q;
    return build_residual(FamilyId::Adv, p);
}

}  // namespace

TEST_CASE("config validation") {
    ModelConfig c = tiny_config();
    c.embed_dim = 17;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.periodic_features = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("parameter init is deterministic and views alias the flat vector") {
    ModelConfig c = tiny_config(3);
    ModelParams a = ModelParams::init(c);
    ModelParams b = ModelParams::init(c);
    CHECK(a.count() == b.count());
    CHECK((a.flat() - b.flat()).cwiseAbs().maxCoeff() == 0.0);

    ModelParams d = ModelParams::init(tiny_config(4));
    CHECK((a.flat() - d.flat()).cwiseAbs().maxCoeff() > 0.0);

    // layer-norm gains start at one, biases at zero
    CHECK((a.view("dec.final_ln.g").array() == 1.0).all());
    CHECK((a.view("dec.final_ln.b").array() == 0.0).all());

    // named view writes show in the flat vector
    double before = a.flat()[0];
    a.view("query.w")(0, 0) = before + 1.5;
    CHECK(a.flat()[0] == before + 1.5);
}

TEST_CASE("query embedding periodic features") {
    ModelConfig c = tiny_config();
    c.periodic_features = 1;
    ModelParams params = ModelParams::init(c);

    Graph g;
    BoundModel bm(g, params);
    Eigen::VectorXd t(1), x(1);
    t << 0.5;
    x << 0.25;
    Var e = bm.embed_queries(g.leaf(t.array()), g.leaf(x.array()));

    // features [t, sin(2 pi x), cos(2 pi x)] = [0.5, 1, 0]
    Eigen::RowVectorXd f(3);
    f << 0.5, std::sin(std::numbers::pi / 2), std::cos(std::numbers::pi / 2);
    Eigen::RowVectorXd want = f * params.view("query.w") + params.view("query.b");
    CHECK((e.value().matrix().row(0) - want).cwiseAbs().maxCoeff() <= 1e-15);

    // x = 0 and x = 1 give bit-identical embeddings
    Eigen::VectorXd t2(2), x2(2);
    t2 << 0.3, 0.3;
    x2 << 0.0, 1.0;
    Var e2 = bm.embed_queries(g.leaf(t2.array()), g.leaf(x2.array()));
    CHECK((e2.value().row(0) == e2.value().row(1)).all());
}

TEST_CASE("forward: spatial periodicity, determinism, equivariance") {
    ModelConfig c = tiny_config(11);
    ModelParams params = ModelParams::init(c);
    Eigen::VectorXd u0 = sine_ic();
    PdeExpression expr = adv_expr();
    std::vector<ModelItem> items{{&u0, &expr.tokens}};

    Eigen::VectorXd t(4), x(4);
    t << 0.1, 0.1, 0.7, 0.7;
    x << 0.0, 1.0, 0.3, 0.3;
    Array u = forward_values(params, items, t, x);

    // u(t, 0) == u(t, 1) exactly
    CHECK(u(0, 0) == u(0, 1));
    // identical queries produce identical outputs
    CHECK(u(0, 2) == u(0, 3));

    // bit-deterministic replay
    Array u2 = forward_values(params, items, t, x);
    CHECK((u == u2).all());

    // permuting the query order permutes outputs identically
    Eigen::VectorXd tp(4), xp(4);
    tp << 0.7, 0.7, 0.1, 0.1;
    xp << 0.3, 0.3, 1.0, 0.0;
    Array up = forward_values(params, items, tp, xp);
    CHECK(up(0, 0) == u(0, 2));
    CHECK(up(0, 3) == u(0, 0));
}

TEST_CASE("symbol sensitivity: changing the constant changes some output") {
    ModelConfig c = tiny_config(13);
    ModelParams params = ModelParams::init(c);
    Eigen::VectorXd u0 = sine_ic();
    PdeExpression e1 = adv_expr(0.5);
    PdeExpression e2 = adv_expr(0.55);

    Eigen::VectorXd t(8), x(8);
    Rng rng(5);
    for (int i = 0; i < 8; ++i) {
        t[i] = rng.uniform(0, 1);
        x[i] = rng.uniform(0, 1);
    }
    Array ua = forward_values(params, {{&u0, &e1.tokens}}, t, x);
    Array ub = forward_values(params, {{&u0, &e2.tokens}}, t, x);
    CHECK((ua - ub).abs().maxCoeff() > 0.0);
}

TEST_CASE("batched query outputs match per-item evaluation") {
    ModelConfig c = tiny_config(17);
    ModelParams params = ModelParams::init(c);
    Eigen::VectorXd u0a = sine_ic();
    Eigen::VectorXd u0b = 0.8 * sine_ic().array() + 0.1;
    PdeExpression ea = adv_expr(0.48);
    Eigen::VectorXd qp(2);
    qp << 0.003, 0.1;
    PdeExpression eb = build_residual(FamilyId::DiffLin, qp);

    Eigen::VectorXd t(5), x(5);
    Rng rng(9);
    for (int i = 0; i < 5; ++i) {
        t[i] = rng.uniform(0, 1);
        x[i] = rng.uniform(0, 1);
    }
    Array both = forward_values(params, {{&u0a, &ea.tokens}, {&u0b, &eb.tokens}}, t, x);
    Array only_b = forward_values(params, {{&u0b, &eb.tokens}}, t, x);
    // same padded length in both calls (Diff-Lin is the longer sequence), so
    // item b's context is identical
    CHECK((both.row(1) - only_b.row(0)).abs().maxCoeff() == 0.0);
}

TEST_CASE("encode_data rejects wrong sample counts; tokenizer rejects stray numerics") {
    ModelConfig c = tiny_config();
    ModelParams params = ModelParams::init(c);
    Graph g;
    BoundModel bm(g, params);
    Eigen::VectorXd bad = Eigen::VectorXd::Zero(100);
    CHECK_THROWS_AS(bm.encode_data_item(bad), ShapeError);

    TokenSeq stray{Token::mantissa(5)};
    CHECK_THROWS_AS(model_tokens(stray), VocabularyError);
}

TEST_CASE("checkpoint round-trip preserves config, params, and outputs") {
    ModelConfig c = tiny_config(23);
    ModelParams params = ModelParams::init(c);
    std::string path = "ckpt_roundtrip_test.bin";
    save_checkpoint(params, path, 42, {"Adv", "Diff"});
    Checkpoint ck = load_checkpoint(path);
    std::remove(path.c_str());

    CHECK(ck.iteration == 42);
    REQUIRE(ck.train_families.size() == 2);
    CHECK(ck.train_families[0] == "Adv");
    CHECK(ck.params.config() == c);
    CHECK((ck.params.flat() - params.flat()).cwiseAbs().maxCoeff() == 0.0);

    Eigen::VectorXd u0 = sine_ic();
    PdeExpression e = adv_expr();
    Eigen::VectorXd t(3), x(3);
    t << 0.2, 0.5, 0.9;
    x << 0.1, 0.6, 0.4;
    Array a = forward_values(params, {{&u0, &e.tokens}}, t, x);
    Array b = forward_values(ck.params, {{&u0, &e.tokens}}, t, x);
    CHECK((a == b).all());
}

TEST_CASE("block-diagonal coordinate Jacobian across query points") {
    // B = 2, M = 4: assemble the full Jacobian from one-hot JVP directions;
    // cross-point entries must vanish identically.
    ModelConfig c = tiny_config(29);
    ModelParams params = ModelParams::init(c);
    Eigen::VectorXd u0a = sine_ic();
    Eigen::VectorXd u0b = 0.5 * sine_ic().array() + 0.25;
    PdeExpression ea = adv_expr(0.5);
    PdeExpression eb = adv_expr(0.52);

    const int m = 4;
    Eigen::VectorXd t(m), x(m);
    Rng rng(31);
    for (int i = 0; i < m; ++i) {
        t[i] = rng.uniform(0, 1);
        x[i] = rng.uniform(0, 1);
    }

    Graph g;
    BoundModel bm(g, params);
    bm.encode({{&u0a, &ea.tokens}, {&u0b, &eb.tokens}});
    Var tv = g.leaf(t.array());
    Var xv = g.leaf(x.array());
    std::vector<Var> u = bm.query(tv, xv);

    for (int mp = 0; mp < m; ++mp) {
        Array one_hot = Array::Zero(m, 1);
        one_hot(mp, 0) = 1.0;
        for (Var seed_target : {tv, xv}) {
            std::vector<std::pair<Var, Var>> seeds{{seed_target, g.leaf(one_hot)}};
            std::vector<Var> du = jvp_sweep(u, seeds);
            for (int b = 0; b < 2; ++b)
                for (int mm = 0; mm < m; ++mm)
                    if (mm != mp) CHECK(std::abs(du[b].value()(mm, 0)) <= 1e-12);
        }
    }
}
