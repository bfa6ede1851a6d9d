#include "pimol/losses.hpp"

#include <cmath>

#include "pimol/rng.hpp"

namespace pimol {

// ---------------------------------------------------------------------------
// Collocation
// ---------------------------------------------------------------------------

CollocationStrategy collocation_strategy_from_name(const std::string& name) {
    if (name == "resample" || name == "Resample") return CollocationStrategy::Resample;
    if (name == "fixed" || name == "Fixed" || name == "non-resample")
        return CollocationStrategy::Fixed;
    throw ConfigError("unknown collocation strategy '" + name + "'");
}

std::string collocation_strategy_name(CollocationStrategy s) {
    return s == CollocationStrategy::Resample ? "resample" : "fixed";
}

Eigen::ArrayXXd sample_collocation(CollocationStrategy strategy, int m, int64_t iteration,
                                   uint64_t seed) {
    if (m < 1) throw ConfigError("collocation size must be >= 1");
    const uint64_t salt =
        strategy == CollocationStrategy::Resample ? static_cast<uint64_t>(iteration) : 0u;
    Rng rng = Rng(seed, hash_tag("collocation")).child(salt);
    Eigen::ArrayXXd tx(m, 2);
    for (int i = 0; i < m; ++i) {
        tx(i, 0) = rng.uniform(0.0, 1.0);
        tx(i, 1) = rng.uniform(0.0, 1.0);
    }
    return tx;
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

DiffBackend backend_from_name(const std::string& name) {
    if (name == "forward_ad") return DiffBackend::forward_ad;
    if (name == "reverse_ad") return DiffBackend::reverse_ad;
    if (name == "fdm") return DiffBackend::fdm;
    throw ConfigError("unknown backend '" + name + "'");
}

std::string backend_name(DiffBackend b) {
    switch (b) {
        case DiffBackend::forward_ad: return "forward_ad";
        case DiffBackend::reverse_ad: return "reverse_ad";
        case DiffBackend::fdm: return "fdm";
    }
    return "?";
}

void check_step_representable(double step, Precision precision) {
    if (step <= 0.0) throw ConfigError("fdm step must be positive");
    // shifted coordinates are always formed in 64-bit (only function values
    // are rounded), so underflow is judged against that arithmetic
    if (1.0 + step == 1.0)
        throw StepUnderflow("step " + std::to_string(step) + " vanishes when shifting (" +
                            precision_name(precision) + " run)");
}

namespace {

void check_channel_finite(const Var& v, int item, Channel c) {
    if (v.value().isFinite().all()) return;
    Eigen::Index bad = 0;
    for (Eigen::Index i = 0; i < v.value().size(); ++i)
        if (!std::isfinite(v.value()(i))) {
            bad = i;
            break;
        }
    throw NonFiniteDerivative("channel " + std::to_string(static_cast<int>(c)) + " at item " +
                              std::to_string(item) + ", point " + std::to_string(bad));
}

// forward-mode channels: constant number of vectorized sweeps
void channels_forward_ad(const BatchSurrogate& f, Var t, Var x, const DerivSet& needed,
                         ChannelSet& out) {
    Graph& g = f.graph();
    const Eigen::Index m = t.rows();
    std::vector<Var> u = f.evaluate(t, x);
    const int b = static_cast<int>(u.size());

    Var ones = g.constant_like(1.0, m, 1);
    std::vector<Var> ut, ux, utt, uxx;
    const bool want_t = needed.contains(Channel::Ut) || needed.contains(Channel::Utt);
    const bool want_x = needed.contains(Channel::Ux) || needed.contains(Channel::Uxx);
    if (want_t) {
        std::vector<std::pair<Var, Var>> seeds{{t, ones}};
        ut = jvp_sweep(u, seeds);
        if (needed.contains(Channel::Utt)) utt = jvp_sweep(ut, seeds);
    }
    if (want_x) {
        std::vector<std::pair<Var, Var>> seeds{{x, ones}};
        ux = jvp_sweep(u, seeds);
        if (needed.contains(Channel::Uxx)) uxx = jvp_sweep(ux, seeds);
    }

    out.items.resize(b);
    for (int i = 0; i < b; ++i) {
        out.items[i][static_cast<int>(Channel::U)] = u[i];
        if (needed.contains(Channel::Ut)) out.items[i][static_cast<int>(Channel::Ut)] = ut[i];
        if (needed.contains(Channel::Utt)) out.items[i][static_cast<int>(Channel::Utt)] = utt[i];
        if (needed.contains(Channel::Ux)) out.items[i][static_cast<int>(Channel::Ux)] = ux[i];
        if (needed.contains(Channel::Uxx)) out.items[i][static_cast<int>(Channel::Uxx)] = uxx[i];
    }
}

// FDM channels: one enlarged pass over stacked shifted collocation blocks
void channels_fdm(const BatchSurrogate& f, const Eigen::ArrayXXd& tx, const DerivSet& needed,
                  const DiffBackendConfig& cfg, ChannelSet& out) {
    check_step_representable(cfg.fdm_step, cfg.precision);
    Graph& g = f.graph();
    const Eigen::Index m = tx.rows();
    const double step = cfg.fdm_step;

    const bool want_t = needed.contains(Channel::Ut) || needed.contains(Channel::Utt);
    const bool want_x = needed.contains(Channel::Ux) || needed.contains(Channel::Uxx);

    // block order: center, t+, t-, x+, x-
    std::vector<Eigen::ArrayXXd> blocks;
    blocks.push_back(tx);
    if (want_t) {
        Eigen::ArrayXXd p = tx, q = tx;
        p.col(0) += step;
        q.col(0) -= step;
        blocks.push_back(p);
        blocks.push_back(q);
    }
    if (want_x) {
        Eigen::ArrayXXd p = tx, q = tx;
        p.col(1) += step;
        q.col(1) -= step;
        blocks.push_back(p);
        blocks.push_back(q);
    }

    const auto nblocks = static_cast<Eigen::Index>(blocks.size());
    Eigen::ArrayXd tcat(nblocks * m), xcat(nblocks * m);
    for (Eigen::Index k = 0; k < nblocks; ++k) {
        tcat.segment(k * m, m) = blocks[k].col(0);
        xcat.segment(k * m, m) = blocks[k].col(1);
    }
    Var t = g.leaf(tcat.matrix().array());
    Var x = g.leaf(xcat.matrix().array());
    std::vector<Var> u_all = f.evaluate(t, x);
    const int b = static_cast<int>(u_all.size());

    out.items.resize(b);
    for (int i = 0; i < b; ++i) {
        Eigen::Index at = 0;
        Var center = slice_rows(u_all[i], at, m);
        at += m;
        out.items[i][static_cast<int>(Channel::U)] = center;

        auto shifted = [&](Var full, Eigen::Index offset) {
            Var s = slice_rows(full, offset, m);
            return cfg.precision == Precision::f64 ? s : quantize(s, cfg.precision);
        };

        if (want_t) {
            Var up = shifted(u_all[i], at);
            at += m;
            Var um = shifted(u_all[i], at);
            at += m;
            if (needed.contains(Channel::Ut))
                out.items[i][static_cast<int>(Channel::Ut)] =
                    scale(up - um, 1.0 / (2.0 * step));
            if (needed.contains(Channel::Utt))
                out.items[i][static_cast<int>(Channel::Utt)] =
                    scale(up + um - scale(center, 2.0), 1.0 / (step * step));
        }
        if (want_x) {
            Var up = shifted(u_all[i], at);
            at += m;
            Var um = shifted(u_all[i], at);
            at += m;
            if (needed.contains(Channel::Ux))
                out.items[i][static_cast<int>(Channel::Ux)] =
                    scale(up - um, 1.0 / (2.0 * step));
            if (needed.contains(Channel::Uxx))
                out.items[i][static_cast<int>(Channel::Uxx)] =
                    scale(up + um - scale(center, 2.0), 1.0 / (step * step));
        }
    }
}

// reverse-mode channels: per-output one-hot cotangent sweeps (B*M per order)
void channels_reverse_ad(const BatchSurrogate& f, Var t, Var x, const DerivSet& needed,
                         ChannelSet& out) {
    Graph& g = f.graph();
    const Eigen::Index m = t.rows();
    std::vector<Var> u = f.evaluate(t, x);
    const int b = static_cast<int>(u.size());
    std::vector<Var> wrt{t, x};

    // extract all per-output first derivatives of `field` (one Var per item)
    auto extract = [&](const std::vector<Var>& field, Channel tc, Channel xc, bool want_tc,
                       bool want_xc) {
        for (int i = 0; i < b; ++i) {
            std::vector<Var> gt_rows, gx_rows;
            gt_rows.reserve(m);
            gx_rows.reserve(m);
            for (Eigen::Index mm = 0; mm < m; ++mm) {
                Array one_hot = Array::Zero(m, 1);
                one_hot(mm, 0) = 1.0;
                std::vector<Var> adj = vjp_sweep(field[i], wrt, g.leaf(one_hot));
                gt_rows.push_back(slice_rows(adj[0], mm, 1));
                gx_rows.push_back(slice_rows(adj[1], mm, 1));
            }
            if (want_tc) out.items[i][static_cast<int>(tc)] = concat_rows(gt_rows);
            if (want_xc) out.items[i][static_cast<int>(xc)] = concat_rows(gx_rows);
        }
    };

    out.items.resize(b);
    for (int i = 0; i < b; ++i) out.items[i][static_cast<int>(Channel::U)] = u[i];

    const bool first_t = needed.contains(Channel::Ut);
    const bool first_x = needed.contains(Channel::Ux);
    if (first_t || first_x) extract(u, Channel::Ut, Channel::Ux, first_t, first_x);

    // second order: one vectorized JVP builds the derivative field, then the
    // same B*M one-hot reverse extraction runs over it
    if (needed.contains(Channel::Utt)) {
        Var ones = g.constant_like(1.0, m, 1);
        std::vector<std::pair<Var, Var>> seeds{{t, ones}};
        std::vector<Var> ut = jvp_sweep(u, seeds);
        extract(ut, Channel::Utt, Channel::Uxx, true, false);
    }
    if (needed.contains(Channel::Uxx)) {
        Var ones = g.constant_like(1.0, m, 1);
        std::vector<std::pair<Var, Var>> seeds{{x, ones}};
        std::vector<Var> ux = jvp_sweep(u, seeds);
        extract(ux, Channel::Utt, Channel::Uxx, false, true);
    }
}

}  // namespace

ChannelSet compute_channels(const BatchSurrogate& f, const Eigen::ArrayXXd& tx,
                            const DerivSet& needed, const DiffBackendConfig& cfg) {
    if (tx.cols() != 2) throw ShapeError("collocation set must be M x 2");
    Graph& g = f.graph();
    ChannelSet out;
    if (cfg.backend == DiffBackend::fdm) {
        channels_fdm(f, tx, needed, cfg, out);
    } else {
        Var t = g.leaf(tx.col(0).matrix().array());
        Var x = g.leaf(tx.col(1).matrix().array());
        if (cfg.backend == DiffBackend::forward_ad)
            channels_forward_ad(f, t, x, needed, out);
        else
            channels_reverse_ad(f, t, x, needed, out);
    }
    for (size_t i = 0; i < out.items.size(); ++i)
        for (int c = 0; c < kChannelCount; ++c)
            if (out.items[i][c].valid())
                check_channel_finite(out.items[i][c], static_cast<int>(i),
                                     static_cast<Channel>(c));
    return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

namespace {

struct VarOps {
    using value = Var;
    static value add(value a, value b) { return a + b; }
    static value sub(value a, value b) { return a - b; }
    static value mul(value a, value b) { return a * b; }
    static value div(value a, value b) { return a / b; }
    static value pow(value a, value b) { return pimol::pow(a, b); }
    static value neg(value a) { return -a; }
    static value sin(value a) { return pimol::sin(a); }
    static value cos(value a) { return pimol::cos(a); }
    static value exp(value a) { return pimol::exp(a); }
};

struct VarEnv {
    Graph& g;
    const std::array<Var, kChannelCount>& channels;
    Eigen::Index m;
    int item;

    Var channel(Channel c) const {
        const Var& v = channels[static_cast<int>(c)];
        if (!v.valid())
            throw NonFiniteDerivative("expression reads channel " +
                                      std::to_string(static_cast<int>(c)) +
                                      " that the backend did not produce (item " +
                                      std::to_string(item) + ")");
        return v;
    }
    Var constant(double v) const { return g.constant_like(v, m, 1); }
};

}  // namespace

PdeLossResult compute_pde_loss(const BatchSurrogate& f,
                               std::span<const PdeExpression* const> exprs,
                               const Eigen::ArrayXXd& tx, const DiffBackendConfig& cfg) {
    const int b = f.batch_size();
    if (static_cast<int>(exprs.size()) != b)
        throw ShapeError("expression count does not match batch size");
    const Eigen::Index m = tx.rows();
    Graph& g = f.graph();

    DerivSet needed;
    for (const PdeExpression* e : exprs) needed.merge(e->derivatives);
    ChannelSet channels = compute_channels(f, tx, needed, cfg);

    Eigen::ArrayXXd residuals(b, m);
    Var acc;
    for (int i = 0; i < b; ++i) {
        VarEnv env{g, channels.items[i], m, i};
        Var r = eval_expr<VarOps>(exprs[i]->tree, env);
        if (!r.value().isFinite().all())
            throw NonFiniteResidual("item " + std::to_string(i));
        residuals.row(i) = r.value().col(0).transpose();
        Var sq = sum(square(r));
        acc = acc.valid() ? acc + sq : sq;
    }
    Var loss = scale(acc, 1.0 / (static_cast<double>(b) * static_cast<double>(m)));
    return PdeLossResult{loss, std::move(residuals)};
}

Var compute_ic_loss(const BatchSurrogate& f, std::span<const Eigen::VectorXd* const> u0) {
    const int b = f.batch_size();
    if (static_cast<int>(u0.size()) != b) throw ShapeError("u0 count does not match batch size");
    Graph& g = f.graph();
    const Eigen::Index nx = u0[0]->size();

    Eigen::ArrayXd xs(nx);
    for (Eigen::Index j = 0; j < nx; ++j) xs[j] = static_cast<double>(j) / static_cast<double>(nx);
    Var t = g.constant_like(0.0, nx, 1);
    Var x = g.leaf(xs.matrix().array());
    std::vector<Var> u = f.evaluate(t, x);

    Var acc;
    for (int i = 0; i < b; ++i) {
        if (u0[i]->size() != nx) throw ShapeError("inconsistent u0 lengths in batch");
        Var target = g.leaf(u0[i]->array());
        Var sq = sum(square(u[i] - target));
        acc = acc.valid() ? acc + sq : sq;
    }
    return scale(acc, 1.0 / (static_cast<double>(b) * static_cast<double>(nx)));
}

Var compute_ic_prime_loss(const BatchSurrogate& f, std::span<const int> time_orders, int nx,
                          const DiffBackendConfig& cfg) {
    const int b = f.batch_size();
    if (static_cast<int>(time_orders.size()) != b)
        throw ShapeError("time_order count does not match batch size");
    Graph& g = f.graph();

    int second = 0;
    for (int o : time_orders) second += o == 2 ? 1 : 0;
    if (second == 0) return g.scalar(0.0);  // weighted term inert for first-order batches

    Eigen::ArrayXXd tx(nx, 2);
    for (int j = 0; j < nx; ++j) {
        tx(j, 0) = 0.0;
        tx(j, 1) = static_cast<double>(j) / static_cast<double>(nx);
    }
    DerivSet need_ut;
    need_ut.insert(Channel::Ut);
    ChannelSet channels = compute_channels(f, tx, need_ut, cfg);

    Var acc;
    for (int i = 0; i < b; ++i) {
        if (time_orders[i] != 2) continue;
        Var ut = channels.items[i][static_cast<int>(Channel::Ut)];
        Var sq = sum(square(ut));
        acc = acc.valid() ? acc + sq : sq;
    }
    return scale(acc, 1.0 / (static_cast<double>(second) * static_cast<double>(nx)));
}

Var compute_data_loss(const BatchSurrogate& f,
                      std::span<const Eigen::MatrixXd* const> labels, const LabelGrid& grid) {
    const int b = f.batch_size();
    if (static_cast<int>(labels.size()) != b)
        throw ShapeError("label count does not match batch size");
    Graph& g = f.graph();
    const auto npts =
        static_cast<Eigen::Index>(grid.t_idx.size()) * static_cast<Eigen::Index>(grid.x_idx.size());
    if (npts == 0) return g.scalar(0.0);  // physics-only mode

    Eigen::ArrayXd ts(npts), xs(npts);
    Eigen::Index at = 0;
    for (int ti : grid.t_idx)
        for (int xi : grid.x_idx) {
            ts[at] = static_cast<double>(ti) / 64.0;
            xs[at] = static_cast<double>(xi) / 128.0;
            ++at;
        }
    Var t = g.leaf(ts.matrix().array());
    Var x = g.leaf(xs.matrix().array());
    std::vector<Var> u = f.evaluate(t, x);

    Var acc;
    for (int i = 0; i < b; ++i) {
        Eigen::ArrayXd y(npts);
        at = 0;
        for (int ti : grid.t_idx)
            for (int xi : grid.x_idx) y[at++] = (*labels[i])(ti, xi);
        Var target = g.leaf(y.matrix().array());
        Var sq = sum(square(u[i] - target));
        acc = acc.valid() ? acc + sq : sq;
    }
    return scale(acc, 1.0 / (static_cast<double>(b) * static_cast<double>(npts)));
}

TotalLoss total_loss(const LossBatch& batch, const LossWeights& w, const Eigen::ArrayXXd& tx,
                     const DiffBackendConfig& cfg) {
    if (batch.surrogate == nullptr) throw ConfigError("loss batch has no surrogate");
    Graph& g = batch.surrogate->graph();

    TotalLoss out;
    out.report.weights = w;
    Var total = g.scalar(0.0);

    if (w.pde != 0.0) {
        PdeLossResult pde = compute_pde_loss(*batch.surrogate, batch.exprs, tx, cfg);
        out.report.pde = pde.loss.value()(0, 0);
        out.report.residuals = std::move(pde.residuals);
        total = total + scale(pde.loss, w.pde);
    }
    if (w.ic != 0.0) {
        Var ic = compute_ic_loss(*batch.surrogate, batch.u0);
        out.report.ic = ic.value()(0, 0);
        total = total + scale(ic, w.ic);
    }
    if (w.ic_prime != 0.0) {
        std::vector<int> orders;
        orders.reserve(batch.exprs.size());
        for (const PdeExpression* e : batch.exprs) orders.push_back(e->time_order);
        const int nx = batch.u0.empty() ? 128 : static_cast<int>(batch.u0[0]->size());
        Var icp = compute_ic_prime_loss(*batch.surrogate, orders, nx, cfg);
        out.report.ic_prime = icp.value()(0, 0);
        total = total + scale(icp, w.ic_prime);
    }
    if (w.data != 0.0 && batch.label_grid != nullptr && !batch.labels.empty()) {
        const BatchSurrogate* ds =
            batch.data_surrogate != nullptr ? batch.data_surrogate : batch.surrogate;
        Var data = compute_data_loss(*ds, batch.labels, *batch.label_grid);
        out.report.data = data.value()(0, 0);
        total = total + scale(data, w.data);
    }

    out.total = total;
    out.report.total = total.value()(0, 0);
    return out;
}

// ---------------------------------------------------------------------------
// Step-size law
// ---------------------------------------------------------------------------

double optimal_step_size(double eps, int n, double r_n) {
    if (eps <= 0.0 || r_n <= 0.0) throw ConfigError("eps and R_n must be positive");
    if (n != 1 && n != 2) throw Unsupported("derivative order must be 1 or 2");
    return std::pow(eps / r_n, 1.0 / (n + 2));
}

double predicted_min_rel_error(double eps, int n, double r_n) {
    if (eps <= 0.0 || r_n <= 0.0) throw ConfigError("eps and R_n must be positive");
    if (n != 1 && n != 2) throw Unsupported("derivative order must be 1 or 2");
    return std::pow(eps, 2.0 / (n + 2)) * std::pow(r_n, static_cast<double>(n) / (n + 2));
}

double fdm_first_derivative(const std::function<double(double)>& f, double x, double step,
                            Precision precision) {
    check_step_representable(step, precision);
    const double fp = quantize_value(f(x + step), precision);
    const double fm = quantize_value(f(x - step), precision);
    return (fp - fm) / (2.0 * step);
}

double fdm_second_derivative(const std::function<double(double)>& f, double x, double step,
                             Precision precision) {
    check_step_representable(step, precision);
    const double fp = quantize_value(f(x + step), precision);
    const double fm = quantize_value(f(x - step), precision);
    const double fc = f(x);  // center stays in working precision
    return (fp - 2.0 * fc + fm) / (step * step);
}

}  // namespace pimol
