#include "screenlab/rationalizability.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "screenlab/bunching.hpp"
#include "screenlab/transport.hpp"

namespace screenlab {

const ConditionVerdict& RationalizabilityReport::get(const std::string& name) const {
    for (const auto& c : conditions)
        if (c.name == name) return c;
    throw Error(Error::Code::invalid_argument, "report: no condition " + name);
}

void RationalizabilityReport::write(const std::string& path) const {
    std::ostringstream out;
    out << "# rationalizability verdicts, model class "
        << (model == ModelClass::M1 ? "M1" : model == ModelClass::M2 ? "M2" : "M3") << "\n";
    out << "# condition statistic tolerance verdict note\n";
    for (const auto& c : conditions)
        out << c.name << " " << format_full(c.statistic) << " " << format_full(c.tolerance) << " "
            << (c.pass ? "pass" : "fail") << " " << (c.note.empty() ? "-" : c.note) << "\n";
    write_text_file(path, out.str());
}

namespace {

double price_iqr(const Dataset& ds) {
    std::vector<double> p(ds.raw_prices());
    std::sort(p.begin(), p.end());
    return std::max(1e-12, p[static_cast<size_t>(0.75 * (p.size() - 1))] -
                               p[static_cast<size_t>(0.25 * (p.size() - 1))]);
}

// C1: conditional price spread through nearest-neighbor price differences
ConditionVerdict check_c1(const Dataset& ds, double tol) {
    ConditionVerdict v{"C1", false, 0.0, tol, "price determinism (NN spread / IQR)"};
    const int n = ds.size();
    const int m = std::min(n, 4000);
    // crude grid hash
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (int i = 0; i < n; ++i) {
        xmin = std::min(xmin, ds.q(i, 0));
        xmax = std::max(xmax, ds.q(i, 0));
        ymin = std::min(ymin, ds.q(i, 1));
        ymax = std::max(ymax, ds.q(i, 1));
    }
    const int gb = 64;
    const double sx = std::max(xmax - xmin, 1e-12), sy = std::max(ymax - ymin, 1e-12);
    std::vector<std::vector<int>> cells(static_cast<size_t>(gb) * gb);
    for (int i = 0; i < n; ++i) {
        const int cx = std::clamp(static_cast<int>((ds.q(i, 0) - xmin) / sx * (gb - 1)), 0, gb - 1);
        const int cy = std::clamp(static_cast<int>((ds.q(i, 1) - ymin) / sy * (gb - 1)), 0, gb - 1);
        cells[static_cast<size_t>(cy) * gb + cx].push_back(i);
    }
    std::vector<double> diffs;
    Rng rng(777);
    for (int k = 0; k < m; ++k) {
        const int i = static_cast<int>(rng.next() % n);
        const int cx = std::clamp(static_cast<int>((ds.q(i, 0) - xmin) / sx * (gb - 1)), 0, gb - 1);
        const int cy = std::clamp(static_cast<int>((ds.q(i, 1) - ymin) / sy * (gb - 1)), 0, gb - 1);
        int bestj = -1;
        double bestd = 1e300;
        for (int r = 0; r < gb && bestj < 0; ++r) {
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    if (std::max(std::abs(dx), std::abs(dy)) != r) continue;
                    const int jx = cx + dx, jy = cy + dy;
                    if (jx < 0 || jx >= gb || jy < 0 || jy >= gb) continue;
                    for (int j : cells[static_cast<size_t>(jy) * gb + jx]) {
                        if (j == i) continue;
                        const double d = std::hypot(ds.q(j, 0) - ds.q(i, 0),
                                                    ds.q(j, 1) - ds.q(i, 1));
                        if (d < bestd) {
                            bestd = d;
                            bestj = j;
                        }
                    }
                }
            if (bestj >= 0 && r > 1) break;
        }
        if (bestj >= 0) diffs.push_back(std::abs(ds.price(i) - ds.price(bestj)));
    }
    require(!diffs.empty(), Error::Code::insufficient_support, "C1: no neighbor pairs");
    std::nth_element(diffs.begin(), diffs.begin() + diffs.size() / 2, diffs.end());
    v.statistic = diffs[diffs.size() / 2] / price_iqr(ds);
    v.pass = v.statistic <= tol;
    return v;
}

ConditionVerdict check_c2(const Dataset& ds, const VectorXd& q0) {
    ConditionVerdict v{"C2", false, 0.0, 0.999, "lower-dimensional flat exists"};
    try {
        BunchingGeometry g = detect_bunching_set(ds, q0);
        v.pass = g.found;
        v.statistic = g.found ? g.r_squared : 0.0;
        if (!g.found) v.note = "no flat detected";
    } catch (const Error& e) {
        v.pass = false;
        v.note = e.what();
    }
    return v;
}

ConditionVerdict check_c3(const PriceField& pf, double min_mask) {
    ConditionVerdict v{"C3", false, 0.0, min_mask, "non-vanishing gradient, PSD Hessian"};
    v.statistic = static_cast<double>(pf.masked_nodes()) / pf.grid().size();
    v.pass = v.statistic >= min_mask;
    return v;
}

// empirical bivariate CDF at probes
double ecdf2(const std::vector<double>& xs, const std::vector<double>& ys, double x, double y) {
    int c = 0;
    for (size_t i = 0; i < xs.size(); ++i) c += (xs[i] <= x && ys[i] <= y) ? 1 : 0;
    return static_cast<double>(c) / xs.size();
}

ConditionVerdict check_c4(const Dataset& ds, const PriceField& pf, const VectorXd& q0, double tol,
                          int probes) {
    ConditionVerdict v{"C4", false, 0.0, tol, "F_W = M* identity on the screened sample"};
    const auto mask = pf.record_mask(ds, q0);
    std::vector<double> qx, qy, wx, wy;
    for (int i = 0; i < ds.size(); ++i) {
        if (!mask[i]) continue;
        double g1, g2;
        pf.gradient(ds.q(i, 0), ds.q(i, 1), g1, g2);
        qx.push_back(ds.q(i, 0));
        qy.push_back(ds.q(i, 1));
        wx.push_back(g1);
        wy.push_back(g2);
    }
    if (qx.size() < 50) {
        v.note = "screened sample too thin";
        return v;
    }
    Rng rng(991);
    double acc = 0.0;
    int cnt = 0;
    for (int k = 0; k < probes; ++k) {
        const int i = static_cast<int>(rng.next() % qx.size());
        const double fw = ecdf2(wx, wy, wx[i], wy[i]);
        const double mq = ecdf2(qx, qy, qx[i], qy[i]);
        acc += std::abs(fw - mq);
        ++cnt;
    }
    v.statistic = acc / cnt;
    v.pass = v.statistic <= tol;
    return v;
}

ConditionVerdict check_c4_prime(const RegimePair& rp, double tol, int probes) {
    ConditionVerdict v{"C4'", false, 0.0, tol, "regime quantile invariance"};
    Rng rng(555);
    double acc = 0.0;
    int cnt = 0;
    for (int k = 0; k < probes && cnt < probes; ++k) {
        const int i = static_cast<int>(rng.next() % rp.q1x.size());
        const Vector2d q1(rp.q1x[i], rp.q1y[i]);
        const Vector2d t = rp.qm1.field(q1);
        if (t.norm() > 0.95) continue;  // extreme ranks are noise-dominated
        const Vector2d q2 = rp.qm2.inverse(t);
        const double m1 = ecdf2(rp.q1x, rp.q1y, q1[0], q1[1]);
        const double m2 = ecdf2(rp.q2x, rp.q2y, q2[0], q2[1]);
        acc += std::abs(m1 - m2);
        ++cnt;
    }
    if (!cnt) {
        v.note = "no usable probes";
        return v;
    }
    v.statistic = acc / cnt;
    v.pass = v.statistic <= tol;
    return v;
}

}  // namespace

RationalizabilityReport rationalizability_check(const Dataset& ds, ModelClass mc,
                                                const VectorXd& q0, RatConfig cfg) {
    require(ds.size() > 0, Error::Code::invalid_argument, "rationalizability: empty dataset");
    RationalizabilityReport rep;
    rep.model = mc;

    rep.conditions.push_back(check_c1(ds, cfg.c1_tol));
    rep.conditions.push_back(check_c2(ds, q0));

    if (mc != ModelClass::M3) {
        PriceField pf = PriceField::fit(ds, cfg.pf);
        rep.conditions.push_back(check_c3(pf, cfg.c3_min_mask));
        rep.conditions.push_back(check_c4(ds, pf, q0, cfg.c4_tol, cfg.probes));
        // C5: the cost PDE admits a solution with bounded residual
        ConditionVerdict c5{"C5", false, 0.0, cfg.c5_tol, "cost PDE solvable"};
        try {
            PseudoTypeField ptf = recover_types_linear(pf, ds, q0);
            CostGrid cg = recover_cost_pde(ptf, pf, ds);
            auto costfun = [&](double x, double y) { return cg.mesh.interp(cg.values, x, y); };
            c5.statistic = cost_pde_residual(cg, pf, costfun);
            c5.pass = c5.statistic <= cfg.c5_tol;
        } catch (const Error& e) {
            c5.note = e.what();
        }
        rep.conditions.push_back(c5);
    } else {
        RegimePair rp = build_regime_pair(ds, q0, cfg.pf);
        rep.conditions.push_back(check_c3(rp.pf1, cfg.c3_min_mask));
        rep.conditions.push_back(check_c4_prime(rp, cfg.c4p_tol, cfg.probes));
        ConditionVerdict c5{"C5", false, 0.0, cfg.c5_tol, "regime cost PDEs solvable"};
        ConditionVerdict c6{"C6", false, 0.0, cfg.c6_tol,
                            "transport map consistent with optimality types"};
        try {
            find_fixed_point(rp);
            TypeField tf = recover_type_field(rp, 21);
            MarginalUtility mu = recover_marginal_utility(tf, rp.pf1);
            CostGrid cg1 = recover_cost_nonlinear(rp, 1, mu);
            auto costfun = [&](double x, double y) { return cg1.mesh.interp(cg1.values, x, y); };
            c5.statistic = cost_pde_residual(cg1, rp.pf1, costfun);
            c5.pass = c5.statistic <= cfg.c5_tol;

            // C6: optimal transport between regime-1 screened choices and the
            // recovered types; its map should reproduce the theta field
            const int n_atoms = std::min<int>(700, static_cast<int>(rp.q1x.size()));
            std::vector<Vector2d> choices, types;
            Rng rng(31415);
            double scale2 = 0.0;
            for (int k = 0; k < n_atoms; ++k) {
                const int i = static_cast<int>(rng.next() % rp.q1x.size());
                const Vector2d q(rp.q1x[i], rp.q1y[i]);
                if (!tf.grid.contains(q[0], q[1])) continue;
                const double t1 = tf.grid.interp(tf.t1, q[0], q[1]);
                const double t2 = tf.grid.interp(tf.t2, q[0], q[1]);
                if (t1 <= 0 || t2 <= 0) continue;
                choices.push_back(q);
                types.emplace_back(t1, t2);
                scale2 += t1 * t1 + t2 * t2;
            }
            if (choices.size() >= 50) {
                scale2 /= choices.size();
                TransportPlan plan = transport_overid(choices, types);
                auto ref = [&](const Vector2d& q) {
                    return Vector2d(tf.grid.interp(tf.t1, q[0], q[1]),
                                    tf.grid.interp(tf.t2, q[0], q[1]));
                };
                c6.statistic = transport_map_msd(plan, ref) / scale2;
                c6.pass = c6.statistic <= cfg.c6_tol;
            } else {
                c6.note = "too few usable atoms";
            }
        } catch (const Error& e) {
            c5.note = e.what();
            c6.note = e.what();
        }
        rep.conditions.push_back(c5);
        rep.conditions.push_back(c6);
    }
    return rep;
}

Lemma2Report lemma2_witness(const VectorXd& omega, int grid) {
    require(omega.size() == 2, Error::Code::dimension_mismatch, "lemma2: J=2");
    for (int j = 0; j < 2; ++j)
        require(omega[j] > 0.0 && omega[j] <= 1.0, Error::Code::invalid_argument,
                "lemma2: omega outside (0,1]");
    Lemma2Report rep;
    rep.grid = Lattice2D{grid, grid, 0.5, 1.5, 0.5, 1.5};

    // base structure: pseudo-type field theta(q) = q, uniform truncated type
    // density on [0.5, 1.5]^2, marginal prices p_j = theta_j omega_j q_j^{omega_j - 1}
    auto f_base = [&](double a, double b) {
        return (a >= 0.5 && a <= 1.5 && b >= 0.5 && b <= 1.5) ? 1.0 : 0.0;
    };
    const double w1 = omega[0], w2 = omega[1];
    double sup = 0.0, sup_bad = 0.0;
    for (int iy = 0; iy < grid; ++iy)
        for (int ix = 0; ix < grid; ++ix) {
            const double x = rep.grid.x(ix), y = rep.grid.y(iy);
            const double p1 = x * w1 * std::pow(x, w1 - 1.0);
            const double p2 = y * w2 * std::pow(y, w2 - 1.0);
            // original structure, the display's change of variables
            const double m =
                f_base(p1 / (w1 * std::pow(x, w1 - 1.0)), p2 / (w2 * std::pow(y, w2 - 1.0))) *
                (p1 * p2 * (1.0 - w1) * (1.0 - w2)) / (w1 * w2 * std::pow(x, w1) * std::pow(y, w2));
            // transformed structure: F_check = F(./omega), v_check = v/omega
            const double m_check =
                f_base(p1 / (w1 * std::pow(x, w1 - 1.0)), p2 / (w2 * std::pow(y, w2 - 1.0))) /
                (w1 * w2) * (p1 * p2 * (1.0 - w1) * (1.0 - w2)) /
                (std::pow(x, w1) * std::pow(y, w2));
            sup = std::max(sup, std::abs(m - m_check));
            // mismatched: density transformed, utility left alone
            const double m_bad =
                f_base(p1 / (w1 * w1 * std::pow(x, w1 - 1.0)),
                       p2 / (w2 * w2 * std::pow(y, w2 - 1.0))) /
                (w1 * w2) * (p1 * p2 * (1.0 - w1) * (1.0 - w2)) /
                (w1 * w2 * std::pow(x, w1) * std::pow(y, w2));
            sup_bad = std::max(sup_bad, std::abs(m - m_bad));
        }
    rep.sup_diff = sup;
    rep.sup_diff_mismatched = sup_bad;
    return rep;
}

}  // namespace screenlab
