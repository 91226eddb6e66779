#include "screenlab/ident_nonlinear.hpp"

#include <algorithm>
#include <sstream>
#include <cmath>

namespace screenlab {

RegimePair build_regime_pair(const Dataset& ds, const VectorXd& q0, PriceFieldConfig pfc) {
    RegimePair rp;
    Dataset d1 = ds.filter_z(1);
    Dataset d2 = ds.filter_z(2);
    require(d1.size() > 0 && d2.size() > 0, Error::Code::insufficient_support,
            "regime pair: both regimes must be present");
    rp.pf1 = PriceField::fit(d1, pfc);
    rp.pf2 = PriceField::fit(d2, pfc);

    const auto m1 = rp.pf1.record_mask(d1, q0);
    const auto m2 = rp.pf2.record_mask(d2, q0);
    for (int i = 0; i < d1.size(); ++i) {
        if (!m1[i]) {
            ++rp.excluded1;
            continue;
        }
        // common-support restriction: both regimes' screened masks
        if (!rp.pf2.in_mask(d1.q(i, 0), d1.q(i, 1))) {
            ++rp.excluded1;
            continue;
        }
        rp.q1x.push_back(d1.q(i, 0));
        rp.q1y.push_back(d1.q(i, 1));
    }
    for (int i = 0; i < d2.size(); ++i) {
        if (!m2[i]) {
            ++rp.excluded2;
            continue;
        }
        if (!rp.pf1.in_mask(d2.q(i, 0), d2.q(i, 1))) {
            ++rp.excluded2;
            continue;
        }
        rp.q2x.push_back(d2.q(i, 0));
        rp.q2y.push_back(d2.q(i, 1));
    }
    require(rp.q1x.size() > 100 && rp.q2x.size() > 100, Error::Code::insufficient_support,
            "regime pair: common screened support too thin");
    rp.qm1 = QuantileMap(rp.q1x, rp.q1y);
    rp.qm2 = QuantileMap(rp.q2x, rp.q2y);
    return rp;
}

Vector2d gradient_ratio(const PriceField& pf_l, const PriceField& pf_lprime, const Vector2d& theta,
                        const Vector2d& q, double floor) {
    double a1, a2, b1, b2;
    pf_l.gradient(q[0], q[1], a1, a2);
    pf_lprime.gradient(q[0], q[1], b1, b2);
    if (std::abs(b1) <= floor || std::abs(b2) <= floor || std::abs(a1) <= floor ||
        std::abs(a2) <= floor)
        throw Error(Error::Code::singular_weighting,
                    "gradient_ratio: vanishing gradient component at (" + format_full(q[0]) +
                        ", " + format_full(q[1]) + ")");
    return Vector2d(a1 * theta[0] / b1, a2 * theta[1] / b2);
}

void find_fixed_point(RegimePair& rp, FixedPointConfig cfg) {
    const Lattice2D& g1 = rp.pf1.grid();
    Lattice2D mesh{cfg.mesh, cfg.mesh, g1.x0, g1.x1, g1.y0, g1.y1};
    double best = std::numeric_limits<double>::infinity();
    Vector2d q_best = Vector2d::Zero();
    std::vector<double> gaps;
    for (int iy = 0; iy < mesh.ny; ++iy)
        for (int ix = 0; ix < mesh.nx; ++ix) {
            const double x = mesh.x(ix), y = mesh.y(iy);
            if (!rp.in_common(x, y)) continue;
            double a1, a2, b1, b2;
            rp.pf1.gradient(x, y, a1, a2);
            rp.pf2.gradient(x, y, b1, b2);
            const double scale = std::hypot(a1, a2) + std::hypot(b1, b2);
            if (scale < 1e-12) continue;
            const double gap = 2.0 * std::hypot(a1 - b1, a2 - b2) / scale;
            gaps.push_back(gap);
            if (gap < best) {
                best = gap;
                q_best = Vector2d(x, y);
            }
        }
    require(!gaps.empty(), Error::Code::insufficient_support,
            "find_fixed_point: empty common screened region");
    rp.q_hat = q_best;
    rp.gap = best;
    rp.fixed_point_ok = best <= cfg.accept_tol;
    if (!rp.fixed_point_ok)
        throw Error(Error::Code::precondition_failed,
                    "find_fixed_point: no gradient crossing (min relative gap " +
                        format_full(best) + " at (" + format_full(q_best[0]) + ", " +
                        format_full(q_best[1]) + ")); the identification precondition fails");

    // attractiveness sign condition: sgn[(r_j(q)-q_j)(q_j - q_hat_j)] equal
    // across components, probed on a neighborhood through the ratio fields
    int agree = 0, total = 0;
    const double R = cfg.probe_radius;
    for (int k = 0; k < 200; ++k) {
        Rng rng(424243, k);
        const double x = rp.q_hat[0] + rng.uniform(-R, R);
        const double y = rp.q_hat[1] + rng.uniform(-R, R);
        if (!rp.in_common(x, y)) continue;
        if (std::abs(x - rp.q_hat[0]) < 1e-3 || std::abs(y - rp.q_hat[1]) < 1e-3) continue;
        double a1, a2, b1, b2;
        rp.pf1.gradient(x, y, a1, a2);
        rp.pf2.gradient(x, y, b1, b2);
        if (std::min({std::abs(a1), std::abs(a2), std::abs(b1), std::abs(b2)}) < 1e-10) continue;
        const double m1 = a1 / b1 - 1.0;  // component ratio deviation
        const double m2 = a2 / b2 - 1.0;
        const int s1 = (m1 * (x - rp.q_hat[0])) > 0 ? 1 : -1;
        const int s2 = (m2 * (y - rp.q_hat[1])) > 0 ? 1 : -1;
        agree += (s1 == s2) ? 1 : 0;
        ++total;
    }
    rp.sign_consistency = total ? static_cast<double>(agree) / total : 0.0;
    rp.sign_condition = total > 20 && rp.sign_consistency >= cfg.consistency;
}

namespace {

Vector2d s_map(const RegimePair& rp, int from_regime, const Vector2d& q) {
    if (from_regime == 1) return quantile_match(rp.qm1, rp.qm2, q);  // s_{1,2}
    return quantile_match(rp.qm2, rp.qm1, q);                        // s_{2,1}
}

}  // namespace

IterationResult iterate_type_recovery(const RegimePair& rp, const Vector2d& q_start,
                                      IterationConfig cfg) {
    require(rp.fixed_point_ok, Error::Code::precondition_failed,
            "iterate_type_recovery: fixed point not established");
    const double tol = cfg.tol > 0 ? cfg.tol : 0.5 * cfg.cell;

    IterationResult out;
    double p1, p2;
    rp.pf1.gradient(rp.q_hat[0], rp.q_hat[1], p1, p2);
    const Vector2d theta0(p1, p2);  // anchor: grad v(q_hat) = 1

    Vector2d q = q_start;
    out.trajectory.push_back(q);
    if ((q - rp.q_hat).norm() < tol) {
        out.theta = theta0;
        out.converged = true;
        return out;
    }

    // pick the branch whose step moves toward the fixed point
    const double d0 = (q - rp.q_hat).norm();
    const double d12 = (s_map(rp, 1, q) - rp.q_hat).norm();
    const double d21 = (s_map(rp, 2, q) - rp.q_hat).norm();
    out.branch = d12 <= d21 ? 1 : 2;

    Vector2d prod(1.0, 1.0);
    for (int L = 0; L < cfg.L_max; ++L) {
        if (out.branch == 1) {
            q = s_map(rp, 1, q);
            if (!rp.in_common(q[0], q[1]))
                throw Error(Error::Code::precondition_failed,
                            "iterate_type_recovery: iterate left the screened region at step " +
                                std::to_string(L + 1));
            double a1, a2, b1, b2;
            rp.pf2.gradient(q[0], q[1], a1, a2);
            rp.pf1.gradient(q[0], q[1], b1, b2);
            require(std::min(std::abs(b1), std::abs(b2)) > 1e-10,
                    Error::Code::singular_weighting, "iterate: vanishing gradient");
            prod[0] *= a1 / b1;
            prod[1] *= a2 / b2;
        } else {
            double a1, a2, b1, b2;
            rp.pf1.gradient(q[0], q[1], a1, a2);
            rp.pf2.gradient(q[0], q[1], b1, b2);
            require(std::min(std::abs(b1), std::abs(b2)) > 1e-10,
                    Error::Code::singular_weighting, "iterate: vanishing gradient");
            prod[0] *= a1 / b1;
            prod[1] *= a2 / b2;
            q = s_map(rp, 2, q);
            if (!rp.in_common(q[0], q[1]))
                throw Error(Error::Code::precondition_failed,
                            "iterate_type_recovery: iterate left the screened region at step " +
                                std::to_string(L + 1));
        }
        out.trajectory.push_back(q);
        if ((q - rp.q_hat).norm() < tol) {
            out.theta = Vector2d(prod[0] * theta0[0], prod[1] * theta0[1]);
            out.converged = true;
            return out;
        }
        // stall guard: no progress over the last few steps
        if (out.trajectory.size() > 6) {
            const auto& a = out.trajectory[out.trajectory.size() - 1];
            const auto& b = out.trajectory[out.trajectory.size() - 5];
            if ((a - b).norm() < 1e-4 * d0) break;
        }
    }
    if (!out.converged) {
        std::ostringstream traj;
        for (size_t k = 0; k < out.trajectory.size(); k += std::max<size_t>(1, out.trajectory.size() / 12))
            traj << "(" << format_full(out.trajectory[k][0]) << ","
                 << format_full(out.trajectory[k][1]) << ") ";
        throw Error(Error::Code::non_convergence,
                    "iterate_type_recovery: no convergence in " + std::to_string(cfg.L_max) +
                        " steps from (" + format_full(q_start[0]) + ", " +
                        format_full(q_start[1]) + "); trajectory: " + traj.str());
    }
    return out;
}

TypeField recover_type_field(const RegimePair& rp, int grid, IterationConfig icfg) {
    TypeField tf;
    const Lattice2D& g1 = rp.pf1.grid();
    tf.grid = Lattice2D{grid, grid, g1.x0, g1.x1, g1.y0, g1.y1};
    icfg.cell = std::max(tf.grid.hx(), tf.grid.hy());
    tf.t1.assign(tf.grid.size(), 0.0);
    tf.t2.assign(tf.grid.size(), 0.0);
    tf.ok.assign(tf.grid.size(), 0);
    for (int iy = 0; iy < grid; ++iy)
        for (int ix = 0; ix < grid; ++ix) {
            const double x = tf.grid.x(ix), y = tf.grid.y(iy);
            if (!rp.in_common(x, y)) continue;
            try {
                IterationResult r = iterate_type_recovery(rp, Vector2d(x, y), icfg);
                tf.t1[tf.grid.idx(ix, iy)] = r.theta[0];
                tf.t2[tf.grid.idx(ix, iy)] = r.theta[1];
                tf.ok[tf.grid.idx(ix, iy)] = 1;
            } catch (const Error&) {
                ++tf.failures;
            }
        }
    return tf;
}

double MarginalUtility::dv(int j, double qj) const {
    const auto& axis = j == 0 ? axis1 : axis2;
    const auto& vals = j == 0 ? dv1 : dv2;
    if (axis.empty()) return 1.0;
    if (qj <= axis.front()) return vals.front();
    if (qj >= axis.back()) return vals.back();
    const auto it = std::upper_bound(axis.begin(), axis.end(), qj);
    const size_t k = it - axis.begin();
    const double t = (qj - axis[k - 1]) / (axis[k] - axis[k - 1]);
    return (1 - t) * vals[k - 1] + t * vals[k];
}

double MarginalUtility::d2v(int j, double qj) const {
    const auto& axis = j == 0 ? axis1 : axis2;
    if (axis.size() < 3) return 0.0;
    const double h = axis[1] - axis[0];
    return (dv(j, qj + h) - dv(j, qj - h)) / (2 * h);
}

MarginalUtility recover_marginal_utility(const TypeField& tf, const PriceField& pf1) {
    MarginalUtility mu;
    mu.grid = tf.grid;
    mu.dv1_field.assign(tf.grid.size(), 0.0);
    mu.dv2_field.assign(tf.grid.size(), 0.0);
    mu.ok.assign(tf.grid.size(), 0);
    for (int iy = 0; iy < tf.grid.ny; ++iy)
        for (int ix = 0; ix < tf.grid.nx; ++ix) {
            const int n = tf.grid.idx(ix, iy);
            if (!tf.ok[n]) continue;
            double g1, g2;
            pf1.gradient(tf.grid.x(ix), tf.grid.y(iy), g1, g2);
            if (std::abs(tf.t1[n]) < 1e-12 || std::abs(tf.t2[n]) < 1e-12) continue;
            mu.dv1_field[n] = g1 / tf.t1[n];
            mu.dv2_field[n] = g2 / tf.t2[n];
            mu.ok[n] = 1;
            if (mu.dv1_field[n] <= 0 || mu.dv2_field[n] <= 0) ++mu.nonpositive;
        }
    // separable projections: median across the cross coordinate per axis value
    for (int ix = 0; ix < tf.grid.nx; ++ix) {
        std::vector<double> col;
        for (int iy = 0; iy < tf.grid.ny; ++iy)
            if (mu.ok[tf.grid.idx(ix, iy)]) col.push_back(mu.dv1_field[tf.grid.idx(ix, iy)]);
        if (col.size() >= 3) {
            std::nth_element(col.begin(), col.begin() + col.size() / 2, col.end());
            mu.axis1.push_back(tf.grid.x(ix));
            mu.dv1.push_back(col[col.size() / 2]);
        }
    }
    for (int iy = 0; iy < tf.grid.ny; ++iy) {
        std::vector<double> row;
        for (int ix = 0; ix < tf.grid.nx; ++ix)
            if (mu.ok[tf.grid.idx(ix, iy)]) row.push_back(mu.dv2_field[tf.grid.idx(ix, iy)]);
        if (row.size() >= 3) {
            std::nth_element(row.begin(), row.begin() + row.size() / 2, row.end());
            mu.axis2.push_back(tf.grid.y(iy));
            mu.dv2.push_back(row[row.size() / 2]);
        }
    }
    require(mu.axis1.size() >= 3 && mu.axis2.size() >= 3, Error::Code::insufficient_support,
            "recover_marginal_utility: recovered field too thin");
    return mu;
}

double type_jacobian_det(const PriceField& pf, const MarginalUtility& mu, double x, double y) {
    double g1, g2, h11, h12, h22;
    pf.gradient(x, y, g1, g2);
    pf.hessian(x, y, h11, h12, h22);
    const double v1 = mu.dv(0, x), v2 = mu.dv(1, y);
    const double w1 = mu.d2v(0, x), w2 = mu.d2v(1, y);
    // D theta = diag(1/v') [ D grad P - diag(grad P v''/v') ]
    const double a = (h11 - g1 * w1 / v1) / v1;
    const double b = h12 / v1;
    const double c = h12 / v2;
    const double d = (h22 - g2 * w2 / v2) / v2;
    return a * d - b * c;
}

CostGrid recover_cost_nonlinear(const RegimePair& rp, int regime, const MarginalUtility& mu,
                                CostPdeConfig cfg) {
    const PriceField& pf = regime == 1 ? rp.pf1 : rp.pf2;
    const auto& qx = regime == 1 ? rp.q1x : rp.q2x;
    const auto& qy = regime == 1 ? rp.q1y : rp.q2y;

    CostGrid tmp;
    const Lattice2D& cg = pf.grid();
    Lattice2D mesh{cfg.mesh, cfg.mesh, cg.x0, cg.x1, cg.y0, cg.y1};
    std::vector<std::uint8_t> inside(mesh.size(), 0);
    for (int iy = 0; iy < mesh.ny; ++iy)
        for (int ix = 0; ix < mesh.nx; ++ix)
            inside[mesh.idx(ix, iy)] = rp.in_common(mesh.x(ix), mesh.y(iy)) ? 1 : 0;

    const auto m_star = truncated_choice_density(mesh, inside, qx, qy, cfg.density_bw);

    std::vector<double> weight(mesh.size(), 0.0);
    std::vector<double> dets(mesh.size(), 0.0);
    double det_scale = 0.0;
    for (int iy = 0; iy < mesh.ny; ++iy)
        for (int ix = 0; ix < mesh.nx; ++ix) {
            const int n = mesh.idx(ix, iy);
            if (!inside[n]) continue;
            dets[n] = std::abs(type_jacobian_det(pf, mu, mesh.x(ix), mesh.y(iy)));
            det_scale = std::max(det_scale, dets[n]);
        }
    for (int iy = 0; iy < mesh.ny; ++iy)
        for (int ix = 0; ix < mesh.nx; ++ix) {
            const int n = mesh.idx(ix, iy);
            if (!inside[n]) continue;
            if (dets[n] < cfg.det_floor * det_scale)
                throw Error(Error::Code::singular_weighting,
                            "nonlinear cost pde: |det D theta| below tolerance at (" +
                                format_full(mesh.x(ix)) + ", " + format_full(mesh.y(iy)) + ")");
            weight[n] = m_star[n] / dets[n];
        }
    return solve_cost_pde(pf, mesh, std::move(inside), std::move(weight), cfg.anchor_value);
}

}  // namespace screenlab
