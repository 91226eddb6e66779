#include "screenlab/ident_linear.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>

namespace screenlab {

PseudoTypeField recover_types_linear(const PriceField& pf, const Dataset& ds, const VectorXd& q0) {
    PseudoTypeField out;
    const auto mask = pf.record_mask(ds, q0);
    out.record_index.reserve(ds.size());
    for (int i = 0; i < ds.size(); ++i) {
        if (!mask[i]) {
            ++out.excluded_records;
            continue;
        }
        double g1, g2;
        pf.gradient(ds.q(i, 0), ds.q(i, 1), g1, g2);
        out.record_index.push_back(i);
        out.t1.push_back(g1);
        out.t2.push_back(g2);
    }
    require(!out.t1.empty(), Error::Code::insufficient_support,
            "recover_types_linear: screened mask is empty");
    return out;
}

void estimate_density_high(PseudoTypeField& ptf, int grid, double bandwidth) {
    const int n = static_cast<int>(ptf.t1.size());
    require(n >= 10, Error::Code::insufficient_support, "density estimate: too few pseudo-types");
    const auto [a0, a1] = std::minmax_element(ptf.t1.begin(), ptf.t1.end());
    const auto [b0, b1] = std::minmax_element(ptf.t2.begin(), ptf.t2.end());
    double sx = 0, sy = 0, sxx = 0, syy = 0;
    for (int i = 0; i < n; ++i) {
        sx += ptf.t1[i];
        sy += ptf.t2[i];
        sxx += ptf.t1[i] * ptf.t1[i];
        syy += ptf.t2[i] * ptf.t2[i];
    }
    const double sdx = std::sqrt(std::max(1e-12, sxx / n - (sx / n) * (sx / n)));
    const double sdy = std::sqrt(std::max(1e-12, syy / n - (sy / n) * (sy / n)));
    const double h = bandwidth > 0 ? bandwidth
                                   : 1.06 * 0.5 * (sdx + sdy) * std::pow(n, -1.0 / 6.0);

    const double pad = 2.5 * h;
    ptf.type_grid = Lattice2D{grid, grid, *a0 - pad, *a1 + pad, *b0 - pad, *b1 + pad};
    ptf.density.assign(ptf.type_grid.size(), 0.0);

    const double inv2h2 = 1.0 / (2.0 * h * h);
    for (int iy = 0; iy < grid; ++iy)
        for (int ix = 0; ix < grid; ++ix) {
            const double x = ptf.type_grid.x(ix), y = ptf.type_grid.y(iy);
            double acc = 0.0;
            for (int i = 0; i < n; ++i) {
                const double dx = x - ptf.t1[i], dy = y - ptf.t2[i];
                const double r2 = (dx * dx + dy * dy) * inv2h2;
                if (r2 < 18.0) acc += std::exp(-r2);
            }
            ptf.density[ptf.type_grid.idx(ix, iy)] = acc;
        }
    // normalize to quadrature mass 1
    const double mass = ptf.type_grid.integrate(ptf.density);
    require(mass > 0, Error::Code::insufficient_support, "density estimate: zero mass");
    for (auto& v : ptf.density) v /= mass;

    // CDF by cumulative trapezoid quadrature
    ptf.cdf.assign(ptf.type_grid.size(), 0.0);
    const auto& g = ptf.type_grid;
    std::vector<double> row(g.nx, 0.0);
    std::vector<double> colacc(g.nx, 0.0);
    for (int iy = 0; iy < g.ny; ++iy) {
        double rowacc = 0.0;
        for (int ix = 0; ix < g.nx; ++ix) {
            // integral of density over [x0,x]x[y0,y]
            double cell = 0.0;
            if (ix > 0 && iy > 0) {
                cell = 0.25 *
                       (g.hx() * g.hy()) *
                       (ptf.density[g.idx(ix, iy)] + ptf.density[g.idx(ix - 1, iy)] +
                        ptf.density[g.idx(ix, iy - 1)] + ptf.density[g.idx(ix - 1, iy - 1)]);
            }
            if (ix > 0) rowacc += cell;
            const double below = iy > 0 ? colacc[ix] : 0.0;
            ptf.cdf[g.idx(ix, iy)] = below + rowacc;
        }
        for (int ix = 0; ix < g.nx; ++ix) colacc[ix] = ptf.cdf[g.idx(ix, iy)];
    }
}

bool CostGrid::grad_at(int ix, int iy, double& g1, double& g2) const {
    auto in = [&](int jx, int jy) {
        return jx >= 0 && jx < mesh.nx && jy >= 0 && jy < mesh.ny && inside[mesh.idx(jx, jy)];
    };
    if (!in(ix, iy)) return false;
    const double hx = mesh.hx(), hy = mesh.hy();
    if (in(ix + 1, iy) && in(ix - 1, iy))
        g1 = (values[mesh.idx(ix + 1, iy)] - values[mesh.idx(ix - 1, iy)]) / (2 * hx);
    else if (in(ix + 1, iy))
        g1 = (values[mesh.idx(ix + 1, iy)] - values[mesh.idx(ix, iy)]) / hx;
    else if (in(ix - 1, iy))
        g1 = (values[mesh.idx(ix, iy)] - values[mesh.idx(ix - 1, iy)]) / hx;
    else
        return false;
    if (in(ix, iy + 1) && in(ix, iy - 1))
        g2 = (values[mesh.idx(ix, iy + 1)] - values[mesh.idx(ix, iy - 1)]) / (2 * hy);
    else if (in(ix, iy + 1))
        g2 = (values[mesh.idx(ix, iy + 1)] - values[mesh.idx(ix, iy)]) / hy;
    else if (in(ix, iy - 1))
        g2 = (values[mesh.idx(ix, iy)] - values[mesh.idx(ix, iy - 1)]) / hy;
    else
        return false;
    return true;
}

int CostGrid::inside_count() const {
    int c = 0;
    for (auto v : inside) c += v;
    return c;
}

std::vector<double> truncated_choice_density(const Lattice2D& mesh,
                                             const std::vector<std::uint8_t>& inside,
                                             const std::vector<double>& qx,
                                             const std::vector<double>& qy, double bw) {
    const int n = static_cast<int>(qx.size());
    require(n > 0, Error::Code::insufficient_support, "choice density: no points");
    if (bw <= 0) {
        double sx = 0, sxx = 0, sy = 0, syy = 0;
        for (int i = 0; i < n; ++i) {
            sx += qx[i];
            sxx += qx[i] * qx[i];
            sy += qy[i];
            syy += qy[i] * qy[i];
        }
        const double sdx = std::sqrt(std::max(1e-12, sxx / n - (sx / n) * (sx / n)));
        const double sdy = std::sqrt(std::max(1e-12, syy / n - (sy / n) * (sy / n)));
        bw = 1.06 * 0.5 * (sdx + sdy) * std::pow(n, -1.0 / 6.0);
    }
    std::vector<double> m(mesh.size(), 0.0);
    const double inv2h2 = 1.0 / (2.0 * bw * bw);
    for (int iy = 0; iy < mesh.ny; ++iy)
        for (int ix = 0; ix < mesh.nx; ++ix) {
            if (!inside[mesh.idx(ix, iy)]) continue;
            const double x = mesh.x(ix), y = mesh.y(iy);
            double acc = 0.0;
            for (int i = 0; i < n; ++i) {
                const double dx = x - qx[i], dy = y - qy[i];
                const double r2 = (dx * dx + dy * dy) * inv2h2;
                if (r2 < 18.0) acc += std::exp(-r2);
            }
            m[mesh.idx(ix, iy)] = acc;
        }
    double mass = 0.0;
    for (int iy = 0; iy < mesh.ny; ++iy)
        for (int ix = 0; ix < mesh.nx; ++ix)
            if (inside[mesh.idx(ix, iy)]) mass += mesh.quad_weight(ix, iy) * m[mesh.idx(ix, iy)];
    require(mass > 0, Error::Code::insufficient_support, "choice density: zero mass");
    for (auto& v : m) v /= mass;
    return m;
}

CostGrid recover_cost_pde(const PseudoTypeField& ptf, const PriceField& pf, const Dataset& ds,
                          CostPdeConfig cfg) {
    CostGrid out;
    const Lattice2D& cg = pf.grid();
    out.mesh = Lattice2D{cfg.mesh, cfg.mesh, cg.x0, cg.x1, cg.y0, cg.y1};
    const int N = out.mesh.size();
    out.inside.assign(N, 0);
    for (int iy = 0; iy < cfg.mesh; ++iy)
        for (int ix = 0; ix < cfg.mesh; ++ix)
            out.inside[out.mesh.idx(ix, iy)] =
                pf.in_mask(out.mesh.x(ix), out.mesh.y(iy)) ? 1 : 0;
    require(out.inside_count() >= 12, Error::Code::insufficient_support,
            "cost pde: screened sub-mesh too small");

    std::vector<double> qx, qy;
    qx.reserve(ptf.record_index.size());
    for (int i : ptf.record_index) {
        qx.push_back(ds.q(i, 0));
        qy.push_back(ds.q(i, 1));
    }
    const auto m_star = truncated_choice_density(out.mesh, out.inside, qx, qy, cfg.density_bw);

    // w = m*/|det D grad P|, abort on singular weighting
    std::vector<double> weight(N, 0.0);
    double det_scale = 0.0;
    std::vector<double> dets(N, 0.0);
    for (int iy = 0; iy < cfg.mesh; ++iy)
        for (int ix = 0; ix < cfg.mesh; ++ix) {
            const int n = out.mesh.idx(ix, iy);
            if (!out.inside[n]) continue;
            double h11, h12, h22;
            pf.hessian(out.mesh.x(ix), out.mesh.y(iy), h11, h12, h22);
            dets[n] = std::abs(h11 * h22 - h12 * h12);
            det_scale = std::max(det_scale, dets[n]);
        }
    for (int iy = 0; iy < cfg.mesh; ++iy)
        for (int ix = 0; ix < cfg.mesh; ++ix) {
            const int n = out.mesh.idx(ix, iy);
            if (!out.inside[n]) continue;
            if (dets[n] < cfg.det_floor * det_scale)
                throw Error(Error::Code::singular_weighting,
                            "cost pde: |det D grad P| below tolerance at (" +
                                format_full(out.mesh.x(ix)) + ", " + format_full(out.mesh.y(iy)) +
                                ")");
            weight[n] = m_star[n] / dets[n];
        }
    return solve_cost_pde(pf, out.mesh, out.inside, weight, cfg.anchor_value);
}

CostGrid solve_cost_pde(const PriceField& pf, const Lattice2D& mesh,
                        std::vector<std::uint8_t> inside, std::vector<double> weight,
                        double anchor_value) {
    CostGrid out;
    out.mesh = mesh;
    out.inside = std::move(inside);
    out.weight = std::move(weight);
    const int N = mesh.size();

    std::vector<int> id(N, -1);
    std::vector<std::pair<int, int>> nodes;
    double cx = 0, cy = 0;
    for (int iy = 0; iy < mesh.ny; ++iy)
        for (int ix = 0; ix < mesh.nx; ++ix)
            if (out.inside[mesh.idx(ix, iy)]) {
                id[mesh.idx(ix, iy)] = static_cast<int>(nodes.size());
                nodes.emplace_back(ix, iy);
                cx += mesh.x(ix);
                cy += mesh.y(iy);
            }
    const int M = static_cast<int>(nodes.size());
    require(M >= 12, Error::Code::insufficient_support, "cost pde: sub-mesh too small");
    cx /= M;
    cy /= M;
    int anchor = 0;
    double best = 1e300;
    for (int k = 0; k < M; ++k) {
        const double d = std::hypot(mesh.x(nodes[k].first) - cx, mesh.y(nodes[k].second) - cy);
        if (d < best) {
            best = d;
            anchor = k;
        }
    }

    using Trip = Eigen::Triplet<double>;
    std::vector<Trip> trips;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(M);
    const double hx = mesh.hx(), hy = mesh.hy();
    const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
    for (int k = 0; k < M; ++k) {
        if (k == anchor) {
            trips.emplace_back(k, k, 1.0);
            rhs[k] = anchor_value;
            continue;
        }
        const auto [ix, iy] = nodes[k];
        const int n = mesh.idx(ix, iy);
        double diag = 0.0;
        for (int f = 0; f < 4; ++f) {
            const int jx = ix + dx[f], jy = iy + dy[f];
            if (jx < 0 || jx >= mesh.nx || jy < 0 || jy >= mesh.ny) continue;
            const int nn = mesh.idx(jx, jy);
            if (!out.inside[nn]) continue;  // zero-flux face
            const double h = dx[f] ? hx : hy;
            const double wf = 0.5 * (out.weight[n] + out.weight[nn]);
            double g1, g2;
            pf.gradient(0.5 * (mesh.x(ix) + mesh.x(jx)), 0.5 * (mesh.y(iy) + mesh.y(jy)), g1, g2);
            const double gpn = dx[f] ? g1 * dx[f] : g2 * dy[f];
            diag += wf / (h * h);
            trips.emplace_back(k, id[nn], -wf / (h * h));
            rhs[k] += wf * gpn / h;
        }
        trips.emplace_back(k, k, diag);
        rhs[k] += out.weight[n];
    }

    Eigen::SparseMatrix<double> A(M, M);
    A.setFromTriplets(trips.begin(), trips.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(A);
    require(lu.info() == Eigen::Success, Error::Code::non_convergence,
            "cost pde: linear solve failed");
    Eigen::VectorXd sol = lu.solve(rhs);
    require(lu.info() == Eigen::Success, Error::Code::non_convergence,
            "cost pde: linear solve failed (back substitution)");

    out.values.assign(N, 0.0);
    for (int k = 0; k < M; ++k)
        out.values[mesh.idx(nodes[k].first, nodes[k].second)] = sol[k];
    return out;
}

double cost_pde_residual(const CostGrid& grid, const PriceField& pf,
                         const std::function<double(double, double)>& cost) {
    const Lattice2D& mesh = grid.mesh;
    const double hx = mesh.hx(), hy = mesh.hy();
    const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
    double acc = 0.0;
    int cnt = 0;
    for (int iy = 0; iy < mesh.ny; ++iy)
        for (int ix = 0; ix < mesh.nx; ++ix) {
            const int n = mesh.idx(ix, iy);
            if (!grid.inside[n]) continue;
            // interior nodes only (all four neighbors inside)
            bool full = true;
            for (int f = 0; f < 4; ++f) {
                const int jx = ix + dx[f], jy = iy + dy[f];
                if (jx < 0 || jx >= mesh.nx || jy < 0 || jy >= mesh.ny ||
                    !grid.inside[mesh.idx(jx, jy)])
                    full = false;
            }
            if (!full) continue;
            double div = 0.0;
            for (int f = 0; f < 4; ++f) {
                const int jx = ix + dx[f], jy = iy + dy[f];
                const int nn = mesh.idx(jx, jy);
                const double h = dx[f] ? hx : hy;
                const double wf = 0.5 * (grid.weight[n] + grid.weight[nn]);
                double g1, g2;
                pf.gradient(0.5 * (mesh.x(ix) + mesh.x(jx)), 0.5 * (mesh.y(iy) + mesh.y(jy)), g1,
                            g2);
                const double gpn = dx[f] ? g1 * dx[f] : g2 * dy[f];
                const double cslope = (cost(mesh.x(jx), mesh.y(jy)) - cost(mesh.x(ix), mesh.y(iy))) / h;
                div += wf * (gpn - cslope) / h;
            }
            const double r = div + grid.weight[n];
            acc += r * r;
            ++cnt;
        }
    return cnt ? std::sqrt(acc / cnt) : 0.0;
}

double cost_boundary_flux_residual(const CostGrid& grid, const PriceField& pf) {
    // zero-flux faces: w*(grad P - grad C).n should vanish; measure with
    // one-sided C differences across the last interior face
    const Lattice2D& mesh = grid.mesh;
    const double hx = mesh.hx(), hy = mesh.hy();
    const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
    double worst = 0.0;
    for (int iy = 0; iy < mesh.ny; ++iy)
        for (int ix = 0; ix < mesh.nx; ++ix) {
            const int n = mesh.idx(ix, iy);
            if (!grid.inside[n]) continue;
            for (int f = 0; f < 4; ++f) {
                const int jx = ix + dx[f], jy = iy + dy[f];
                const bool outside = jx < 0 || jx >= mesh.nx || jy < 0 || jy >= mesh.ny ||
                                     !grid.inside[mesh.idx(jx, jy)];
                if (!outside) continue;
                // boundary face at node n in direction f
                double g1c, g2c;
                if (!grid.grad_at(ix, iy, g1c, g2c)) continue;
                double g1, g2;
                pf.gradient(mesh.x(ix), mesh.y(iy), g1, g2);
                const double flux = dx[f] ? (g1 - g1c) * dx[f] : (g2 - g2c) * dy[f];
                worst = std::max(worst, std::abs(grid.weight[n] * flux));
                (void)hx;
                (void)hy;
            }
        }
    return worst;
}

PolyCost PolyCost::fit(const CostGrid& grid, int degree, double rel_err_threshold) {
    PolyCost pc;
    pc.degree_ = degree;
    const int nb = (degree + 1) * (degree + 2) / 2;
    std::vector<std::pair<int, int>> expo;
    for (int d = 0; d <= degree; ++d)
        for (int a = d; a >= 0; --a) expo.emplace_back(a, d - a);

    std::vector<double> xs, ys, vs;
    for (int iy = 0; iy < grid.mesh.ny; ++iy)
        for (int ix = 0; ix < grid.mesh.nx; ++ix)
            if (grid.inside[grid.mesh.idx(ix, iy)]) {
                xs.push_back(grid.mesh.x(ix));
                ys.push_back(grid.mesh.y(iy));
                vs.push_back(grid.values[grid.mesh.idx(ix, iy)]);
            }
    const int m = static_cast<int>(xs.size());
    require(m >= nb, Error::Code::insufficient_support, "poly extension: too few nodes");
    Eigen::MatrixXd X(m, nb);
    Eigen::VectorXd y(m);
    for (int i = 0; i < m; ++i) {
        for (int k = 0; k < nb; ++k)
            X(i, k) = std::pow(xs[i], expo[k].first) * std::pow(ys[i], expo[k].second);
        y[i] = vs[i];
    }
    Eigen::VectorXd beta = (X.transpose() * X).ldlt().solve(X.transpose() * y);
    pc.coef_.assign(beta.data(), beta.data() + nb);
    const Eigen::VectorXd resid = X * beta - y;
    pc.rmse_ = std::sqrt(resid.squaredNorm() / m);
    const double vscale = std::max(1e-12, y.maxCoeff() - y.minCoeff());
    pc.rel_err_ = pc.rmse_ / vscale;
    pc.reliable_ = pc.rel_err_ <= rel_err_threshold;
    return pc;
}

double PolyCost::eval(double q1, double q2) const {
    double acc = 0.0;
    int k = 0;
    for (int d = 0; d <= degree_; ++d)
        for (int a = d; a >= 0; --a) acc += coef_[k++] * std::pow(q1, a) * std::pow(q2, d - a);
    return acc;
}

void PolyCost::grad(double q1, double q2, double& g1, double& g2) const {
    g1 = 0.0;
    g2 = 0.0;
    int k = 0;
    for (int d = 0; d <= degree_; ++d)
        for (int a = d; a >= 0; --a) {
            const int b = d - a;
            if (a > 0) g1 += coef_[k] * a * std::pow(q1, a - 1) * std::pow(q2, b);
            if (b > 0) g2 += coef_[k] * b * std::pow(q1, a) * std::pow(q2, b - 1);
            ++k;
        }
}

}  // namespace screenlab
