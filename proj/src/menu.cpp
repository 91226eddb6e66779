#include "screenlab/menu.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace screenlab {

void gradient_field(const Lattice2D& lat, const std::vector<double>& U, std::vector<double>& g1,
                    std::vector<double>& g2) {
    const int nx = lat.nx, ny = lat.ny;
    const double hx = lat.hx(), hy = lat.hy();
    g1.assign(lat.size(), 0.0);
    g2.assign(lat.size(), 0.0);
    for (int iy = 0; iy < ny; ++iy) {
        for (int ix = 0; ix < nx; ++ix) {
            const int n = lat.idx(ix, iy);
            if (ix == 0)
                g1[n] = (U[lat.idx(1, iy)] - U[n]) / hx;
            else if (ix == nx - 1)
                g1[n] = (U[n] - U[lat.idx(nx - 2, iy)]) / hx;
            else
                g1[n] = (U[lat.idx(ix + 1, iy)] - U[lat.idx(ix - 1, iy)]) / (2 * hx);
            if (iy == 0)
                g2[n] = (U[lat.idx(ix, 1)] - U[n]) / hy;
            else if (iy == ny - 1)
                g2[n] = (U[n] - U[lat.idx(ix, ny - 2)]) / hy;
            else
                g2[n] = (U[lat.idx(ix, iy + 1)] - U[lat.idx(ix, iy - 1)]) / (2 * hy);
        }
    }
}

void hessian_at(const Lattice2D& lat, const std::vector<double>& U, int ix, int iy, double& hxx,
                double& hyy, double& hxy) {
    require(lat.interior(ix, iy), Error::Code::invalid_argument, "hessian_at: interior only");
    const double hx = lat.hx(), hy = lat.hy();
    const double c = U[lat.idx(ix, iy)];
    hxx = (U[lat.idx(ix + 1, iy)] - 2 * c + U[lat.idx(ix - 1, iy)]) / (hx * hx);
    hyy = (U[lat.idx(ix, iy + 1)] - 2 * c + U[lat.idx(ix, iy - 1)]) / (hy * hy);
    hxy = (U[lat.idx(ix + 1, iy + 1)] + U[lat.idx(ix - 1, iy - 1)] - U[lat.idx(ix + 1, iy - 1)] -
           U[lat.idx(ix - 1, iy + 1)]) /
          (4 * hx * hy);
}

double hessian_eigmin(const Lattice2D& lat, const std::vector<double>& U, int ix, int iy) {
    double a, b, m;
    hessian_at(lat, U, ix, iy, a, b, m);
    const double tr = a + b, det = a * b - m * m;
    const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
    return tr / 2.0 - disc;
}

double Menu::min_participation_slack() const {
    double s = std::numeric_limits<double>::infinity();
    for (int n = 0; n < size(); ++n) s = std::min(s, U[n] - U0[n]);
    return s;
}

double Menu::max_convexity_violation() const {
    double worst = 0.0;
    const int nx = lat.nx, ny = lat.ny;
    for (int iy = 0; iy < ny; ++iy)
        for (int ix = 1; ix < nx - 1; ++ix)
            worst = std::max(worst, -(U[lat.idx(ix + 1, iy)] - 2 * U[lat.idx(ix, iy)] +
                                      U[lat.idx(ix - 1, iy)]));
    for (int iy = 1; iy < ny - 1; ++iy)
        for (int ix = 0; ix < nx; ++ix)
            worst = std::max(worst, -(U[lat.idx(ix, iy + 1)] - 2 * U[lat.idx(ix, iy)] +
                                      U[lat.idx(ix, iy - 1)]));
    for (int iy = 1; iy < ny - 1; ++iy)
        for (int ix = 1; ix < nx - 1; ++ix) {
            const double c = U[lat.idx(ix, iy)];
            worst = std::max(
                worst, -(U[lat.idx(ix + 1, iy + 1)] - 2 * c + U[lat.idx(ix - 1, iy - 1)]));
            worst = std::max(
                worst, -(U[lat.idx(ix + 1, iy - 1)] - 2 * c + U[lat.idx(ix - 1, iy + 1)]));
        }
    return worst;
}

double Menu::bunching_upper_tau() const {
    // average tau at label 1 -> 2 transitions along rows
    std::vector<double> taus;
    for (int iy = 0; iy < lat.ny; ++iy)
        for (int ix = 0; ix + 1 < lat.nx; ++ix)
            if (label[lat.idx(ix, iy)] == 1 && label[lat.idx(ix + 1, iy)] == 2)
                taus.push_back(lat.x(ix) + 0.5 * lat.hx() + lat.y(iy));
    if (taus.empty()) return 0.0;
    return std::accumulate(taus.begin(), taus.end(), 0.0) / taus.size();
}

double Menu::excluded_mass() const {
    double mass = 0.0, total = 0.0;
    for (int iy = 0; iy < lat.ny; ++iy)
        for (int ix = 0; ix < lat.nx; ++ix) {
            const double w = lat.quad_weight(ix, iy);
            total += w;
            if (label[lat.idx(ix, iy)] == 0) mass += w;
        }
    return mass / total;
}

double Menu::exclusion_tau_estimate() const {
    // Exclusion boundary position implied by the excluded mass. For the
    // uniform square the equilibrium excluded mass is tau0^2/2, an invariant
    // that is far more mesh-stable than the pointwise label transition.
    return std::sqrt(2.0 * excluded_mass());
}

void classify_regions(Menu& menu, const SolverConfig& cfg) {
    const Lattice2D& lat = menu.lat;
    const int nx = lat.nx, ny = lat.ny;
    const int N = lat.size();
    menu.label.assign(N, 2);
    if (menu.flags.size() != static_cast<size_t>(N)) menu.flags.assign(N, 0);

    const double uscale = std::max(1e-12, *std::max_element(menu.U.begin(), menu.U.end()) -
                                              *std::min_element(menu.U.begin(), menu.U.end()));
    const double gap = cfg.exclusion_gap_tol * std::max(1.0, uscale);

    std::vector<double> eig(N, std::numeric_limits<double>::quiet_NaN());
    for (int iy = 1; iy < ny - 1; ++iy)
        for (int ix = 1; ix < nx - 1; ++ix)
            eig[lat.idx(ix, iy)] = hessian_eigmin(lat, menu.U, ix, iy);
    // boundary nodes inherit the nearest interior value
    for (int iy = 0; iy < ny; ++iy)
        for (int ix = 0; ix < nx; ++ix) {
            if (!lat.interior(ix, iy)) {
                int jx = std::clamp(ix, 1, nx - 2), jy = std::clamp(iy, 1, ny - 2);
                eig[lat.idx(ix, iy)] = eig[lat.idx(jx, jy)];
            }
        }

    // fixed-point of the scale-free rank threshold: median eigenvalue over the
    // current screened set
    double threshold = 0.0;
    std::vector<int>& lbl = menu.label;
    for (int pass = 0; pass < 3; ++pass) {
        std::vector<double> pool;
        for (int n = 0; n < N; ++n) {
            if (menu.U[n] - menu.U0[n] <= gap) continue;
            if (pass == 0 || lbl[n] == 2) pool.push_back(eig[n]);
        }
        if (pool.empty()) break;
        std::nth_element(pool.begin(), pool.begin() + pool.size() / 2, pool.end());
        threshold = cfg.bunching_rank_tol * std::max(0.0, pool[pool.size() / 2]);
        for (int n = 0; n < N; ++n) {
            if (menu.U[n] - menu.U0[n] <= gap)
                lbl[n] = 0;
            else
                lbl[n] = (eig[n] < threshold) ? 1 : 2;
        }
    }

    // ambiguity: participation marginal and Hessian test near its threshold;
    // such nodes go to label 0 and are flagged (continuum partition not claimed)
    int ambiguous = 0;
    for (int n = 0; n < N; ++n) {
        const double slack = menu.U[n] - menu.U0[n];
        if (slack > gap && slack <= 2 * gap && eig[n] >= 0.5 * threshold &&
            eig[n] <= 2.0 * threshold) {
            lbl[n] = 0;
            menu.flags[n] |= kFlagAmbiguousLabel;
            ++ambiguous;
        }
    }
    menu.ambiguous_fraction = static_cast<double>(ambiguous) / N;
}

static void distortion_field(const Menu& menu, const Primitives& prim, std::vector<double>& F1,
                             std::vector<double>& F2) {
    const Lattice2D& lat = menu.lat;
    F1.assign(lat.size(), 0.0);
    F2.assign(lat.size(), 0.0);
    VectorXd q(2);
    for (int iy = 0; iy < lat.ny; ++iy)
        for (int ix = 0; ix < lat.nx; ++ix) {
            const int n = lat.idx(ix, iy);
            q[0] = menu.rho1[n];
            q[1] = menu.rho2[n];
            const VectorXd gc = prim.cost().grad(q);
            const double f = prim.density()(lat.x(ix), lat.y(iy));
            F1[n] = f * (lat.x(ix) - gc[0]);
            F2[n] = f * (lat.y(iy) - gc[1]);
        }
}

std::vector<double> residual_alpha(const Menu& menu, const Primitives& prim) {
    const Lattice2D& lat = menu.lat;
    std::vector<double> F1, F2;
    distortion_field(menu, prim, F1, F2);
    std::vector<double> alpha(lat.size(), 0.0);
    const double hx = lat.hx(), hy = lat.hy();
    for (int iy = 0; iy < lat.ny; ++iy)
        for (int ix = 0; ix < lat.nx; ++ix) {
            const int n = lat.idx(ix, iy);
            double d1, d2;
            if (ix == 0)
                d1 = (F1[lat.idx(1, iy)] - F1[n]) / hx;
            else if (ix == lat.nx - 1)
                d1 = (F1[n] - F1[lat.idx(lat.nx - 2, iy)]) / hx;
            else
                d1 = (F1[lat.idx(ix + 1, iy)] - F1[lat.idx(ix - 1, iy)]) / (2 * hx);
            if (iy == 0)
                d2 = (F2[lat.idx(ix, 1)] - F2[n]) / hy;
            else if (iy == lat.ny - 1)
                d2 = (F2[n] - F2[lat.idx(ix, lat.ny - 2)]) / hy;
            else
                d2 = (F2[lat.idx(ix, iy + 1)] - F2[lat.idx(ix, iy - 1)]) / (2 * hy);
            alpha[n] = prim.density()(lat.x(ix), lat.y(iy)) + d1 + d2;
        }
    return alpha;
}

std::vector<double> residual_beta(const Menu& menu, const Primitives& prim) {
    const Lattice2D& lat = menu.lat;
    std::vector<double> F1, F2;
    distortion_field(menu, prim, F1, F2);
    std::vector<double> beta(lat.size(), 0.0);
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    for (int iy = 0; iy < lat.ny; ++iy)
        for (int ix = 0; ix < lat.nx; ++ix) {
            const bool left = ix == 0, right = ix == lat.nx - 1;
            const bool bottom = iy == 0, top = iy == lat.ny - 1;
            if (!(left || right || bottom || top)) continue;
            const int n = lat.idx(ix, iy);
            double n1 = (right ? 1.0 : 0.0) - (left ? 1.0 : 0.0);
            double n2 = (top ? 1.0 : 0.0) - (bottom ? 1.0 : 0.0);
            if ((left || right) && (bottom || top)) {
                n1 *= inv_sqrt2;  // corner: averaged normal
                n2 *= inv_sqrt2;
            }
            beta[n] = -(F1[n] * n1 + F2[n] * n2);
        }
    return beta;
}

BunchBalance sweep_check(const Menu& menu, const Primitives& prim) {
    const Lattice2D& lat = menu.lat;
    BunchBalance out;

    struct Node {
        int ix, iy;
        double level;  // rho1 + rho2, constant within a bunch
    };
    std::vector<Node> bunched;
    for (int iy = 0; iy < lat.ny; ++iy)
        for (int ix = 0; ix < lat.nx; ++ix) {
            const int n = lat.idx(ix, iy);
            if (menu.label[n] == 1) bunched.push_back({ix, iy, menu.rho1[n] + menu.rho2[n]});
        }
    if (bunched.empty()) return out;

    // cluster by allocation level: sort, split at gaps wider than both an
    // absolute floor and half the median inter-level gap
    std::sort(bunched.begin(), bunched.end(),
              [](const Node& a, const Node& b) { return a.level < b.level; });
    std::vector<double> gaps;
    for (size_t i = 1; i < bunched.size(); ++i) {
        double g = bunched[i].level - bunched[i - 1].level;
        if (g > 1e-12) gaps.push_back(g);
    }
    double split = 1e-9;
    if (!gaps.empty()) {
        std::sort(gaps.begin(), gaps.end());
        split = std::max(split, 0.5 * gaps[gaps.size() / 2]);
    }

    std::vector<double> alpha = menu.alpha.empty() ? residual_alpha(menu, prim) : menu.alpha;
    std::vector<double> beta = menu.beta.empty() ? residual_beta(menu, prim) : menu.beta;

    size_t start = 0;
    while (start < bunched.size()) {
        size_t end = start + 1;
        while (end < bunched.size() && bunched[end].level - bunched[end - 1].level <= split) ++end;

        // integrate alpha along the bunch against theta1 (trapezoid), add the
        // boundary betas at bunch nodes on the domain boundary
        std::vector<std::pair<double, double>> pts;  // (theta1, alpha)
        double beta_sum = 0.0;
        double tau_sum = 0.0;
        for (size_t k = start; k < end; ++k) {
            const int ix = bunched[k].ix, iy = bunched[k].iy;
            const int n = lat.idx(ix, iy);
            pts.emplace_back(lat.x(ix), alpha[n]);
            tau_sum += lat.x(ix) + lat.y(iy);
            const bool on_boundary =
                ix == 0 || ix == lat.nx - 1 || iy == 0 || iy == lat.ny - 1;
            if (on_boundary) beta_sum += beta[n];
        }
        std::sort(pts.begin(), pts.end());
        double integral = 0.0;
        for (size_t k = 1; k < pts.size(); ++k)
            integral += 0.5 * (pts[k].second + pts[k - 1].second) * (pts[k].first - pts[k - 1].first);
        if (pts.size() >= 2) {  // single-node clusters carry no line measure
            out.residuals.push_back(integral + beta_sum);
            out.bunch_tau.push_back(tau_sum / (end - start));
        }
        start = end;
    }
    for (double r : out.residuals) out.max_abs_residual = std::max(out.max_abs_residual, std::abs(r));
    return out;
}

Menu closed_form_menu(const Primitives& prim, const ClosedFormSolution& cfs, int mesh) {
    require(prim.utility().variant() == UtilitySpec::Variant::linear, Error::Code::invalid_argument,
            "closed_form_menu: linear utility example");
    Menu m;
    m.lat = Lattice2D{mesh, mesh, 0.0, 1.0, 0.0, 1.0};
    const int N = m.lat.size();
    m.U.assign(N, 0.0);
    m.U0.assign(N, 0.0);
    m.rho1.assign(N, 0.0);
    m.rho2.assign(N, 0.0);
    m.price.assign(N, 0.0);
    m.label.assign(N, 0);
    m.alpha.assign(N, 0.0);
    m.beta.assign(N, 0.0);
    m.nu1.assign(N, 0.0);
    m.nu2.assign(N, 0.0);
    m.pi.assign(N, 0.0);
    m.surplus.assign(N, 0.0);
    m.flags.assign(N, 0);
    m.converged = true;

    const double c = cfs.c();
    const double tau1 = cfs.tau1();
    // On clipped bunches (tau > 1) the bunch-aggregate balance with edge betas
    // gives rho_b(tau) = (2 tau - 3 tau^2/4 - 1) / (c (2 - tau)), joined
    // continuously at tau = 1; verified against the grid solver.
    auto rho_bunch = [&](double tau) {
        if (tau <= 1.0) return cfs.rho_b(tau);
        return (2.0 * tau - 0.75 * tau * tau - 1.0) / (c * (2.0 - tau));
    };
    auto u_bunch = [&](double tau) {
        if (tau <= 1.0) return cfs.bunch_utility(tau);
        // integrate the upper branch from 1
        const int steps = 200;
        double u = cfs.bunch_utility(1.0), t = 1.0;
        const double dt = (tau - 1.0) / steps;
        for (int s = 0; s < steps; ++s) {
            u += 0.5 * (rho_bunch(t) + rho_bunch(t + dt)) * dt;
            t += dt;
        }
        return u;
    };

    for (int iy = 0; iy < mesh; ++iy)
        for (int ix = 0; ix < mesh; ++ix) {
            const int n = m.lat.idx(ix, iy);
            const double t1 = m.lat.x(ix), t2 = m.lat.y(iy);
            const double tau = t1 + t2;
            const int lbl = cfs.classify(t1, t2);
            m.label[n] = lbl;
            double r = 0.0, u = 0.0, a = 0.0;
            if (lbl == 0) {
                a = 3.0;
            } else if (lbl == 1) {
                r = rho_bunch(tau);
                u = u_bunch(tau);
                if (tau <= 1.0)
                    a = cfs.bunch_alpha(tau);
                else
                    a = 3.0 - 2.0 * c *
                                  ((rho_bunch(tau + 1e-6) - rho_bunch(tau - 1e-6)) / 2e-6);
            } else {
                // affine continuation; alpha = 0 is the theorem's assertion on
                // the screened region, not a solved field
                r = rho_bunch(tau1);
                u = u_bunch(tau1) + r * (tau - tau1);
                a = 0.0;
            }
            m.rho1[n] = r;
            m.rho2[n] = r;
            m.U[n] = u;
            m.alpha[n] = a;
            m.price[n] = t1 * r + t2 * r - u;
            const double cost = 0.5 * c * 2.0 * r * r;
            m.pi[n] = (t1 + t2) * r - cost - u;
            m.surplus[n] = (t1 + t2) * r - cost;
            m.nu1[n] = t1 - c * r;
            m.nu2[n] = t2 - c * r;
        }
    m.beta = residual_beta(m, prim);
    m.objective = 0.0;
    return m;
}

void Menu::write(const std::string& path) const {
    std::ostringstream meta;
    meta << "lattice " << lat.nx << " " << lat.ny << " " << format_full(lat.x0) << " "
         << format_full(lat.x1) << " " << format_full(lat.y0) << " " << format_full(lat.y1);
    std::ostringstream diag;
    diag << "solver objective=" << format_full(objective) << " grad_norm=" << format_full(grad_norm)
         << " iterations=" << iterations << " converged=" << (converged ? 1 : 0);

    const int N = size();
    std::vector<Column> cols;
    auto add = [&](const char* name, const std::vector<double>& v) { cols.push_back({name, v}); };
    std::vector<double> t1(N), t2(N), lbl(N), flg(N);
    for (int iy = 0; iy < lat.ny; ++iy)
        for (int ix = 0; ix < lat.nx; ++ix) {
            int n = lat.idx(ix, iy);
            t1[n] = lat.x(ix);
            t2[n] = lat.y(iy);
            lbl[n] = label[n];
            flg[n] = flags[n];
        }
    add("theta1", t1);
    add("theta2", t2);
    add("U", U);
    add("U0", U0);
    add("rho1", rho1);
    add("rho2", rho2);
    add("price", price);
    cols.push_back({"label", lbl});
    add("alpha", alpha);
    add("beta", beta);
    add("nu1", nu1);
    add("nu2", nu2);
    add("profit", pi);
    add("surplus", surplus);
    cols.push_back({"flags", flg});
    write_columns(path, {meta.str(), diag.str()}, cols);
}

Menu Menu::read(const std::string& path) {
    // re-parse the lattice comment, then columns
    std::string text = read_text_file(path);
    Menu m;
    {
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
            if (line.rfind("# lattice ", 0) == 0) {
                std::istringstream ls(line.substr(10));
                ls >> m.lat.nx >> m.lat.ny >> m.lat.x0 >> m.lat.x1 >> m.lat.y0 >> m.lat.y1;
            }
        }
    }
    require(m.lat.nx > 0 && m.lat.ny > 0, Error::Code::io_error, "menu file lacks lattice header");
    auto cols = read_columns(path);
    auto find = [&](const std::string& name) -> std::vector<double>& {
        for (auto& c : cols)
            if (c.name == name) return c.values;
        throw Error(Error::Code::io_error, "menu file missing column " + name);
    };
    m.U = find("U");
    m.U0 = find("U0");
    m.rho1 = find("rho1");
    m.rho2 = find("rho2");
    m.price = find("price");
    m.alpha = find("alpha");
    m.beta = find("beta");
    m.nu1 = find("nu1");
    m.nu2 = find("nu2");
    m.pi = find("profit");
    m.surplus = find("surplus");
    for (double v : find("label")) m.label.push_back(static_cast<int>(v));
    for (double v : find("flags")) m.flags.push_back(static_cast<std::uint8_t>(v));
    require(static_cast<int>(m.U.size()) == m.lat.size(), Error::Code::io_error,
            "menu file row count mismatch");
    return m;
}

}  // namespace screenlab
