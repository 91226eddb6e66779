#include "screenlab/transport.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace screenlab {

namespace {

// minimum-cost assignment by shortest augmenting paths with potentials
std::vector<int> solve_assignment(const Eigen::MatrixXd& cost) {
    const int n = static_cast<int>(cost.rows());
    const double INF = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), INF);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = 0;
            double delta = INF;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0]);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

}  // namespace

Vector2d TransportPlan::map_at(int i) const {
    if (assignment) return types[match[i]];
    Vector2d acc = Vector2d::Zero();
    double mass = 0.0;
    for (int j = 0; j < coupling.cols(); ++j) {
        acc += coupling(i, j) * types[j];
        mass += coupling(i, j);
    }
    return mass > 0 ? Vector2d(acc / mass) : Vector2d::Zero();
}

TransportPlan transport_overid(const std::vector<Vector2d>& choices,
                               const std::vector<Vector2d>& types, TransportConfig cfg) {
    const int n = static_cast<int>(choices.size());
    const int m = static_cast<int>(types.size());
    require(n > 0 && m > 0, Error::Code::invalid_argument, "transport: empty marginals");
    TransportPlan plan;
    plan.choices = choices;
    plan.types = types;

    if (n == m && n <= cfg.assignment_limit) {
        Eigen::MatrixXd cost(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) cost(i, j) = -choices[i].dot(types[j]);
        plan.assignment = true;
        plan.match = solve_assignment(cost);
        double obj = 0.0;
        for (int i = 0; i < n; ++i) obj += choices[i].dot(types[plan.match[i]]);
        plan.objective = obj / n;
        plan.max_marginal_error = 0.0;  // a permutation is exactly feasible
        return plan;
    }

    require(static_cast<long>(n) * m <= 4000L * 4000L, Error::Code::invalid_argument,
            "transport: instance too large for the dense regularized solver");
    // entropic scaling on the gain matrix, uniform marginals a = 1/n, b = 1/m
    Eigen::MatrixXd G(n, m);
    double mean_abs = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
            G(i, j) = choices[i].dot(types[j]);
            mean_abs += std::abs(G(i, j));
        }
    mean_abs /= static_cast<double>(n) * m;
    const double eps = std::max(1e-12, cfg.eps_factor * mean_abs);
    const double gmax = G.maxCoeff();
    Eigen::MatrixXd K = ((G.array() - gmax) / eps).exp();
    Eigen::VectorXd a = Eigen::VectorXd::Constant(n, 1.0 / n);
    Eigen::VectorXd b = Eigen::VectorXd::Constant(m, 1.0 / m);
    Eigen::VectorXd u = Eigen::VectorXd::Ones(n), v = Eigen::VectorXd::Ones(m);
    for (int it = 0; it < cfg.sinkhorn_iter; ++it) {
        u = a.array() / (K * v).array().max(1e-300);
        v = b.array() / (K.transpose() * u).array().max(1e-300);
        if ((it & 63) == 63) {
            Eigen::MatrixXd P = u.asDiagonal() * K * v.asDiagonal();
            const double re = (P.rowwise().sum() - a).cwiseAbs().maxCoeff();
            const double ce = (P.colwise().sum().transpose() - b).cwiseAbs().maxCoeff();
            if (std::max(re, ce) < 0.1 * cfg.marginal_tol) break;
        }
    }
    Eigen::MatrixXd P = u.asDiagonal() * K * v.asDiagonal();
    // round to the feasible polytope: scale rows/cols down, then spread the
    // residual as an outer product
    Eigen::VectorXd r = P.rowwise().sum();
    for (int i = 0; i < n; ++i)
        if (r[i] > a[i]) P.row(i) *= a[i] / r[i];
    Eigen::VectorXd c = P.colwise().sum();
    for (int j = 0; j < m; ++j)
        if (c[j] > b[j]) P.col(j) *= b[j] / c[j];
    Eigen::VectorXd ra = a - P.rowwise().sum();
    Eigen::VectorXd cb = b - P.colwise().sum().transpose();
    const double rmass = ra.sum();
    if (rmass > 1e-300) P += (ra * cb.transpose()) / rmass;

    plan.assignment = false;
    plan.coupling = P;
    plan.objective = (P.array() * G.array()).sum();
    const double re = (P.rowwise().sum() - a).cwiseAbs().maxCoeff();
    const double ce = (P.colwise().sum().transpose() - b).cwiseAbs().maxCoeff();
    plan.max_marginal_error = std::max(re, ce);
    require(plan.max_marginal_error <= cfg.marginal_tol, Error::Code::non_convergence,
            "transport: marginal mismatch " + format_full(plan.max_marginal_error) +
                " after rounding");
    return plan;
}

double transport_map_msd(const TransportPlan& plan,
                         const std::function<Vector2d(const Vector2d&)>& reference) {
    const int n = static_cast<int>(plan.choices.size());
    double acc = 0.0;
    for (int i = 0; i < n; ++i)
        acc += (plan.map_at(i) - reference(plan.choices[i])).squaredNorm();
    return acc / n;
}

}  // namespace screenlab
