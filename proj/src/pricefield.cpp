#include "screenlab/pricefield.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace screenlab {

using Eigen::Matrix2d;
using Eigen::MatrixXd;
using Eigen::Vector2d;

namespace {

double robust_scale(std::vector<double> v) {
    if (v.empty()) return 1.0;
    std::sort(v.begin(), v.end());
    const double lo = v[static_cast<size_t>(0.25 * (v.size() - 1))];
    const double hi = v[static_cast<size_t>(0.75 * (v.size() - 1))];
    return std::max(hi - lo, 1e-12);
}

}  // namespace

PriceField PriceField::fit(const Dataset& ds, PriceFieldConfig cfg) {
    require(ds.size() > 0, Error::Code::insufficient_support, "price fit: empty dataset");
    require(ds.qdim() == 2, Error::Code::dimension_mismatch, "price fit: J=2");
    std::vector<double> qx(ds.size()), qy(ds.size()), p(ds.size());
    for (int i = 0; i < ds.size(); ++i) {
        qx[i] = ds.q(i, 0);
        qy[i] = ds.q(i, 1);
        p[i] = ds.price(i);
    }
    return fit_points(std::move(qx), std::move(qy), std::move(p), cfg);
}

PriceField PriceField::fit_points(std::vector<double> qx, std::vector<double> qy,
                                  std::vector<double> p, PriceFieldConfig cfg) {
    require(qx.size() == qy.size() && qx.size() == p.size(), Error::Code::dimension_mismatch,
            "price fit: ragged inputs");
    require(static_cast<int>(qx.size()) >= cfg.min_points, Error::Code::insufficient_support,
            "price fit: fewer than min_points records");
    PriceField f;
    f.qx_ = std::move(qx);
    f.qy_ = std::move(qy);
    f.p_ = std::move(p);
    f.cfg_ = cfg;
    f.scale_ = robust_scale(f.p_);
    f.qscale_ = std::max(robust_scale(f.qx_), robust_scale(f.qy_));

    const auto [xmin, xmax] = std::minmax_element(f.qx_.begin(), f.qx_.end());
    const auto [ymin, ymax] = std::minmax_element(f.qy_.begin(), f.qy_.end());
    const double pad = 1e-9 + 1e-6 * f.qscale_;
    f.cache_ = Lattice2D{cfg.cache_grid, cfg.cache_grid, *xmin - pad, *xmax + pad, *ymin - pad,
                         *ymax + pad};

    // bucket index sized to the pilot bandwidth
    const int n = static_cast<int>(f.qx_.size());
    const double pilot = 1.2 * f.qscale_ * std::pow(static_cast<double>(n), -1.0 / 6.0);
    f.bcell_ = std::max(pilot, 1e-6 * f.qscale_);
    f.bx0_ = *xmin;
    f.by0_ = *ymin;
    f.bnx_ = std::max(1, static_cast<int>((*xmax - *xmin) / f.bcell_) + 1);
    f.bny_ = std::max(1, static_cast<int>((*ymax - *ymin) / f.bcell_) + 1);
    f.buckets_.assign(static_cast<size_t>(f.bnx_) * f.bny_, {});
    for (int i = 0; i < n; ++i) {
        int bx = std::clamp(static_cast<int>((f.qx_[i] - f.bx0_) / f.bcell_), 0, f.bnx_ - 1);
        int by = std::clamp(static_cast<int>((f.qy_[i] - f.by0_) / f.bcell_), 0, f.bny_ - 1);
        f.buckets_[static_cast<size_t>(by) * f.bnx_ + bx].push_back(i);
    }

    f.bandwidth_ = cfg.bandwidth > 0 ? cfg.bandwidth : f.cv_bandwidth(cfg);
    f.build_cache(cfg);
    return f;
}

void PriceField::neighbors(double q1, double q2, double radius, std::vector<int>& out) const {
    out.clear();
    const int bx0 = std::clamp(static_cast<int>((q1 - radius - bx0_) / bcell_), 0, bnx_ - 1);
    const int bx1 = std::clamp(static_cast<int>((q1 + radius - bx0_) / bcell_), 0, bnx_ - 1);
    const int by0 = std::clamp(static_cast<int>((q2 - radius - by0_) / bcell_), 0, bny_ - 1);
    const int by1 = std::clamp(static_cast<int>((q2 + radius - by0_) / bcell_), 0, bny_ - 1);
    const double r2 = radius * radius;
    for (int by = by0; by <= by1; ++by)
        for (int bx = bx0; bx <= bx1; ++bx)
            for (int i : buckets_[static_cast<size_t>(by) * bnx_ + bx]) {
                const double dx = qx_[i] - q1, dy = qy_[i] - q2;
                if (dx * dx + dy * dy <= r2) out.push_back(i);
            }
}

namespace {

// weighted local quadratic; returns false if the design is rank deficient
bool solve_local(const std::vector<double>& qx, const std::vector<double>& qy,
                 const std::vector<double>& p, const std::vector<int>& idx, double x, double y,
                 double h, double* beta) {
    Eigen::Matrix<double, 6, 6> XtX = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> Xty = Eigen::Matrix<double, 6, 1>::Zero();
    int used = 0;
    for (int i : idx) {
        const double u = qx[i] - x, v = qy[i] - y;
        const double r2 = (u * u + v * v) / (h * h);
        if (r2 >= 1.0) continue;
        const double w = 1.0 - r2;  // Epanechnikov
        Eigen::Matrix<double, 6, 1> phi;
        phi << 1.0, u, v, u * u, u * v, v * v;
        XtX.noalias() += w * phi * phi.transpose();
        Xty.noalias() += w * p[i] * phi;
        ++used;
    }
    if (used < 8) return false;
    Eigen::LDLT<Eigen::Matrix<double, 6, 6>> ldlt(XtX);
    if (ldlt.info() != Eigen::Success) return false;
    Eigen::Matrix<double, 6, 1> b = ldlt.solve(Xty);
    // rank check through the reconstruction residual
    if ((XtX * b - Xty).norm() > 1e-6 * (1.0 + Xty.norm())) return false;
    for (int k = 0; k < 6; ++k) beta[k] = b[k];
    return true;
}

}  // namespace

bool PriceField::local_fit(double q1, double q2, double* val, double* grad, double* hess) const {
    std::vector<int> idx;
    double h = bandwidth_;
    double beta[6];
    for (int attempt = 0; attempt < 6; ++attempt) {
        neighbors(q1, q2, h, idx);
        if (static_cast<int>(idx.size()) >= cfg_.min_points &&
            solve_local(qx_, qy_, p_, idx, q1, q2, h, beta)) {
            if (val) *val = beta[0];
            if (grad) {
                grad[0] = beta[1];
                grad[1] = beta[2];
            }
            if (hess) {
                hess[0] = 2.0 * beta[3];
                hess[1] = beta[4];
                hess[2] = 2.0 * beta[5];
            }
            return true;
        }
        h *= 1.6;  // auto-widen on thin or rank-deficient neighborhoods
        const_cast<PriceField*>(this)->widened_ = true;
    }
    return false;
}

double PriceField::cv_bandwidth(const PriceFieldConfig& cfg) const {
    const int n = static_cast<int>(qx_.size());
    const double pilot = 1.2 * qscale_ * std::pow(static_cast<double>(n), -1.0 / 6.0);
    const double cands[5] = {0.5 * pilot, 0.75 * pilot, pilot, 1.5 * pilot, 2.25 * pilot};

    // deterministic evaluation subsample with fold tags
    Rng rng(cfg.cv_seed);
    const int m = std::min(cfg.cv_points, n);
    std::vector<int> pts(m);
    std::vector<int> fold(m);
    for (int k = 0; k < m; ++k) {
        pts[k] = static_cast<int>(rng.next() % n);
        fold[k] = pts[k] % cfg.cv_folds;
    }

    double best = cands[2], best_err = std::numeric_limits<double>::infinity();
    std::vector<int> idx;
    for (double h : cands) {
        double err = 0.0;
        int cnt = 0;
        for (int k = 0; k < m; ++k) {
            const int i = pts[k];
            neighbors(qx_[i], qy_[i], h, idx);
            // leave the record's fold out
            std::vector<int> keep;
            keep.reserve(idx.size());
            for (int j : idx)
                if ((j % cfg.cv_folds) != fold[k]) keep.push_back(j);
            double beta[6];
            if (static_cast<int>(keep.size()) >= cfg_.min_points &&
                solve_local(qx_, qy_, p_, keep, qx_[i], qy_[i], h, beta)) {
                const double e = p_[i] - beta[0];
                err += e * e;
                ++cnt;
            } else {
                err += scale_ * scale_;  // penalize unusable bandwidths
                ++cnt;
            }
        }
        err /= std::max(cnt, 1);
        if (err < best_err) {
            best_err = err;
            best = h;
        }
    }
    return best;
}

void PriceField::build_cache(const PriceFieldConfig& cfg) {
    const int N = cache_.size();
    cv_.assign(N, 0.0);
    cg1_.assign(N, 0.0);
    cg2_.assign(N, 0.0);
    ch11_.assign(N, 0.0);
    ch12_.assign(N, 0.0);
    ch22_.assign(N, 0.0);
    mask_.assign(N, 0);

    std::vector<int> idx;
    double rss = 0.0;
    int rssn = 0;
    for (int iy = 0; iy < cache_.ny; ++iy)
        for (int ix = 0; ix < cache_.nx; ++ix) {
            const int nd = cache_.idx(ix, iy);
            const double x = cache_.x(ix), y = cache_.y(iy);
            double val, grad[2], hess[3];
            if (!local_fit(x, y, &val, grad, hess)) continue;
            cv_[nd] = val;
            cg1_[nd] = grad[0];
            cg2_[nd] = grad[1];
            ch11_[nd] = hess[0];
            ch12_[nd] = hess[1];
            ch22_[nd] = hess[2];

            // screened-region node conditions
            neighbors(x, y, bandwidth_, idx);
            if (static_cast<int>(idx.size()) < cfg.min_points) continue;
            // local scatter: full-dimensional neighborhoods only
            double mx = 0, my = 0;
            for (int i : idx) {
                mx += qx_[i];
                my += qy_[i];
            }
            mx /= idx.size();
            my /= idx.size();
            double sxx = 0, syy = 0, sxy = 0;
            for (int i : idx) {
                const double dx = qx_[i] - mx, dy = qy_[i] - my;
                sxx += dx * dx;
                syy += dy * dy;
                sxy += dx * dy;
            }
            const double tr = sxx + syy;
            const double det = sxx * syy - sxy * sxy;
            const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
            const double l1 = tr / 2.0 + disc, l2 = tr / 2.0 - disc;
            if (l2 < cfg.scatter_ratio * l1) continue;
            // C3: non-vanishing gradient, PSD Hessian within slack
            const double gscale = scale_ / std::max(qscale_, 1e-12);
            if (std::hypot(grad[0], grad[1]) < cfg.grad_floor * gscale) continue;
            const double htr = hess[0] + hess[2];
            const double hdet = hess[0] * hess[2] - hess[1] * hess[1];
            const double hdisc = std::sqrt(std::max(0.0, htr * htr / 4.0 - hdet));
            const double heig = htr / 2.0 - hdisc;
            const double hscale = gscale / std::max(qscale_, 1e-12);
            if (heig < -cfg.hessian_slack * hscale) continue;
            mask_[nd] = 1;
        }

    for (size_t i = 0; i < qx_.size(); i += std::max<size_t>(1, qx_.size() / 2000)) {
        double val;
        if (local_fit(qx_[i], qy_[i], &val, nullptr, nullptr)) {
            const double e = p_[i] - val;
            rss += e * e;
            ++rssn;
        }
    }
    residual_scale_ = rssn ? std::sqrt(rss / rssn) : 0.0;
}

double PriceField::value(double q1, double q2) const { return cache_.interp(cv_, q1, q2); }

void PriceField::gradient(double q1, double q2, double& g1, double& g2) const {
    g1 = cache_.interp(cg1_, q1, q2);
    g2 = cache_.interp(cg2_, q1, q2);
}

void PriceField::hessian(double q1, double q2, double& h11, double& h12, double& h22) const {
    h11 = cache_.interp(ch11_, q1, q2);
    h12 = cache_.interp(ch12_, q1, q2);
    h22 = cache_.interp(ch22_, q1, q2);
}

bool PriceField::in_mask(double q1, double q2) const {
    if (!cache_.contains(q1, q2)) return false;
    // all four surrounding cache nodes must satisfy the screened conditions
    const double fx = (q1 - cache_.x0) / cache_.hx(), fy = (q2 - cache_.y0) / cache_.hy();
    const int ix = std::clamp(static_cast<int>(fx), 0, cache_.nx - 2);
    const int iy = std::clamp(static_cast<int>(fy), 0, cache_.ny - 2);
    return mask_[cache_.idx(ix, iy)] && mask_[cache_.idx(ix + 1, iy)] &&
           mask_[cache_.idx(ix, iy + 1)] && mask_[cache_.idx(ix + 1, iy + 1)];
}

int PriceField::masked_nodes() const {
    int c = 0;
    for (auto m : mask_) c += m;
    return c;
}

std::vector<std::uint8_t> PriceField::record_mask(const Dataset& ds, const VectorXd& q0) const {
    std::vector<std::uint8_t> out(ds.size(), 0);
    std::vector<int> idx;
    const int k = cfg_.knn;
    for (int i = 0; i < ds.size(); ++i) {
        const double x = ds.q(i, 0), y = ds.q(i, 1);
        // outside-option atom
        if (std::hypot(x - q0[0], y - q0[1]) < 1e-9 * std::max(1.0, qscale_)) continue;
        if (!in_mask(x, y)) continue;
        // kNN scatter: bunched records live on a lower-dimensional set
        double r = bandwidth_ * 0.5;
        for (int attempt = 0; attempt < 5; ++attempt) {
            neighbors(x, y, r, idx);
            if (static_cast<int>(idx.size()) >= k) break;
            r *= 1.7;
        }
        if (static_cast<int>(idx.size()) < std::min(k, 12)) continue;
        double mx = 0, my = 0;
        for (int j : idx) {
            mx += qx_[j];
            my += qy_[j];
        }
        mx /= idx.size();
        my /= idx.size();
        double sxx = 0, syy = 0, sxy = 0;
        for (int j : idx) {
            const double dx = qx_[j] - mx, dy = qy_[j] - my;
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
        }
        const double tr = sxx + syy;
        const double det = sxx * syy - sxy * sxy;
        const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
        const double l1 = tr / 2.0 + disc, l2 = tr / 2.0 - disc;
        if (l2 < cfg_.scatter_ratio * l1) continue;
        out[i] = 1;
    }
    return out;
}

}  // namespace screenlab
