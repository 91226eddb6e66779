#include "screenlab/quantile.hpp"

#include <algorithm>
#include <cmath>

namespace screenlab {

QuantileMap::QuantileMap(std::vector<double> sx, std::vector<double> sy, int max_sample,
                         std::uint64_t seed) {
    require(sx.size() == sy.size() && !sx.empty(), Error::Code::invalid_argument,
            "quantile map: ragged or empty sample");
    const int n = static_cast<int>(sx.size());
    if (n <= max_sample) {
        sx_ = std::move(sx);
        sy_ = std::move(sy);
        return;
    }
    // deterministic thinning
    Rng rng(seed);
    sx_.reserve(max_sample);
    sy_.reserve(max_sample);
    for (int k = 0; k < max_sample; ++k) {
        const int i = static_cast<int>(rng.next() % n);
        sx_.push_back(sx[i]);
        sy_.push_back(sy[i]);
    }
}

Vector2d QuantileMap::field(const Vector2d& q) const {
    double a = 0, b = 0;
    int used = 0;
    for (size_t i = 0; i < sx_.size(); ++i) {
        const double dx = q[0] - sx_[i], dy = q[1] - sy_[i];
        const double r = std::hypot(dx, dy);
        if (r < 1e-14) continue;
        a += dx / r;
        b += dy / r;
        ++used;
    }
    if (!used) return Vector2d::Zero();
    return Vector2d(a / used, b / used);
}

Matrix2d QuantileMap::field_jacobian(const Vector2d& q) const {
    Matrix2d J = Matrix2d::Zero();
    int used = 0;
    for (size_t i = 0; i < sx_.size(); ++i) {
        const double dx = q[0] - sx_[i], dy = q[1] - sy_[i];
        const double r2 = dx * dx + dy * dy;
        const double r = std::sqrt(r2);
        if (r < 1e-10) continue;
        const double inv = 1.0 / r;
        J(0, 0) += inv * (1.0 - dx * dx / r2);
        J(0, 1) += inv * (-dx * dy / r2);
        J(1, 1) += inv * (1.0 - dy * dy / r2);
        ++used;
    }
    J(1, 0) = J(0, 1);
    if (used) J /= used;
    return J;
}

Vector2d QuantileMap::sample_mean() const {
    double a = 0, b = 0;
    for (size_t i = 0; i < sx_.size(); ++i) {
        a += sx_[i];
        b += sy_[i];
    }
    return Vector2d(a / sx_.size(), b / sx_.size());
}

void QuantileMap::bounds(Vector2d& lo, Vector2d& hi) const {
    const auto [x0, x1] = std::minmax_element(sx_.begin(), sx_.end());
    const auto [y0, y1] = std::minmax_element(sy_.begin(), sy_.end());
    lo = Vector2d(*x0, *y0);
    hi = Vector2d(*x1, *y1);
}

Vector2d QuantileMap::inverse(const Vector2d& t, bool* fell_back) const {
    if (fell_back) *fell_back = false;
    Vector2d q = sample_mean();
    Vector2d lo, hi;
    bounds(lo, hi);
    const double span = std::max(hi[0] - lo[0], hi[1] - lo[1]) + 1e-12;
    double err = (field(q) - t).norm();
    for (int it = 0; it < 60 && err > 1e-10; ++it) {
        Matrix2d J = field_jacobian(q);
        J(0, 0) += 1e-9;
        J(1, 1) += 1e-9;
        Vector2d step = J.ldlt().solve(t - field(q));
        const double cap = 0.5 * span;
        if (step.norm() > cap) step *= cap / step.norm();
        double scale = 1.0;
        bool ok = false;
        for (int bt = 0; bt < 20; ++bt) {
            Vector2d trial = q + scale * step;
            const double e = (field(trial) - t).norm();
            if (e < err) {
                q = trial;
                err = e;
                ok = true;
                break;
            }
            scale *= 0.5;
        }
        if (!ok) break;
    }
    if (err <= 1e-6) return q;

    // fallback: coordinate-wise monotone bisection on the field components
    if (fell_back) *fell_back = true;
    for (int sweep = 0; sweep < 40; ++sweep) {
        for (int j = 0; j < 2; ++j) {
            double a = lo[j] - 0.5 * span, b = hi[j] + 0.5 * span;
            for (int it = 0; it < 50; ++it) {
                Vector2d probe = q;
                probe[j] = 0.5 * (a + b);
                (field(probe)[j] < t[j] ? a : b) = probe[j];
            }
            q[j] = 0.5 * (a + b);
        }
        if ((field(q) - t).norm() < 1e-8) break;
    }
    return q;
}

double QuantileMap::field_1d(const std::vector<double>& sample, double q) {
    double acc = 0;
    int used = 0;
    for (double s : sample) {
        if (s == q) continue;
        acc += q > s ? 1.0 : -1.0;
        ++used;
    }
    return used ? acc / used : 0.0;
}

double QuantileMap::inverse_1d(std::vector<double> sample, double t) {
    require(!sample.empty(), Error::Code::invalid_argument, "inverse_1d: empty sample");
    require(t > -1.0 && t < 1.0, Error::Code::invalid_argument, "inverse_1d: rank outside (-1,1)");
    std::sort(sample.begin(), sample.end());
    // minimal points of the criterion are the classical (t+1)/2 quantiles
    const double u = 0.5 * (t + 1.0);
    const size_t k = std::min(sample.size() - 1,
                              static_cast<size_t>(std::ceil(u * sample.size()) - 1));
    return sample[std::max<size_t>(k, 0)];
}

Vector2d quantile_match(const QuantileMap& from, const QuantileMap& to, const Vector2d& q,
                        bool* fell_back) {
    return to.inverse(from.field(q), fell_back);
}

}  // namespace screenlab
