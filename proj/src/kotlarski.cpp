#include "screenlab/kotlarski.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace screenlab {

namespace {

using cd = std::complex<double>;

double cdf_lookup(const std::vector<double>& grid, const std::vector<double>& cdf, double v) {
    if (v <= grid.front()) return 0.0;
    if (v >= grid.back()) return 1.0;
    const auto it = std::upper_bound(grid.begin(), grid.end(), v);
    const size_t k = it - grid.begin();
    const double t = (v - grid[k - 1]) / (grid[k] - grid[k - 1]);
    return (1 - t) * cdf[k - 1] + t * cdf[k];
}

// regularized Fourier inversion of a characteristic function sampled on a
// symmetric xi grid; cosine taper against ringing, clip, normalize
void invert_cf(const std::vector<double>& xi, const std::vector<cd>& ch, double lo, double hi,
               int m, std::vector<double>& grid, std::vector<double>& density,
               std::vector<double>& cdf) {
    grid.resize(m);
    density.assign(m, 0.0);
    const double dxi = xi[1] - xi[0];
    const double ximax = std::abs(xi.back());
    for (int j = 0; j < m; ++j) {
        grid[j] = lo + (hi - lo) * j / (m - 1);
        double acc = 0.0;
        for (size_t k = 0; k < xi.size(); ++k) {
            const double taper = 0.5 * (1.0 + std::cos(M_PI * std::abs(xi[k]) / ximax));
            const cd val = ch[k] * std::exp(cd(0.0, -xi[k] * grid[j]));
            acc += taper * val.real();
        }
        density[j] = std::max(0.0, acc * dxi / (2.0 * M_PI));
    }
    // normalize and accumulate
    double mass = 0.0;
    for (int j = 0; j + 1 < m; ++j)
        mass += 0.5 * (density[j] + density[j + 1]) * (grid[j + 1] - grid[j]);
    if (mass > 0)
        for (auto& v : density) v /= mass;
    cdf.assign(m, 0.0);
    for (int j = 1; j < m; ++j)
        cdf[j] = cdf[j - 1] + 0.5 * (density[j] + density[j - 1]) * (grid[j] - grid[j - 1]);
    for (auto& v : cdf) v = std::min(1.0, v);
}

}  // namespace

double DeconvResult::y_cdf_at(double y) const {
    if (y <= 0) return 0.0;
    return cdf_lookup(y_grid, y_cdf, y);
}

double DeconvResult::theta_cdf_at(double t) const {
    if (t <= 0) return 0.0;
    return cdf_lookup(theta_grid, theta_cdf, t);
}

DeconvResult kotlarski_deconv(const std::vector<double>& values, const std::vector<int>& market,
                              std::uint64_t split_seed, KotlarskiConfig cfg) {
    require(values.size() == market.size() && !values.empty(), Error::Code::invalid_argument,
            "kotlarski: ragged or empty input");
    for (double v : values)
        require(v > 0.0, Error::Code::invalid_argument, "kotlarski: nonpositive pseudo-type");

    // group by market, shuffle within market with the recorded seed, pair halves
    std::map<int, std::vector<int>> groups;
    for (size_t i = 0; i < values.size(); ++i) groups[market[i]].push_back(static_cast<int>(i));
    std::vector<double> a, b;  // paired logs
    for (auto& [mid, idx] : groups) {
        Rng rng(split_seed, static_cast<std::uint64_t>(mid));
        for (size_t k = idx.size(); k > 1; --k) std::swap(idx[k - 1], idx[rng.next() % k]);
        const size_t half = idx.size() / 2;
        for (size_t k = 0; k < half; ++k) {
            a.push_back(std::log(values[idx[k]]));
            b.push_back(std::log(values[idx[half + k]]));
        }
    }
    const int P = static_cast<int>(a.size());
    require(P >= 50, Error::Code::insufficient_support, "kotlarski: too few pairs");

    DeconvResult out;
    out.pairs = P;
    double mean_a = 0.0;
    for (double v : a) mean_a += v;
    mean_a /= P;
    out.mean_log_theta = mean_a;  // E[log Y] = 0 under the maintained assumption

    // locate the cutoff: smallest |xi| where |Ch(0,t)| < floor
    auto ch_0t = [&](double t) {
        cd acc(0, 0);
        for (int i = 0; i < P; ++i) acc += std::exp(cd(0.0, t * b[i]));
        return acc / static_cast<double>(P);
    };
    double cutoff = cfg.xi_max;
    for (double t = 0.25; t <= cfg.xi_max; t += 0.25) {
        if (std::abs(ch_0t(t)) < cfg.cf_floor) {
            cutoff = t;
            break;
        }
    }
    out.cutoff = cutoff;

    const int K = cfg.xi_points | 1;  // odd
    out.xi.resize(K);
    for (int k = 0; k < K; ++k) out.xi[k] = -cutoff + 2.0 * cutoff * k / (K - 1);

    // characteristic function pieces on the positive half, then mirror
    const int H = (K - 1) / 2;  // index of xi = 0
    std::vector<cd> ch0(H + 1), ch1(H + 1);  // Ch(0,t), d/dt1 Ch(t1,t)|_{t1=0}
    for (int k = 0; k <= H; ++k) {
        const double t = out.xi[H + k];
        cd c0(0, 0), c1(0, 0);
        for (int i = 0; i < P; ++i) {
            const cd e = std::exp(cd(0.0, t * b[i]));
            c0 += e;
            c1 += cd(0.0, a[i]) * e;
        }
        ch0[k] = c0 / static_cast<double>(P);
        ch1[k] = c1 / static_cast<double>(P);
    }

    // Ch_logY on xi >= 0 by trapezoid integration of Ch1/Ch0, centered inside
    out.ch_y.assign(K, cd(1, 0));
    cd integral(0, 0);
    const double dxi = out.xi[1] - out.xi[0];
    for (int k = 1; k <= H; ++k) {
        const cd r0 = ch1[k - 1] / ch0[k - 1];
        const cd r1 = ch1[k] / ch0[k];
        integral += 0.5 * (r0 + r1) * dxi;
        const double t = out.xi[H + k];
        out.ch_y[H + k] = std::exp(integral - cd(0.0, t * mean_a));
        out.ch_y[H - k] = std::conj(out.ch_y[H + k]);  // real log Y
    }

    // Ch_logTheta = Ch(xi, 0)/Ch_logY(xi)
    out.ch_theta.assign(K, cd(1, 0));
    for (int k = 0; k <= H; ++k) {
        const double t = out.xi[H + k];
        cd ct(0, 0);
        for (int i = 0; i < P; ++i) ct += std::exp(cd(0.0, t * a[i]));
        ct /= static_cast<double>(P);
        const cd denom = out.ch_y[H + k];
        const cd val = std::abs(denom) > 1e-6 ? ct / denom : cd(0, 0);
        out.ch_theta[H + k] = val;
        out.ch_theta[H - k] = std::conj(val);
    }

    // invert to densities on log scales, then transform the grids
    std::vector<double> vgrid, vdens, vcdf;
    {
        // log Y support guess from the half-width of the CF decay
        double lo = -1.5, hi = 1.5;
        invert_cf(out.xi, out.ch_y, lo, hi, cfg.value_grid, vgrid, vdens, vcdf);
        out.y_grid.resize(vgrid.size());
        out.y_cdf = vcdf;
        out.y_density.resize(vgrid.size());
        for (size_t j = 0; j < vgrid.size(); ++j) {
            out.y_grid[j] = std::exp(vgrid[j]);
            out.y_density[j] = vdens[j] / out.y_grid[j];  // change of variables
        }
    }
    {
        double lo = *std::min_element(a.begin(), a.end()) - 1.0;
        double hi = *std::max_element(a.begin(), a.end()) + 1.0;
        invert_cf(out.xi, out.ch_theta, lo, hi, cfg.value_grid, vgrid, vdens, vcdf);
        out.theta_grid.resize(vgrid.size());
        out.theta_cdf = vcdf;
        out.theta_density.resize(vgrid.size());
        for (size_t j = 0; j < vgrid.size(); ++j) {
            out.theta_grid[j] = std::exp(vgrid[j]);
            out.theta_density[j] = vdens[j] / out.theta_grid[j];
        }
    }
    return out;
}

DeconvResult kotlarski_deconv(const Dataset& pseudotypes, std::uint64_t split_seed,
                              KotlarskiConfig cfg) {
    // both pseudo-type coordinates are taste-shifted samples; use the first
    // and carry the market id from x2 column 0
    std::vector<double> values;
    std::vector<int> market;
    for (int i = 0; i < pseudotypes.size(); ++i) {
        values.push_back(pseudotypes.q(i, 0));
        market.push_back(static_cast<int>(pseudotypes.x2(i, 0)));
        values.push_back(pseudotypes.q(i, 1));
        market.push_back(static_cast<int>(pseudotypes.x2(i, 0)));
    }
    return kotlarski_deconv(values, market, split_seed, cfg);
}

}  // namespace screenlab
