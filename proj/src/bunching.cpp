#include "screenlab/bunching.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fftw3.h>
#include <numeric>
#include <sstream>

namespace screenlab {

namespace {

struct Scatter {
    double l1, l2;  // eigenvalues, l1 >= l2
    double vx, vy;  // principal direction
};

Scatter scatter_of(const std::vector<double>& xs, const std::vector<double>& ys,
                   const std::vector<int>& idx) {
    double mx = 0, my = 0;
    for (int i : idx) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= idx.size();
    my /= idx.size();
    double sxx = 0, syy = 0, sxy = 0;
    for (int i : idx) {
        const double dx = xs[i] - mx, dy = ys[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    const double tr = sxx + syy, det = sxx * syy - sxy * sxy;
    const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
    Scatter s;
    s.l1 = tr / 2.0 + disc;
    s.l2 = tr / 2.0 - disc;
    // principal direction of the larger eigenvalue
    if (std::abs(sxy) > 1e-300) {
        s.vx = s.l1 - syy;
        s.vy = sxy;
    } else {
        s.vx = sxx >= syy ? 1.0 : 0.0;
        s.vy = sxx >= syy ? 0.0 : 1.0;
    }
    const double nrm = std::hypot(s.vx, s.vy);
    s.vx /= nrm;
    s.vy /= nrm;
    return s;
}

}  // namespace

BunchingGeometry detect_bunching_set(const Dataset& ds, const VectorXd& q0, DetectConfig cfg) {
    BunchingGeometry geom;
    const int n = ds.size();
    require(n > 0, Error::Code::invalid_argument, "detect_bunching_set: empty dataset");
    require(ds.qdim() == 2, Error::Code::dimension_mismatch,
            "detect_bunching_set: the hyperplane fit is implemented for J=2");

    std::vector<double> xs(n), ys(n);
    double smin = 1e300, smax = -1e300;
    for (int i = 0; i < n; ++i) {
        xs[i] = ds.q(i, 0);
        ys[i] = ds.q(i, 1);
        smin = std::min({smin, xs[i], ys[i]});
        smax = std::max({smax, xs[i], ys[i]});
    }
    const double scale = std::max(smax - smin, 1e-12);

    // candidate pool: off the outside-option atom, lower-dimensional kNN scatter
    std::vector<int> cand;
    {
        // crude spatial hash for kNN gathering
        const int gb = 48;
        std::vector<std::vector<int>> cells(static_cast<size_t>(gb) * gb);
        auto cell_of = [&](double x, double y) {
            int cx = std::clamp(static_cast<int>((x - smin) / scale * (gb - 1)), 0, gb - 1);
            int cy = std::clamp(static_cast<int>((y - smin) / scale * (gb - 1)), 0, gb - 1);
            return cy * gb + cx;
        };
        for (int i = 0; i < n; ++i) {
            if (std::hypot(xs[i] - q0[0], ys[i] - q0[1]) < 1e-9 * scale) continue;
            cells[cell_of(xs[i], ys[i])].push_back(i);
        }
        std::vector<int> neigh;
        for (int i = 0; i < n; ++i) {
            if (std::hypot(xs[i] - q0[0], ys[i] - q0[1]) < 1e-9 * scale) continue;
            neigh.clear();
            int cx = std::clamp(static_cast<int>((xs[i] - smin) / scale * (gb - 1)), 0, gb - 1);
            int cy = std::clamp(static_cast<int>((ys[i] - smin) / scale * (gb - 1)), 0, gb - 1);
            for (int r = 0; r < gb && static_cast<int>(neigh.size()) < cfg.knn; ++r) {
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        if (std::max(std::abs(dx), std::abs(dy)) != r) continue;
                        int jx = cx + dx, jy = cy + dy;
                        if (jx < 0 || jx >= gb || jy < 0 || jy >= gb) continue;
                        for (int j : cells[static_cast<size_t>(jy) * gb + jx])
                            neigh.push_back(j);
                    }
            }
            if (static_cast<int>(neigh.size()) < std::min(cfg.knn, 8)) continue;
            // keep the knn nearest
            std::nth_element(neigh.begin(),
                             neigh.begin() + std::min<size_t>(cfg.knn, neigh.size() - 1),
                             neigh.end(), [&](int a, int b) {
                                 const double da = std::hypot(xs[a] - xs[i], ys[a] - ys[i]);
                                 const double db = std::hypot(xs[b] - xs[i], ys[b] - ys[i]);
                                 return da < db;
                             });
            neigh.resize(std::min<size_t>(cfg.knn, neigh.size()));
            const Scatter s = scatter_of(xs, ys, neigh);
            if (s.l2 < cfg.scatter_ratio * s.l1) cand.push_back(i);
        }
    }
    if (static_cast<int>(cand.size()) < cfg.min_flat_records) return geom;  // no flat found

    // peel lines off the candidate pool: deterministic two-point seeding,
    // inlier counting, TLS refit
    std::vector<char> used(n, 0);
    struct Flat {
        double bx, by, dx, dy;
        std::vector<int> inliers;
    };
    std::vector<Flat> flats;
    Rng rng(20240817);
    std::vector<int> pool = cand;
    for (int pass = 0; pass < 1 + cfg.max_secondary; ++pass) {
        if (static_cast<int>(pool.size()) < cfg.min_flat_records) break;
        Flat best;
        for (int trial = 0; trial < 200; ++trial) {
            const int a = pool[rng.next() % pool.size()];
            const int b = pool[rng.next() % pool.size()];
            const double dx = xs[b] - xs[a], dy = ys[b] - ys[a];
            const double len = std::hypot(dx, dy);
            if (len < 0.05 * scale) continue;
            const double ux = dx / len, uy = dy / len;
            Flat f{xs[a], ys[a], ux, uy, {}};
            for (int i : pool) {
                const double d = std::abs(-(xs[i] - f.bx) * uy + (ys[i] - f.by) * ux);
                if (d <= cfg.inlier_tol * scale) f.inliers.push_back(i);
            }
            if (f.inliers.size() > best.inliers.size()) best = f;
        }
        if (static_cast<int>(best.inliers.size()) < cfg.min_flat_records) break;
        // TLS refit on the inliers
        const Scatter s = scatter_of(xs, ys, best.inliers);
        double mx = 0, my = 0;
        for (int i : best.inliers) {
            mx += xs[i];
            my += ys[i];
        }
        mx /= best.inliers.size();
        my /= best.inliers.size();
        best.bx = mx;
        best.by = my;
        best.dx = s.vx;
        best.dy = s.vy;
        // re-assign inliers after refit
        best.inliers.clear();
        std::vector<int> rest;
        for (int i : pool) {
            const double d = std::abs(-(xs[i] - mx) * s.vy + (ys[i] - my) * s.vx);
            (d <= cfg.inlier_tol * scale ? best.inliers : rest).push_back(i);
        }
        pool.swap(rest);
        flats.push_back(std::move(best));
    }
    if (flats.empty()) return geom;

    std::sort(flats.begin(), flats.end(),
              [](const Flat& a, const Flat& b) { return a.inliers.size() > b.inliers.size(); });
    if (flats.size() >= 2 &&
        static_cast<double>(flats[0].inliers.size()) <
            cfg.dominance_ratio * static_cast<double>(flats[1].inliers.size())) {
        std::ostringstream msg;
        msg << "detect_bunching_set: ambiguous multiple flats (";
        for (const auto& f : flats) msg << f.inliers.size() << " ";
        msg << "records)";
        throw Error(Error::Code::precondition_failed, msg.str());
    }

    const Flat& f = flats[0];
    geom.found = true;
    geom.base1 = f.bx;
    geom.base2 = f.by;
    geom.dir1 = f.dx;
    geom.dir2 = f.dy;
    geom.records = f.inliers;
    for (size_t k = 1; k < flats.size(); ++k) geom.off_flat += flats[k].inliers.size();
    geom.off_flat += static_cast<int>(pool.size());
    geom.secondary_flats = static_cast<int>(flats.size()) - 1;

    // orient so that price increases along the arclength
    double cov = 0;
    for (int i : geom.records) {
        const double t = (xs[i] - f.bx) * f.dx + (ys[i] - f.by) * f.dy;
        cov += t * (ds.price(i));
    }
    if (cov < 0) {
        geom.dir1 = -geom.dir1;
        geom.dir2 = -geom.dir2;
    }
    geom.normal1 = -geom.dir2;
    geom.normal2 = geom.dir1;
    geom.offset = geom.normal1 * geom.base1 + geom.normal2 * geom.base2;

    // TLS fit quality on the assigned records
    const Scatter s = scatter_of(xs, ys, geom.records);
    geom.r_squared = 1.0 - s.l2 / std::max(s.l1 + s.l2, 1e-300);
    require(geom.r_squared >= cfg.min_r_squared, Error::Code::precondition_failed,
            "detect_bunching_set: flat fit R^2 " + format_full(geom.r_squared) +
                " below the required threshold");
    return geom;
}

BunchingIndex bunching_index(const Dataset& ds, const BunchingGeometry& geom, IndexConfig cfg) {
    BunchingIndex out;
    require(geom.found, Error::Code::precondition_failed, "bunching_index: no geometry");
    const int m = static_cast<int>(geom.records.size());
    require(m >= 10, Error::Code::insufficient_support, "bunching_index: too few records");

    // collect (t, p) along the flat
    std::vector<double> t(m), p(m);
    double tmin = 1e300, tmax = -1e300, scale = 0;
    for (int k = 0; k < m; ++k) {
        const int i = geom.records[k];
        t[k] = geom.arclength(ds.q(i, 0), ds.q(i, 1));
        p[k] = ds.price(i);
        tmin = std::min(tmin, t[k]);
        tmax = std::max(tmax, t[k]);
        scale = std::max(scale, std::abs(t[k]));
    }
    const double h = std::max(1e-9, cfg.bandwidth_frac * (tmax - tmin));

    // structural calibration: along q(t) = base + t dir the agent's first-order
    // condition reads (theta o X1) . dir = dP/dt; the index W = (theta o X1) . 1
    // follows when the flat direction has equal components (the bunched bundle
    // moves along the diagonal), giving W = dP/dt / mean(dir).
    const double mean_dir = 0.5 * (geom.dir1 + geom.dir2);
    require(std::abs(mean_dir) > 1e-6, Error::Code::precondition_failed,
            "bunching_index: flat direction orthogonal to the index direction");

    // sort once for the local fits and the rank correlation
    std::vector<int> ord(m);
    std::iota(ord.begin(), ord.end(), 0);
    std::sort(ord.begin(), ord.end(), [&](int a, int b) { return t[a] < t[b]; });

    out.records.reserve(m);
    out.W.reserve(m);
    for (int k = 0; k < m; ++k) {
        const int i = geom.records[k];
        if (geom.distance(ds.q(i, 0), ds.q(i, 1)) >
            cfg.off_flat_tol * std::max(1.0, scale)) {
            ++out.skipped;
            continue;
        }
        // local quadratic fit of p on t around t[k]
        double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, y0 = 0, y1 = 0, y2 = 0;
        for (int j = 0; j < m; ++j) {
            const double u = t[j] - t[k];
            if (std::abs(u) >= h) continue;
            const double w = 1.0 - (u * u) / (h * h);
            s0 += w;
            s1 += w * u;
            s2 += w * u * u;
            s3 += w * u * u * u;
            s4 += w * u * u * u * u;
            y0 += w * p[j];
            y1 += w * u * p[j];
            y2 += w * u * u * p[j];
        }
        Eigen::Matrix3d M;
        M << s0, s1, s2, s1, s2, s3, s2, s3, s4;
        Eigen::Vector3d rhsv(y0, y1, y2);
        Eigen::Vector3d beta = M.ldlt().solve(rhsv);
        const double slope = beta[1];
        const double W = slope / mean_dir;
        out.records.push_back(i);
        out.W.push_back(W);
        const double nx1 = std::hypot(ds.x1(i, 0), ds.x1(i, 1));
        require(nx1 > 1e-12, Error::Code::invalid_argument, "bunching_index: zero X1");
        out.B.push_back(W / nx1);
        out.D1.push_back(ds.x1(i, 0) / nx1);
        out.D2.push_back(ds.x1(i, 1) / nx1);
    }

    // rank correlation of W against arclength over the kept records
    {
        const int mm = static_cast<int>(out.W.size());
        std::vector<int> o(mm);
        std::iota(o.begin(), o.end(), 0);
        std::vector<double> tk;
        tk.reserve(mm);
        for (int i : out.records) tk.push_back(geom.arclength(ds.q(i, 0), ds.q(i, 1)));
        std::vector<double> rt(mm), rw(mm);
        std::vector<int> ot = o, ow = o;
        std::sort(ot.begin(), ot.end(), [&](int a, int b) { return tk[a] < tk[b]; });
        std::sort(ow.begin(), ow.end(), [&](int a, int b) { return out.W[a] < out.W[b]; });
        for (int r = 0; r < mm; ++r) {
            rt[ot[r]] = r;
            rw[ow[r]] = r;
        }
        double num = 0;
        for (int i = 0; i < mm; ++i) {
            const double d = rt[i] - rw[i];
            num += d * d;
        }
        out.rank_correlation =
            mm > 1 ? 1.0 - 6.0 * num / (static_cast<double>(mm) * (static_cast<double>(mm) * mm - 1)) : 1.0;
    }
    return out;
}

RadonEstimate radon_invert(const std::vector<double>& B, const std::vector<double>& D1,
                           const std::vector<double>& D2, RadonConfig cfg) {
    const int n = static_cast<int>(B.size());
    require(n > 0 && D1.size() == B.size() && D2.size() == B.size(),
            Error::Code::dimension_mismatch, "radon_invert: ragged inputs");

    // fold directions into [0, pi)
    std::vector<double> phi(n), b(n);
    for (int i = 0; i < n; ++i) {
        double a = std::atan2(D2[i], D1[i]);
        double bb = B[i];
        if (a < 0) {
            a += M_PI;
            bb = -bb;
        }
        if (a >= M_PI) a -= M_PI;
        phi[i] = a;
        b[i] = bb;
    }

    // bin and merge
    const int nb = cfg.direction_bins;
    std::vector<std::vector<double>> binb(nb);
    for (int i = 0; i < n; ++i) {
        int k = std::clamp(static_cast<int>(phi[i] / M_PI * nb), 0, nb - 1);
        binb[k].push_back(b[i]);
    }
    struct MBin {
        std::vector<double> b;
        double angle_sum = 0;
        double width = 0;
        int nsegs = 0;
    };
    std::vector<MBin> merged;
    MBin cur;
    for (int k = 0; k < nb; ++k) {
        cur.b.insert(cur.b.end(), binb[k].begin(), binb[k].end());
        cur.angle_sum += (k + 0.5) * M_PI / nb;
        cur.width += M_PI / nb;
        cur.nsegs += 1;
        if (static_cast<int>(cur.b.size()) >= cfg.min_per_bin) {
            merged.push_back(std::move(cur));
            cur = MBin{};
        }
    }
    if (!cur.b.empty() && !merged.empty()) {
        // tail remainder joins the last bin
        auto& last = merged.back();
        last.b.insert(last.b.end(), cur.b.begin(), cur.b.end());
        last.angle_sum += cur.angle_sum;
        last.width += cur.width;
        last.nsegs += cur.nsegs;
    }

    // coverage: largest angular gap between adjacent merged-bin centers
    {
        std::ostringstream cover;
        for (int k = 0; k < nb; ++k) cover << binb[k].size() << (k + 1 < nb ? "," : "");
        require(static_cast<int>(merged.size()) >= 8, Error::Code::precondition_failed,
                "radon_invert: direction coverage below threshold (" +
                    std::to_string(merged.size()) + " usable bins; per-bin counts: " +
                    cover.str() + ")");
        double gap = 0;
        for (size_t k = 0; k < merged.size(); ++k) {
            const double a0 = merged[k].angle_sum / merged[k].nsegs;
            const double a1 = merged[(k + 1) % merged.size()].angle_sum /
                              merged[(k + 1) % merged.size()].nsegs;
            double d = (k + 1 < merged.size()) ? a1 - a0 : a1 + M_PI - a0;
            gap = std::max(gap, d);
        }
        require(gap <= cfg.max_gap_radians, Error::Code::precondition_failed,
                "radon_invert: angular gap " + format_full(gap) +
                    " exceeds the coverage threshold; per-bin counts: " + cover.str());
    }

    // common b grid
    const auto [bmin_it, bmax_it] = std::minmax_element(b.begin(), b.end());
    const double pad = 0.15 * std::max(1e-9, *bmax_it - *bmin_it);
    const double blo = *bmin_it - pad, bhi = *bmax_it + pad;
    const int G = cfg.b_grid;
    const double db = (bhi - blo) / (G - 1);

    RadonEstimate out;
    out.b_lo = blo;
    out.b_step = db;

    // KDE per merged bin
    for (auto& mb : merged) {
        const int m = static_cast<int>(mb.b.size());
        double mean = 0, var = 0;
        for (double v : mb.b) mean += v;
        mean /= m;
        for (double v : mb.b) var += (v - mean) * (v - mean);
        var /= std::max(1, m - 1);
        const double bw =
            std::max(1e-3 * (bhi - blo),
                     cfg.bandwidth_factor * 1.06 * std::sqrt(var) * std::pow(m, -0.2));
        std::vector<double> dens(G, 0.0);
        const double inv2h2 = 1.0 / (2.0 * bw * bw);
        const double norm = 1.0 / (m * bw * std::sqrt(2.0 * M_PI));
        for (double v : mb.b) {
            const int j0 = std::max(0, static_cast<int>((v - 6 * bw - blo) / db));
            const int j1 = std::min(G - 1, static_cast<int>((v + 6 * bw - blo) / db) + 1);
            for (int j = j0; j <= j1; ++j) {
                const double d = blo + j * db - v;
                dens[j] += norm * std::exp(-d * d * inv2h2);
            }
        }
        out.projections.push_back(std::move(dens));
        out.bin_angle.push_back(mb.angle_sum / mb.nsegs);
        out.bin_width.push_back(mb.width);
        out.bin_count.push_back(m);
    }

    // Ram-Lak filter with Hann apodization, applied in the frequency domain
    int L = 1;
    while (L < 2 * G) L <<= 1;
    std::vector<double> padded(L, 0.0);
    std::vector<fftw_complex> freq(L / 2 + 1);
    fftw_plan fwd = fftw_plan_dft_r2c_1d(L, padded.data(), freq.data(), FFTW_ESTIMATE);
    fftw_plan bwd = fftw_plan_dft_c2r_1d(L, freq.data(), padded.data(), FFTW_ESTIMATE);
    const double nyquist = 1.0 / (2.0 * db);
    const double cutoff = cfg.hann_cutoff * nyquist;
    std::vector<std::vector<double>> filtered;
    for (const auto& proj : out.projections) {
        std::fill(padded.begin(), padded.end(), 0.0);
        std::copy(proj.begin(), proj.end(), padded.begin());
        fftw_execute(fwd);
        for (int k = 0; k <= L / 2; ++k) {
            const double xi = static_cast<double>(k) / (L * db);
            double w = xi;  // ramp
            if (xi >= cutoff)
                w = 0.0;
            else
                w *= 0.5 * (1.0 + std::cos(M_PI * xi / cutoff));  // Hann
            freq[k][0] *= w;
            freq[k][1] *= w;
        }
        fftw_execute(bwd);
        std::vector<double> f(G);
        for (int j = 0; j < G; ++j) f[j] = padded[j] / L;  // fftw normalization
        filtered.push_back(std::move(f));
    }
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(bwd);

    // back-project onto the reconstruction grid
    out.grid = Lattice2D{cfg.recon_grid, cfg.recon_grid, cfg.recon_lo, cfg.recon_hi, cfg.recon_lo,
                         cfg.recon_hi};
    out.density.assign(out.grid.size(), 0.0);
    for (size_t kb = 0; kb < filtered.size(); ++kb) {
        const double a = out.bin_angle[kb];
        const double ca = std::cos(a), sa = std::sin(a);
        const double w = out.bin_width[kb];
        const auto& f = filtered[kb];
        for (int iy = 0; iy < out.grid.ny; ++iy)
            for (int ix = 0; ix < out.grid.nx; ++ix) {
                const double bb = out.grid.x(ix) * ca + out.grid.y(iy) * sa;
                const double fj = (bb - blo) / db;
                if (fj < 0 || fj > G - 1) continue;
                const int j = std::min(static_cast<int>(fj), G - 2);
                const double tj = fj - j;
                out.density[out.grid.idx(ix, iy)] += w * ((1 - tj) * f[j] + tj * f[j + 1]);
            }
    }

    // clip, renormalize, report
    double clipped = 0.0;
    for (auto& v : out.density)
        if (v < 0) {
            clipped -= v;
            v = 0;
        }
    const double mass = out.grid.integrate(out.density);
    out.pre_normalization_mass = mass;
    out.clipped_mass = clipped * out.grid.hx() * out.grid.hy();
    require(mass > 0, Error::Code::insufficient_support, "radon_invert: empty reconstruction");
    for (auto& v : out.density) v /= mass;
    return out;
}

}  // namespace screenlab
