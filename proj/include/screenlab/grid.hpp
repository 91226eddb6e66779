#pragma once

#include <functional>
#include <vector>

#include "screenlab/common.hpp"
#include "screenlab/rng.hpp"

namespace screenlab {

// Uniform rectangular lattice on [x0,x1] x [y0,y1], row-major (ix fastest).
struct Lattice2D {
    int nx = 0, ny = 0;
    double x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;

    int size() const { return nx * ny; }
    double hx() const { return (x1 - x0) / (nx - 1); }
    double hy() const { return (y1 - y0) / (ny - 1); }
    double x(int ix) const { return x0 + ix * hx(); }
    double y(int iy) const { return y0 + iy * hy(); }
    int idx(int ix, int iy) const { return iy * nx + ix; }
    bool interior(int ix, int iy) const { return ix > 0 && ix < nx - 1 && iy > 0 && iy < ny - 1; }

    // trapezoid quadrature weight times cell area
    double quad_weight(int ix, int iy) const {
        double w = 1.0;
        if (ix == 0 || ix == nx - 1) w *= 0.5;
        if (iy == 0 || iy == ny - 1) w *= 0.5;
        return w * hx() * hy();
    }

    double integrate(const std::vector<double>& v) const {
        require(static_cast<int>(v.size()) == size(), Error::Code::dimension_mismatch,
                "integrate: field size mismatch");
        double s = 0.0;
        for (int iy = 0; iy < ny; ++iy)
            for (int ix = 0; ix < nx; ++ix) s += quad_weight(ix, iy) * v[idx(ix, iy)];
        return s;
    }

    bool contains(double px, double py) const {
        return px >= x0 && px <= x1 && py >= y0 && py <= y1;
    }

    double interp(const std::vector<double>& v, double px, double py) const {
        double fx = (px - x0) / hx(), fy = (py - y0) / hy();
        int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
        if (ix < 0) ix = 0;
        if (iy < 0) iy = 0;
        if (ix > nx - 2) ix = nx - 2;
        if (iy > ny - 2) iy = ny - 2;
        double tx = fx - ix, ty = fy - iy;
        const double v00 = v[idx(ix, iy)], v10 = v[idx(ix + 1, iy)];
        const double v01 = v[idx(ix, iy + 1)], v11 = v[idx(ix + 1, iy + 1)];
        return (1 - tx) * (1 - ty) * v00 + tx * (1 - ty) * v10 + (1 - tx) * ty * v01 +
               tx * ty * v11;
    }
};

// Density values on a lattice. Stored unnormalized; normalize() rescales so the
// trapezoid quadrature integral is exactly 1.
class DensityGrid {
public:
    DensityGrid() = default;
    DensityGrid(Lattice2D lat, std::vector<double> values) : lat_(lat), values_(std::move(values)) {
        require(static_cast<int>(values_.size()) == lat_.size(), Error::Code::dimension_mismatch,
                "DensityGrid: values size mismatch");
        for (double v : values_)
            require(v >= 0.0, Error::Code::invalid_argument, "DensityGrid: negative density");
    }

    static DensityGrid uniform(Lattice2D lat) {
        std::vector<double> v(lat.size(), 1.0);
        DensityGrid g(lat, std::move(v));
        g.normalize();
        return g;
    }

    static DensityGrid from_function(Lattice2D lat, const std::function<double(double, double)>& f) {
        std::vector<double> v(lat.size());
        for (int iy = 0; iy < lat.ny; ++iy)
            for (int ix = 0; ix < lat.nx; ++ix) v[lat.idx(ix, iy)] = f(lat.x(ix), lat.y(iy));
        DensityGrid g(lat, std::move(v));
        g.normalize();
        return g;
    }

    const Lattice2D& lattice() const { return lat_; }
    const std::vector<double>& values() const { return values_; }
    double at(int ix, int iy) const { return values_[lat_.idx(ix, iy)]; }
    double operator()(double x, double y) const { return lat_.interp(values_, x, y); }

    double integral() const { return lat_.integrate(values_); }

    void normalize() {
        double s = integral();
        require(s > 0.0, Error::Code::invalid_argument, "DensityGrid: zero mass");
        for (double& v : values_) v /= s;
    }

    bool normalized(double tol = 1e-6) const { return std::abs(integral() - 1.0) <= tol; }

    double max_value() const {
        double m = 0.0;
        for (double v : values_) m = std::max(m, v);
        return m;
    }

    // Rejection sampling against the grid maximum; bilinear-interpolated target.
    void sample(Rng& rng, double& sx, double& sy) const {
        const double m = max_value();
        for (int guard = 0; guard < 100000; ++guard) {
            double px = rng.uniform(lat_.x0, lat_.x1);
            double py = rng.uniform(lat_.y0, lat_.y1);
            if (rng.uniform() * m <= (*this)(px, py)) {
                sx = px;
                sy = py;
                return;
            }
        }
        throw Error(Error::Code::non_convergence, "DensityGrid::sample: rejection stalled");
    }

private:
    Lattice2D lat_;
    std::vector<double> values_;
};

}  // namespace screenlab
