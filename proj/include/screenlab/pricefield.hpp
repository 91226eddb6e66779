#pragma once

#include "screenlab/simulate.hpp"

namespace screenlab {

struct PriceFieldConfig {
    double bandwidth = 0.0;      // 0: cross-validated
    int cv_folds = 5;
    int cv_points = 1200;        // subsampled evaluation points for CV
    int min_points = 10;         // minimum neighbors for a local fit
    int cache_grid = 71;         // evaluator cache resolution
    int knn = 32;                // neighborhood size for the record scatter test
    double scatter_ratio = 0.02; // lambda2/lambda1 below this = lower-dimensional
    double grad_floor = 1e-3;    // C3: non-vanishing gradient (relative to scale)
    double hessian_slack = 5e-2; // C3: PSD within tolerance (relative to scale)
    std::uint64_t cv_seed = 1234567;
};

// Local-quadratic fit of price on the choice vector with a cross-validated
// bandwidth. Gradient and Hessian come from the local fit coefficients;
// evaluation goes through a cached grid over the observed bounding box.
// The Q2 mask marks nodes where the screened-region conditions hold:
// enough local support, full-dimensional scatter, non-vanishing gradient,
// positive-semidefinite Hessian (condition C3).
class PriceField {
public:
    static PriceField fit(const Dataset& ds, PriceFieldConfig cfg = {});
    // fit on explicit points (oracles and synthetic tests)
    static PriceField fit_points(std::vector<double> qx, std::vector<double> qy,
                                 std::vector<double> p, PriceFieldConfig cfg = {});

    double value(double q1, double q2) const;
    void gradient(double q1, double q2, double& g1, double& g2) const;
    void hessian(double q1, double q2, double& h11, double& h12, double& h22) const;

    bool in_mask(double q1, double q2) const;
    const Lattice2D& grid() const { return cache_; }
    const std::vector<std::uint8_t>& node_mask() const { return mask_; }
    int masked_nodes() const;

    double bandwidth() const { return bandwidth_; }
    double residual_scale() const { return residual_scale_; }
    bool widened() const { return widened_; }  // rank-deficient fits auto-widened

    // per-record screened-region membership: kNN scatter test + C3 at the
    // record location + off the outside-option atom
    std::vector<std::uint8_t> record_mask(const Dataset& ds, const VectorXd& q0) const;

    // exact local fit at a point (no cache); returns false on thin support
    bool local_fit(double q1, double q2, double* val, double* grad, double* hess) const;

private:
    void build_cache(const PriceFieldConfig& cfg);
    double cv_bandwidth(const PriceFieldConfig& cfg) const;
    void neighbors(double q1, double q2, double radius, std::vector<int>& out) const;

    std::vector<double> qx_, qy_, p_;
    PriceFieldConfig cfg_;
    double bandwidth_ = 0.0;
    double scale_ = 1.0;   // price scale (IQR-based)
    double qscale_ = 1.0;  // choice-space scale
    double residual_scale_ = 0.0;
    bool widened_ = false;

    // bucket index
    double bx0_ = 0, by0_ = 0, bcell_ = 1;
    int bnx_ = 0, bny_ = 0;
    std::vector<std::vector<int>> buckets_;

    Lattice2D cache_;
    std::vector<double> cv_, cg1_, cg2_, ch11_, ch12_, ch22_;
    std::vector<std::uint8_t> mask_;
};

}  // namespace screenlab
