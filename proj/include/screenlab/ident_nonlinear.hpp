#pragma once

#include "screenlab/ident_linear.hpp"
#include "screenlab/quantile.hpp"

namespace screenlab {

// Two cost regimes sharing primitives: fitted price fields, truncated choice
// samples and their quantile maps, and (after find_fixed_point) the bundle
// where the two marginal-price fields cross.
struct RegimePair {
    PriceField pf1, pf2;
    QuantileMap qm1, qm2;
    std::vector<double> q1x, q1y, q2x, q2y;  // screened choice samples per regime
    int excluded1 = 0, excluded2 = 0;

    Vector2d q_hat = Vector2d::Zero();
    double gap = std::numeric_limits<double>::infinity();  // relative gradient gap at q_hat
    bool fixed_point_ok = false;
    bool sign_condition = false;
    double sign_consistency = 0.0;

    bool in_common(double x, double y) const { return pf1.in_mask(x, y) && pf2.in_mask(x, y); }
};

RegimePair build_regime_pair(const Dataset& ds, const VectorXd& q0, PriceFieldConfig pfc = {});

// componentwise ratio map r_{l',l}: grad P_l(q) o theta o (grad P_{l'}(q))^-1
Vector2d gradient_ratio(const PriceField& pf_l, const PriceField& pf_lprime,
                        const Vector2d& theta, const Vector2d& q, double floor = 1e-8);

struct FixedPointConfig {
    int mesh = 81;
    double accept_tol = 0.05;    // relative gradient gap accepted as a crossing
    double probe_radius = 0.15;  // neighborhood for the sign condition
    double consistency = 0.9;    // fraction of probes that must agree
};

// q_hat minimizes |grad P_1 - grad P_2| over the common screened mesh; hard
// error when the minimum stays above tolerance (the identification
// precondition fails without a crossing). Also verifies the attractiveness
// sign condition on a neighborhood and records it in the pair.
void find_fixed_point(RegimePair& rp, FixedPointConfig cfg = {});

struct IterationConfig {
    int L_max = 200;
    double tol = 0.0;  // 0: half a mesh cell of the fixed-point mesh
    double cell = 0.02;
};

struct IterationResult {
    Vector2d theta = Vector2d::Zero();
    std::vector<Vector2d> trajectory;
    int branch = 1;  // 1: forward s_{1,2} steps, 2: s_{2,1} steps
    bool converged = false;
};

// Accumulates the componentwise gradient-ratio product along the
// quantile-matching iteration toward the fixed point; the anchor is
// theta0 = grad P_1(q_hat) (normalization grad v(q_hat) = 1).
IterationResult iterate_type_recovery(const RegimePair& rp, const Vector2d& q_start,
                                      IterationConfig cfg = {});

struct TypeField {
    Lattice2D grid;
    std::vector<double> t1, t2;
    std::vector<std::uint8_t> ok;
    int failures = 0;
};

TypeField recover_type_field(const RegimePair& rp, int grid = 25, IterationConfig icfg = {});

// grad v_hat componentwise from consumer optimality grad P = theta o grad v;
// the separable 1-D projections (median over the cross coordinate) are what
// downstream cost recovery consumes.
struct MarginalUtility {
    Lattice2D grid;
    std::vector<double> dv1_field, dv2_field;
    std::vector<std::uint8_t> ok;
    std::vector<double> axis1, dv1, axis2, dv2;  // separable projections
    int nonpositive = 0;

    double dv(int j, double qj) const;
    double d2v(int j, double qj) const;  // finite differences of the projection
};

MarginalUtility recover_marginal_utility(const TypeField& tf, const PriceField& pf1);

// regime-specific divergence-form cost PDE with weight m*/|det D theta|,
// the Jacobian determinant computed from the differentiated optimality
// relation D theta = diag(1/v') [D grad P - diag(grad P v''/v')]
CostGrid recover_cost_nonlinear(const RegimePair& rp, int regime, const MarginalUtility& mu,
                                CostPdeConfig cfg = {});

// |det D theta| from the displayed identity at a point (shared with tests)
double type_jacobian_det(const PriceField& pf, const MarginalUtility& mu, double x, double y);

}  // namespace screenlab
