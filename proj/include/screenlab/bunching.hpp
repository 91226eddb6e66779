#pragma once

#include "screenlab/simulate.hpp"

namespace screenlab {

struct DetectConfig {
    int knn = 24;
    double scatter_ratio = 0.02;   // lambda2/lambda1 below this = on a flat
    double inlier_tol = 1e-3;      // distance to line, in units of the data scale
    int min_flat_records = 60;
    double dominance_ratio = 2.0;  // dominant flat vs runner-up, else ambiguous
    int max_secondary = 4;
    double min_r_squared = 0.999;
};

// Affine bunching manifold in choice space (J=2: a line), detected from the
// records that live on a lower-dimensional set. When several flats exist the
// dominant one is returned and the others are counted; comparable-mass flats
// raise an ambiguity error.
struct BunchingGeometry {
    bool found = false;
    double base1 = 0, base2 = 0;  // point on the line
    double dir1 = 0, dir2 = 0;    // unit direction, oriented so price increases
    double normal1 = 0, normal2 = 0;
    double offset = 0;  // normal . q = offset
    double r_squared = 0;
    std::vector<int> records;  // rows assigned to the dominant flat
    int off_flat = 0;          // flat-like rows not on the dominant flat
    int secondary_flats = 0;

    double arclength(double q1, double q2) const {
        return (q1 - base1) * dir1 + (q2 - base2) * dir2;
    }
    double distance(double q1, double q2) const {
        return std::abs((q1 - base1) * normal1 + (q2 - base2) * normal2);
    }
};

BunchingGeometry detect_bunching_set(const Dataset& ds, const VectorXd& q0,
                                     DetectConfig cfg = {});

// Per-record bunching index W recovered from the marginal price along the
// flat (the bunch family's first-order condition), calibrated to theta . X1
// units through the flat direction; B and D are the normalized pair.
struct BunchingIndex {
    std::vector<int> records;
    std::vector<double> W;
    std::vector<double> B;
    std::vector<double> D1, D2;
    int skipped = 0;
    double rank_correlation = 0.0;  // W vs arclength (monotonicity check)
};

struct IndexConfig {
    double bandwidth_frac = 0.08;  // local fit bandwidth as a fraction of range
    double off_flat_tol = 5e-3;    // relative distance tolerance
};

BunchingIndex bunching_index(const Dataset& ds, const BunchingGeometry& geom,
                             IndexConfig cfg = {});

// ---------------------------------------------------------------- Radon

struct RadonConfig {
    int direction_bins = 64;
    int min_per_bin = 200;
    int b_grid = 512;
    int recon_grid = 101;
    double recon_lo = 0.0, recon_hi = 1.0;
    double bandwidth_factor = 1.0;
    double hann_cutoff = 1.0;        // fraction of the grid Nyquist
    double max_gap_radians = 0.35;   // coverage: largest allowed angular gap
};

struct RadonEstimate {
    Lattice2D grid;
    std::vector<double> density;           // recovered f(.|1), normalized
    double clipped_mass = 0;               // negative mass removed
    double pre_normalization_mass = 0;     // mass before the final renormalization
    std::vector<double> bin_angle;         // merged-bin centers
    std::vector<double> bin_width;
    std::vector<int> bin_count;
    std::vector<std::vector<double>> projections;  // per-bin conditional densities
    double b_lo = 0, b_step = 0;
};

// Filtered back-projection (Ram-Lak with Hann apodization at the grid
// Nyquist) of the per-direction conditional densities of B given D.
// Directions are folded to [0, pi); insufficient angular coverage aborts with
// a coverage map in the error text (the constant-X1 degenerate case).
RadonEstimate radon_invert(const std::vector<double>& B, const std::vector<double>& D1,
                           const std::vector<double>& D2, RadonConfig cfg = {});

}  // namespace screenlab
