#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "screenlab/model.hpp"

namespace screenlab {

// Node flags
inline constexpr std::uint8_t kFlagOneSidedAlpha = 1;   // alpha used one-sided differences
inline constexpr std::uint8_t kFlagCornerBeta = 2;      // beta used an averaged corner normal
inline constexpr std::uint8_t kFlagAmbiguousLabel = 4;  // participation/Hessian tests both marginal

// Solved mechanism on the type grid: indirect utility, allocation, prices,
// region labels and the equilibrium residual fields.
struct Menu {
    Lattice2D lat;
    std::vector<double> U;
    std::vector<double> U0;
    std::vector<double> rho1, rho2;
    std::vector<double> price;
    std::vector<int> label;  // 0 excluded, 1 bunched, 2 screened
    std::vector<double> alpha;
    std::vector<double> beta;  // boundary nodes; 0 on interior
    std::vector<double> nu1, nu2;
    std::vector<double> pi;
    std::vector<double> surplus;
    std::vector<std::uint8_t> flags;

    // solver diagnostics
    double objective = 0.0;
    double grad_norm = 0.0;
    int iterations = 0;
    bool converged = false;
    double ambiguous_fraction = 0.0;

    int size() const { return lat.size(); }

    double min_participation_slack() const;
    double max_convexity_violation() const;

    // numeric S1/S2 boundary: largest tau over bunched nodes (uniform example)
    double bunching_upper_tau() const;
    // excluded probability mass (quadrature over label-0 nodes)
    double excluded_mass() const;
    // exclusion boundary estimate implied by the excluded mass (uniform example)
    double exclusion_tau_estimate() const;

    void write(const std::string& path) const;
    static Menu read(const std::string& path);
};

struct SolverConfig {
    int mesh = 101;
    double tol_objective = 1e-6;    // relative stationarity (splitting residuals)
    int max_iterations = 24000;
    double tol_convexity = 1e-6;    // allowed constraint residual after polish
    double bunching_rank_tol = 1e-2;
    double exclusion_gap_tol = 5e-4;  // relative contact-detection resolution
    int polish_sweeps = 6000;
    bool warm_start_hierarchy = true;

    void validate() const {
        require(mesh >= 3, Error::Code::invalid_argument, "solver: mesh must be >= 3");
        require(tol_objective > 0 && tol_convexity > 0 && bunching_rank_tol > 0 &&
                    exclusion_gap_tol > 0,
                Error::Code::invalid_argument, "solver: tolerances must be positive");
        require(max_iterations > 0, Error::Code::invalid_argument, "solver: max_iterations");
    }
};

// centered-difference gradient of a node field (one-sided at the boundary)
void gradient_field(const Lattice2D& lat, const std::vector<double>& U, std::vector<double>& g1,
                    std::vector<double>& g2);

// discrete Hessian entries at an interior node, in physical units
void hessian_at(const Lattice2D& lat, const std::vector<double>& U, int ix, int iy, double& hxx,
                double& hyy, double& hxy);

// smallest eigenvalue of the discrete Hessian (interior nodes)
double hessian_eigmin(const Lattice2D& lat, const std::vector<double>& U, int ix, int iy);

// Region labels from participation gap and Hessian rank tests. Ambiguous nodes
// are labeled 0 and flagged; fraction reported in menu.ambiguous_fraction.
void classify_regions(Menu& menu, const SolverConfig& cfg);

// alpha = f + div{ f (theta - grad C(v^{-1}(grad U))) }. Sign convention fixed
// by the uniform example (alpha = 3 on the excluded region) and by the bunch
// balance; boundary-adjacent nodes use one-sided differences and are flagged.
std::vector<double> residual_alpha(const Menu& menu, const Primitives& prim);

// beta = -nu . n on the domain boundary; corner nodes use the averaged normal.
std::vector<double> residual_beta(const Menu& menu, const Primitives& prim);

struct BunchBalance {
    std::vector<double> residuals;  // per-bunch: integral of alpha + endpoint betas
    std::vector<double> bunch_tau;  // mean theta1+theta2 per bunch (reporting)
    double max_abs_residual = 0.0;
    bool empty() const { return residuals.empty(); }
};

// Per-bunch sweeping balance: line integral of alpha along each bunch (in the
// theta1 coordinate) plus the boundary beta terms. Empty report when there is
// no bunching.
BunchBalance sweep_check(const Menu& menu, const Primitives& prim);

// Ground-truth carrier for the uniform-square example: exact fields on the
// excluded and bunched regions; on the screened region U is extended affinely
// and alpha/beta carry the theorem's asserted values (0), not a solved field.
Menu closed_form_menu(const Primitives& prim, const ClosedFormSolution& cfs, int mesh);

}  // namespace screenlab
