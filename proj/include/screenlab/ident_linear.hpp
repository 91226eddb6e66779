#pragma once

#include <functional>

#include "screenlab/pricefield.hpp"

namespace screenlab {

// Pseudo-types recovered on the perfectly screened region: theta = grad P(q),
// with the induced truncated type density and the truncated choice density.
struct PseudoTypeField {
    std::vector<int> record_index;  // dataset rows with attached pseudo-types
    std::vector<double> t1, t2;     // pseudo-type samples
    int excluded_records = 0;       // records outside the screened mask

    Lattice2D type_grid;
    std::vector<double> density;  // f_hat(.|2), normalized on the grid
    std::vector<double> cdf;      // F_hat by quadrature

    double density_at(double a, double b) const { return type_grid.interp(density, a, b); }
    double cdf_at(double a, double b) const { return type_grid.interp(cdf, a, b); }
};

PseudoTypeField recover_types_linear(const PriceField& pf, const Dataset& ds, const VectorXd& q0);

// kernel density + CDF of the attached pseudo-types on a grid spanning them
void estimate_density_high(PseudoTypeField& ptf, int grid = 81, double bandwidth = 0.0);

// Divergence-form cost PDE on the screened choice region:
//   div{ w (grad P - grad C) } = -w,  w = m*/|det D grad P|,
// zero-flux boundary, finite-volume 5-point stencil, anchored at a reference
// node. Returns the cost on the sub-mesh (defined where the mask holds).
struct CostGrid {
    Lattice2D mesh;
    std::vector<double> values;
    std::vector<std::uint8_t> inside;
    std::vector<double> weight;  // w used in the solve (diagnostics)

    bool grad_at(int ix, int iy, double& g1, double& g2) const;
    int inside_count() const;
};

struct CostPdeConfig {
    int mesh = 61;
    double det_floor = 1e-4;   // relative singular-weighting abort threshold
    double density_bw = 0.0;   // m* kernel bandwidth (0: rule of thumb)
    double anchor_value = 0.0;
};

CostGrid recover_cost_pde(const PseudoTypeField& ptf, const PriceField& pf, const Dataset& ds,
                          CostPdeConfig cfg = {});

// shared finite-volume solve of div{w (grad P - grad C)} = -w, zero flux
CostGrid solve_cost_pde(const PriceField& pf, const Lattice2D& mesh,
                        std::vector<std::uint8_t> inside, std::vector<double> weight,
                        double anchor_value);

// kernel estimate of the truncated choice density on a masked mesh
std::vector<double> truncated_choice_density(const Lattice2D& mesh,
                                             const std::vector<std::uint8_t>& inside,
                                             const std::vector<double>& qx,
                                             const std::vector<double>& qy, double bw = 0.0);

// PDE residual of a candidate cost field on the same mesh (mesh norm);
// the truth-plug-in consistency check and the C5 verdict both use it.
double cost_pde_residual(const CostGrid& grid, const PriceField& pf,
                         const std::function<double(double, double)>& cost);

// boundary zero-flux residual of the solved field (max over boundary faces)
double cost_boundary_flux_residual(const CostGrid& grid, const PriceField& pf);

// Least-squares polynomial extension of the recovered cost (analytic
// continuation surrogate). reliable() is false when the in-sample fit error
// exceeds the threshold.
class PolyCost {
public:
    PolyCost() = default;
    static PolyCost fit(const CostGrid& grid, int degree = 4, double rel_err_threshold = 5e-2);

    double eval(double q1, double q2) const;
    void grad(double q1, double q2, double& g1, double& g2) const;
    int degree() const { return degree_; }
    double in_sample_rmse() const { return rmse_; }
    double in_sample_rel_error() const { return rel_err_; }
    bool reliable() const { return reliable_; }

private:
    int degree_ = 0;
    std::vector<double> coef_;  // basis: q1^a q2^b, a+b <= degree
    double rmse_ = 0.0, rel_err_ = 0.0;
    bool reliable_ = false;
};

}  // namespace screenlab
