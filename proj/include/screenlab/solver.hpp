#pragma once

#include "screenlab/menu.hpp"

namespace screenlab {

// Finite-dimensional transcription of the seller's problem on a triangulated
// lattice (P1 elements, each cell split along its up-diagonal):
//   maximize  sum_T area_T f_T [theta_T . g_T - mean_T(U) - C(v^{-1}(g_T))]
// over nodal U, where g_T is the per-triangle gradient, subject to
//   U >= U0                     (participation)
//   g_T >= 0                    (allocations stay in R+^J)
//   gradient-jump >= 0 across every interior edge (piecewise-linear convexity)
//
// Per-triangle gradients avoid the kink smearing of nodal finite differences,
// which otherwise biases the exclusion region at practical mesh sizes.
//
// The production solver and the test oracle share this program definition;
// they differ only in how they solve it.
class DiscreteProgram {
public:
    DiscreteProgram(const Primitives& prim, Lattice2D lat);

    const Lattice2D& lattice() const { return lat_; }
    const std::vector<double>& outside() const { return U0_; }

    double objective(const std::vector<double>& U) const;
    void gradient(const std::vector<double>& U, std::vector<double>& grad) const;

    // constraint family as halfspaces c . U >= 0 (up to 4 nodes each)
    struct Halfspace {
        int node[4];
        double coef[4];
        int len;
        double norm2;
    };
    const std::vector<Halfspace>& halfspaces() const { return rows_; }

    struct Triangle {
        int a, b, c;        // nodes; gradient g1 = (U[gb1]-U[ga1])/hx etc.
        int ga1, gb1, ga2, gb2;
        double tx, ty;      // centroid
        double warea;       // area x density(centroid)
    };
    const std::vector<Triangle>& triangles() const { return tris_; }

    void project_sweep(std::vector<double>& U) const;
    void project(std::vector<double>& U, int sweeps) const;
    // sweep until the worst violation is below tol (or the sweep budget ends)
    void project_until(std::vector<double>& U, double tol, int max_sweeps) const;
    double max_violation(const std::vector<double>& U) const;

    double indirect_cost(double g1, double g2) const;  // C(v^{-1}(g))
    void indirect_cost_grad(double g1, double g2, double& k1, double& k2) const;
    const Primitives& primitives() const { return prim_; }

private:
    const Primitives& prim_;
    Lattice2D lat_;
    std::vector<double> U0_;
    std::vector<Triangle> tris_;
    std::vector<Halfspace> rows_;
};

Menu solve_equilibrium(const Primitives& prim, const SolverConfig& cfg);

// Menu assembly from a feasible U (used by the solver and by tests that need
// menus from externally produced utility fields).
Menu build_menu(const Primitives& prim, const Lattice2D& lat, std::vector<double> U,
                const SolverConfig& cfg);

}  // namespace screenlab
