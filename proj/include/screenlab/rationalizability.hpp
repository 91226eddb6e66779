#pragma once

#include "screenlab/ident_nonlinear.hpp"

namespace screenlab {

enum class ModelClass { M1, M2, M3 };

struct ConditionVerdict {
    std::string name;
    bool pass = false;
    double statistic = 0.0;
    double tolerance = 0.0;
    std::string note;
};

struct RationalizabilityReport {
    ModelClass model = ModelClass::M1;
    std::vector<ConditionVerdict> conditions;

    bool all_pass() const {
        for (const auto& c : conditions)
            if (!c.pass) return false;
        return true;
    }
    const ConditionVerdict& get(const std::string& name) const;
    void write(const std::string& path) const;
};

struct RatConfig {
    double c1_tol = 0.05;          // price determinism: NN spread / price IQR
    double c3_min_mask = 0.05;     // minimal screened-mask fraction
    double c4_tol = 0.05;          // F_W = M* identity, mean |diff| over probes
    double c4p_tol = 0.05;         // regime quantile invariance
    double c5_tol = 1e-3;          // PDE residual, mesh norm
    double c6_tol = 0.02;          // transport map vs optimality types, relative MSD
    int probes = 400;
    PriceFieldConfig pf;
};

// Testable restrictions C1-C5 (and C4', C6 for the two-regime model class).
// Failures are verdicts, not errors.
RationalizabilityReport rationalizability_check(const Dataset& ds, ModelClass mc,
                                                const VectorXd& q0, RatConfig cfg = {});

// Observational-equivalence witness for the power-family substitution
// (F, v) vs (F(./omega), v/omega): both induced truncated choice densities
// evaluated from the change-of-variables displays on a shared grid.
struct Lemma2Report {
    double sup_diff = 0.0;            // equivalent pair
    double sup_diff_mismatched = 0.0; // density transformed, utility left alone
    Lattice2D grid;
};

Lemma2Report lemma2_witness(const VectorXd& omega, int grid = 101);

}  // namespace screenlab
