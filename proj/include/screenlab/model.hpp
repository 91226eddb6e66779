#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>

#include "screenlab/grid.hpp"

namespace screenlab {

using Eigen::VectorXd;

// Cost function C(q). Quadratic core c/2|q|^2 plus an optional linear term
// (tag "polynomial"); "tabulated" carries a recovered cost grid.
class CostSpec {
public:
    enum class Kind { quadratic, polynomial, tabulated };

    static CostSpec quadratic(int dim, double c);
    static CostSpec polynomial(int dim, double c, VectorXd linear);
    static CostSpec tabulated(Lattice2D lat, std::vector<double> values);

    Kind kind() const { return kind_; }
    int dimension() const { return dim_; }
    double quad_coeff() const { return c_; }
    const VectorXd& linear_term() const { return linear_; }

    double eval(const VectorXd& q) const;
    VectorXd grad(const VectorXd& q) const;
    // strong-convexity parameter: min Hessian eigenvalue (exact for quadratic,
    // probed on the lattice for tabulated)
    double strong_convexity() const;

    // Regime shift: scale the quadratic coefficient and add a linear pivot.
    CostSpec with_regime(double scale, const VectorXd& linear_shift) const;

private:
    Kind kind_ = Kind::quadratic;
    int dim_ = 2;
    double c_ = 1.0;
    VectorXd linear_;
    // tabulated representation
    std::optional<Lattice2D> lat_;
    std::vector<double> values_;
};

// Componentwise utility maps v_j. Power family v_j(q) = q^{omega_j} for the
// nonlinear variant; identity otherwise.
class UtilitySpec {
public:
    enum class Variant { linear, bilinear, nonlinear };

    static UtilitySpec linear(int dim);
    static UtilitySpec bilinear(int dim);
    static UtilitySpec power(int dim, VectorXd omega);

    Variant variant() const { return variant_; }
    int dimension() const { return dim_; }
    const VectorXd& omega() const { return omega_; }

    double v(int j, double q) const;
    double dv(int j, double q) const;
    double d2v(int j, double q) const;
    double v_inverse(int j, double s) const;
    double dv_inverse(int j, double s) const;

    VectorXd v(const VectorXd& q) const;
    VectorXd v_inverse(const VectorXd& s) const;

private:
    Variant variant_ = Variant::linear;
    int dim_ = 2;
    VectorXd omega_;
};

double eval_utility(const UtilitySpec& spec, const VectorXd& theta, const VectorXd& q,
                    const VectorXd& x1, const VectorXd& x2);

struct OutsideOption {
    VectorXd q0;
    double P0 = 0.0;
};

// Model primitives. Immutable after construction; constructor enforces the
// normalization, positivity and P0 >= C(q0) invariants.
class Primitives {
public:
    Primitives(int dim, DensityGrid type_density, CostSpec cost, UtilitySpec utility,
               OutsideOption outside);

    static Primitives from_json(const std::string& json_text);
    std::string to_json() const;

    // uniform types on [0,1]^2, quadratic cost c/2|q|^2, q0=0, P0=0
    static Primitives uniform_square(double c, int mesh = 101,
                                     UtilitySpec::Variant variant = UtilitySpec::Variant::linear,
                                     VectorXd omega = VectorXd());

    int dimension() const { return dim_; }
    const DensityGrid& density() const { return density_; }
    const CostSpec& cost() const { return cost_; }
    const UtilitySpec& utility() const { return utility_; }
    const OutsideOption& outside() const { return outside_; }

    double outside_utility(const VectorXd& theta) const;

    Primitives with_cost(CostSpec cost) const;
    Primitives with_density(DensityGrid density) const;

private:
    int dim_;
    DensityGrid density_;
    CostSpec cost_;
    UtilitySpec utility_;
    OutsideOption outside_;
};

// Rochet-Chone uniform-square example: types uniform on [0,1]^2, cost
// c/2(q1^2+q2^2), q0=0, P0=0. Exclusion threshold tau0 = sqrt(6)/3 and the
// bunched allocation rho_b(tau) = 3tau/(4c) - 1/(2c tau) are exact; tau1 (the
// upper edge of the bunching band) has no closed form. The stated continuity
// condition rho_b(tau1)=0 reproduces tau0, so we keep both: stated_tau1() and
// a numeric tau1 calibrated from the grid solver.
class ClosedFormSolution {
public:
    explicit ClosedFormSolution(double c);

    double c() const { return c_; }
    double tau0() const { return tau0_; }
    double stated_tau1() const { return tau0_; }  // rho_b(tau)=0 has the single root tau0
    double tau1() const { return tau1_; }
    void set_tau1(double t) {
        require(t >= tau0_, Error::Code::invalid_argument, "tau1 below tau0");
        tau1_ = t;
    }

    double rho_b(double tau) const { return 3.0 * tau / (4.0 * c_) - 1.0 / (2.0 * c_ * tau); }
    double drho_b(double tau) const { return 3.0 / (4.0 * c_) + 1.0 / (2.0 * c_ * tau * tau); }

    // indirect utility on the bunching band, U(tau) = int_{tau0}^{tau} rho_b
    double bunch_utility(double tau) const {
        return 3.0 * (tau * tau - tau0_ * tau0_) / (8.0 * c_) - std::log(tau / tau0_) / (2.0 * c_);
    }

    // alpha = f + div{f(theta - grad C(rho))} evaluated on the bunching band
    double bunch_alpha(double tau) const { return 3.0 - 2.0 * c_ * drho_b(tau); }
    // beta at a bunch endpoint on the domain boundary
    double bunch_beta(double tau) const { return -c_ * rho_b(tau); }

    // region by tau = theta1 + theta2 against (tau0, tau1): 0 excluded,
    // 1 bunched, 2 screened
    int classify(double theta1, double theta2) const {
        double tau = theta1 + theta2;
        if (tau < tau0_) return 0;
        if (tau <= tau1_) return 1;
        return 2;
    }

    // mass of the excluded triangle under the uniform density (= tau0^2/2)
    double excluded_mass() const { return tau0_ * tau0_ / 2.0; }

private:
    double c_;
    double tau0_;
    double tau1_;  // defaults to the calibrated default for c=1 scaling
};

ClosedFormSolution closed_form_example(double c);

}  // namespace screenlab
