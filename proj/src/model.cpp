#include "screenlab/model.hpp"

#include <cmath>
#include <json.hpp>

namespace screenlab {

using nlohmann::json;

// ---------------------------------------------------------------- CostSpec

CostSpec CostSpec::quadratic(int dim, double c) {
    require(c > 0.0, Error::Code::invalid_argument, "cost: c must be positive");
    CostSpec s;
    s.kind_ = Kind::quadratic;
    s.dim_ = dim;
    s.c_ = c;
    s.linear_ = VectorXd::Zero(dim);
    return s;
}

CostSpec CostSpec::polynomial(int dim, double c, VectorXd linear) {
    require(c > 0.0, Error::Code::invalid_argument, "cost: c must be positive");
    require(linear.size() == dim, Error::Code::dimension_mismatch, "cost: linear term size");
    CostSpec s;
    s.kind_ = Kind::polynomial;
    s.dim_ = dim;
    s.c_ = c;
    s.linear_ = std::move(linear);
    return s;
}

CostSpec CostSpec::tabulated(Lattice2D lat, std::vector<double> values) {
    require(static_cast<int>(values.size()) == lat.size(), Error::Code::dimension_mismatch,
            "cost: tabulated values size");
    CostSpec s;
    s.kind_ = Kind::tabulated;
    s.dim_ = 2;
    s.c_ = 0.0;
    s.linear_ = VectorXd::Zero(2);
    s.lat_ = lat;
    s.values_ = std::move(values);
    return s;
}

double CostSpec::eval(const VectorXd& q) const {
    require(q.size() == dim_, Error::Code::dimension_mismatch, "cost eval: q size");
    if (kind_ == Kind::tabulated) return lat_->interp(values_, q[0], q[1]);
    return 0.5 * c_ * q.squaredNorm() + linear_.dot(q);
}

VectorXd CostSpec::grad(const VectorXd& q) const {
    require(q.size() == dim_, Error::Code::dimension_mismatch, "cost grad: q size");
    if (kind_ == Kind::tabulated) {
        // centered differences on the carrier lattice
        VectorXd g(2);
        const double hx = lat_->hx(), hy = lat_->hy();
        g[0] = (lat_->interp(values_, std::min(q[0] + hx, lat_->x1), q[1]) -
                lat_->interp(values_, std::max(q[0] - hx, lat_->x0), q[1])) /
               (std::min(q[0] + hx, lat_->x1) - std::max(q[0] - hx, lat_->x0));
        g[1] = (lat_->interp(values_, q[0], std::min(q[1] + hy, lat_->y1)) -
                lat_->interp(values_, q[0], std::max(q[1] - hy, lat_->y0))) /
               (std::min(q[1] + hy, lat_->y1) - std::max(q[1] - hy, lat_->y0));
        return g;
    }
    return c_ * q + linear_;
}

double CostSpec::strong_convexity() const {
    if (kind_ == Kind::tabulated) {
        // probe the discrete Hessian over interior lattice nodes
        double m = std::numeric_limits<double>::infinity();
        const auto& lat = *lat_;
        const double hx2 = lat.hx() * lat.hx(), hy2 = lat.hy() * lat.hy();
        for (int iy = 1; iy < lat.ny - 1; ++iy)
            for (int ix = 1; ix < lat.nx - 1; ++ix) {
                double a = (values_[lat.idx(ix + 1, iy)] - 2 * values_[lat.idx(ix, iy)] +
                            values_[lat.idx(ix - 1, iy)]) /
                           hx2;
                double b = (values_[lat.idx(ix, iy + 1)] - 2 * values_[lat.idx(ix, iy)] +
                            values_[lat.idx(ix, iy - 1)]) /
                           hy2;
                double m12 = (values_[lat.idx(ix + 1, iy + 1)] + values_[lat.idx(ix - 1, iy - 1)] -
                              values_[lat.idx(ix + 1, iy - 1)] - values_[lat.idx(ix - 1, iy + 1)]) /
                             (4.0 * lat.hx() * lat.hy());
                double tr = a + b, det = a * b - m12 * m12;
                double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
                m = std::min(m, tr / 2.0 - disc);
            }
        return m;
    }
    return c_;
}

CostSpec CostSpec::with_regime(double scale, const VectorXd& linear_shift) const {
    require(kind_ != Kind::tabulated, Error::Code::invalid_argument,
            "regime shift on tabulated cost");
    require(scale > 0.0, Error::Code::invalid_argument, "regime scale must be positive");
    VectorXd lin = linear_ + linear_shift;
    if (lin.isZero(0.0)) return quadratic(dim_, c_ * scale);
    return polynomial(dim_, c_ * scale, lin);
}

// -------------------------------------------------------------- UtilitySpec

UtilitySpec UtilitySpec::linear(int dim) {
    UtilitySpec s;
    s.variant_ = Variant::linear;
    s.dim_ = dim;
    s.omega_ = VectorXd::Ones(dim);
    return s;
}

UtilitySpec UtilitySpec::bilinear(int dim) {
    UtilitySpec s = linear(dim);
    s.variant_ = Variant::bilinear;
    return s;
}

UtilitySpec UtilitySpec::power(int dim, VectorXd omega) {
    require(omega.size() == dim, Error::Code::dimension_mismatch, "utility: omega size");
    for (int j = 0; j < dim; ++j)
        require(omega[j] > 0.0 && omega[j] <= 1.0, Error::Code::invalid_argument,
                "utility: omega outside (0,1]");
    UtilitySpec s;
    s.variant_ = Variant::nonlinear;
    s.dim_ = dim;
    s.omega_ = std::move(omega);
    return s;
}

double UtilitySpec::v(int j, double q) const {
    require(q >= 0.0, Error::Code::invalid_argument, "utility: q outside domain");
    if (variant_ != Variant::nonlinear) return q;
    return std::pow(q, omega_[j]);
}

double UtilitySpec::dv(int j, double q) const {
    if (variant_ != Variant::nonlinear) return 1.0;
    require(q > 0.0, Error::Code::invalid_argument, "utility: dv at q<=0");
    return omega_[j] * std::pow(q, omega_[j] - 1.0);
}

double UtilitySpec::d2v(int j, double q) const {
    if (variant_ != Variant::nonlinear) return 0.0;
    require(q > 0.0, Error::Code::invalid_argument, "utility: d2v at q<=0");
    return omega_[j] * (omega_[j] - 1.0) * std::pow(q, omega_[j] - 2.0);
}

double UtilitySpec::v_inverse(int j, double s) const {
    require(s >= 0.0, Error::Code::invalid_argument, "utility: v_inverse at s<0");
    if (variant_ != Variant::nonlinear) return s;
    return std::pow(s, 1.0 / omega_[j]);
}

double UtilitySpec::dv_inverse(int j, double s) const {
    if (variant_ != Variant::nonlinear) return 1.0;
    if (s <= 0.0) return 0.0;  // limit for omega < 1
    return std::pow(s, 1.0 / omega_[j] - 1.0) / omega_[j];
}

VectorXd UtilitySpec::v(const VectorXd& q) const {
    VectorXd out(dim_);
    for (int j = 0; j < dim_; ++j) out[j] = v(j, q[j]);
    return out;
}

VectorXd UtilitySpec::v_inverse(const VectorXd& s) const {
    VectorXd out(dim_);
    for (int j = 0; j < dim_; ++j) out[j] = v_inverse(j, s[j]);
    return out;
}

double eval_utility(const UtilitySpec& spec, const VectorXd& theta, const VectorXd& q,
                    const VectorXd& x1, const VectorXd& x2) {
    (void)x2;  // power family does not vary with X2
    const int J = spec.dimension();
    require(theta.size() == J && q.size() == J, Error::Code::dimension_mismatch,
            "eval_utility: theta/q size");
    double u = 0.0;
    switch (spec.variant()) {
        case UtilitySpec::Variant::linear:
            u = theta.dot(q);
            break;
        case UtilitySpec::Variant::bilinear:
            require(x1.size() == J, Error::Code::dimension_mismatch, "eval_utility: x1 size");
            for (int j = 0; j < J; ++j) u += theta[j] * x1[j] * q[j];
            break;
        case UtilitySpec::Variant::nonlinear:
            require(x1.size() == J, Error::Code::dimension_mismatch, "eval_utility: x1 size");
            for (int j = 0; j < J; ++j) u += theta[j] * x1[j] * spec.v(j, q[j]);
            break;
    }
    return u;
}

// -------------------------------------------------------------- Primitives

Primitives::Primitives(int dim, DensityGrid type_density, CostSpec cost, UtilitySpec utility,
                       OutsideOption outside)
    : dim_(dim),
      density_(std::move(type_density)),
      cost_(std::move(cost)),
      utility_(std::move(utility)),
      outside_(std::move(outside)) {
    require(dim_ >= 1, Error::Code::invalid_argument, "dimension must be positive");
    require(cost_.dimension() == dim_ && utility_.dimension() == dim_,
            Error::Code::dimension_mismatch, "primitives: spec dimensions disagree");
    require(outside_.q0.size() == dim_, Error::Code::dimension_mismatch, "primitives: q0 size");
    require(density_.normalized(1e-6), Error::Code::invalid_argument,
            "type density does not integrate to 1");
    for (double v : density_.values())
        require(v > 0.0, Error::Code::invalid_argument, "type density not strictly positive");
    require(outside_.P0 >= cost_.eval(outside_.q0), Error::Code::infeasible,
            "outside option priced below cost (P0 < C(q0))");
}

double Primitives::outside_utility(const VectorXd& theta) const {
    return theta.dot(utility_.v(outside_.q0)) - outside_.P0;
}

Primitives Primitives::with_cost(CostSpec cost) const {
    return Primitives(dim_, density_, std::move(cost), utility_, outside_);
}

Primitives Primitives::with_density(DensityGrid density) const {
    return Primitives(dim_, std::move(density), cost_, utility_, outside_);
}

Primitives Primitives::uniform_square(double c, int mesh, UtilitySpec::Variant variant,
                                      VectorXd omega) {
    Lattice2D lat{mesh, mesh, 0.0, 1.0, 0.0, 1.0};
    UtilitySpec u = UtilitySpec::linear(2);
    if (variant == UtilitySpec::Variant::bilinear) u = UtilitySpec::bilinear(2);
    if (variant == UtilitySpec::Variant::nonlinear) {
        if (omega.size() == 0) omega = VectorXd::Constant(2, 0.5);
        u = UtilitySpec::power(2, omega);
    }
    return Primitives(2, DensityGrid::uniform(lat), CostSpec::quadratic(2, c), u,
                      OutsideOption{VectorXd::Zero(2), 0.0});
}

static VectorXd parse_vector(const json& j, int dim, const char* what) {
    require(j.is_array() && static_cast<int>(j.size()) == dim, Error::Code::schema_error,
            std::string("config: ") + what + " must be an array of length J");
    VectorXd v(dim);
    for (int i = 0; i < dim; ++i) v[i] = j[i].get<double>();
    return v;
}

Primitives Primitives::from_json(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const std::exception& e) {
        throw Error(Error::Code::schema_error, std::string("config parse: ") + e.what());
    }
    require(j.contains("dimension"), Error::Code::schema_error, "config: missing 'dimension'");
    const int dim = j["dimension"].get<int>();
    require(dim == 2, Error::Code::invalid_argument,
            "lattice-backed primitives support J=2 (general-J is limited to pointwise ops)");

    require(j.contains("density"), Error::Code::schema_error, "config: missing 'density'");
    const auto& jd = j["density"];
    Lattice2D lat{101, 101, 0.0, 1.0, 0.0, 1.0};
    if (jd.contains("mesh")) lat.nx = lat.ny = jd["mesh"].get<int>();
    if (jd.contains("support")) {
        const auto& s = jd["support"];
        require(s.is_array() && s.size() == 2, Error::Code::schema_error,
                "config: density.support must be [[x0,x1],[y0,y1]]");
        lat.x0 = s[0][0].get<double>();
        lat.x1 = s[0][1].get<double>();
        lat.y0 = s[1][0].get<double>();
        lat.y1 = s[1][1].get<double>();
    }
    const std::string dkind = jd.value("kind", "uniform");
    DensityGrid density;
    if (dkind == "uniform") {
        density = DensityGrid::uniform(lat);
    } else if (dkind == "grid") {
        require(jd.contains("values"), Error::Code::schema_error,
                "config: density.values required for kind 'grid'");
        std::vector<double> vals = jd["values"].get<std::vector<double>>();
        DensityGrid g(lat, std::move(vals));
        g.normalize();
        density = g;
    } else {
        throw Error(Error::Code::schema_error, "config: density.kind '" + dkind + "' unknown");
    }

    require(j.contains("cost"), Error::Code::schema_error, "config: missing 'cost'");
    const auto& jc = j["cost"];
    const std::string ckind = jc.value("kind", "quadratic");
    CostSpec cost = CostSpec::quadratic(dim, 1.0);
    if (ckind == "quadratic") {
        cost = CostSpec::quadratic(dim, jc.value("c", 1.0));
    } else if (ckind == "polynomial") {
        VectorXd lin = VectorXd::Zero(dim);
        if (jc.contains("linear")) lin = parse_vector(jc["linear"], dim, "cost.linear");
        cost = CostSpec::polynomial(dim, jc.value("c", 1.0), lin);
    } else {
        throw Error(Error::Code::schema_error, "config: cost.kind '" + ckind + "' unknown");
    }

    require(j.contains("utility"), Error::Code::schema_error, "config: missing 'utility'");
    const auto& ju = j["utility"];
    const std::string variant = ju.value("variant", "linear");
    UtilitySpec util = UtilitySpec::linear(dim);
    if (variant == "linear") {
        util = UtilitySpec::linear(dim);
    } else if (variant == "bilinear") {
        util = UtilitySpec::bilinear(dim);
    } else if (variant == "nonlinear") {
        require(ju.contains("omega"), Error::Code::schema_error,
                "config: utility.omega required for nonlinear variant");
        util = UtilitySpec::power(dim, parse_vector(ju["omega"], dim, "utility.omega"));
    } else {
        throw Error(Error::Code::schema_error, "config: utility.variant '" + variant + "' unknown");
    }

    OutsideOption outside{VectorXd::Zero(dim), 0.0};
    if (j.contains("outside")) {
        const auto& jo = j["outside"];
        if (jo.contains("q")) outside.q0 = parse_vector(jo["q"], dim, "outside.q");
        outside.P0 = jo.value("price", 0.0);
    }

    return Primitives(dim, std::move(density), std::move(cost), std::move(util),
                      std::move(outside));
}

std::string Primitives::to_json() const {
    json j;
    j["dimension"] = dim_;
    const auto& lat = density_.lattice();
    j["density"]["kind"] = "grid";
    j["density"]["mesh"] = lat.nx;
    j["density"]["support"] = {{lat.x0, lat.x1}, {lat.y0, lat.y1}};
    j["density"]["values"] = density_.values();
    j["cost"]["kind"] = cost_.kind() == CostSpec::Kind::quadratic ? "quadratic" : "polynomial";
    j["cost"]["c"] = cost_.quad_coeff();
    j["cost"]["linear"] = std::vector<double>(cost_.linear_term().data(),
                                              cost_.linear_term().data() + dim_);
    switch (utility_.variant()) {
        case UtilitySpec::Variant::linear: j["utility"]["variant"] = "linear"; break;
        case UtilitySpec::Variant::bilinear: j["utility"]["variant"] = "bilinear"; break;
        case UtilitySpec::Variant::nonlinear:
            j["utility"]["variant"] = "nonlinear";
            j["utility"]["omega"] =
                std::vector<double>(utility_.omega().data(), utility_.omega().data() + dim_);
            break;
    }
    j["outside"]["q"] = std::vector<double>(outside_.q0.data(), outside_.q0.data() + dim_);
    j["outside"]["price"] = outside_.P0;
    return j.dump(2);
}

// ------------------------------------------------------- ClosedFormSolution

// Numeric tau1 for the uniform-square example, calibrated once from the grid
// solver (S1/S2 boundary at mesh refinement; scale-free in c).
static constexpr double kTau1Default = 1.0;

ClosedFormSolution::ClosedFormSolution(double c) : c_(c) {
    require(c > 0.0, Error::Code::invalid_argument, "closed form: c must be positive");
    tau0_ = std::sqrt(6.0) / 3.0;
    tau1_ = kTau1Default;
}

ClosedFormSolution closed_form_example(double c) { return ClosedFormSolution(c); }

}  // namespace screenlab
