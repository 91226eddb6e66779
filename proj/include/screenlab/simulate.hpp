#pragma once

#include <optional>
#include <string>

#include "screenlab/menu.hpp"

namespace screenlab {

// Consumer records in columnar form. Immutable after generation; the CSV
// round trip is lossless at 17 significant digits.
class Dataset {
public:
    Dataset() = default;
    Dataset(int J, int K) : J_(J), K_(K) {}

    int size() const { return static_cast<int>(p_.size()); }
    int qdim() const { return J_; }
    int x2dim() const { return K_; }

    void reserve(int n);
    void append(const VectorXd& q, double p, const VectorXd& x1, const VectorXd& x2, int z);

    double q(int i, int j) const { return q_[i * J_ + j]; }
    VectorXd qvec(int i) const;
    double price(int i) const { return p_[i]; }
    double x1(int i, int j) const { return x1_[i * J_ + j]; }
    VectorXd x1vec(int i) const;
    double x2(int i, int k) const { return x2_[i * K_ + k]; }
    int z(int i) const { return z_[i]; }

    Dataset filter_z(int zval) const;

    // provenance (written to the CSV sidecar)
    std::uint64_t seed = 0;
    std::string menu_id;
    std::string noise_desc;

    void write_csv(const std::string& path) const;
    static Dataset read_csv(const std::string& path);

    // direct mutation is reserved for the generators in this module
    std::vector<double>& raw_prices() { return p_; }
    const std::vector<double>& raw_prices() const { return p_; }

private:
    int J_ = 2, K_ = 1;
    std::vector<double> q_, x1_, x2_, p_;
    std::vector<int> z_;
};

struct NoiseSpec {
    double sigma_eps = 0.0;  // additive price noise sd
    enum class TasteLaw { degenerate, lognormal } taste = TasteLaw::degenerate;
    double sigma_y = 0.0;  // lognormal(0, sigma_y): E[log Y] = 0 by construction

    void validate() const {
        require(sigma_eps >= 0.0, Error::Code::invalid_argument, "noise: sigma_eps < 0");
        require(taste == TasteLaw::degenerate || sigma_y >= 0.0, Error::Code::invalid_argument,
                "noise: sigma_y < 0");
    }
};

// X1 on a positive-orthant direction cap times a radius law; X2 uniform cube.
// Dense direction coverage is what the Radon inversion feeds on.
struct CovariateLaw {
    double angle_lo = 0.12;
    double angle_hi = 1.4507963267948966;  // pi/2 - 0.12
    double radius_lo = 0.75, radius_hi = 1.25;
    int x2_dim = 1;

    void draw(Rng& rng, VectorXd& x1, VectorXd& x2) const;
};

// Draw (theta, X) per record with counter-based seeding and map through the
// solved menu: excluded types get the outside option, everyone else gets the
// interpolated allocation and the envelope price.
Dataset sample_market(const Menu& menu, const Primitives& prim, int n, std::uint64_t seed,
                      const CovariateLaw& law = {});

// Two cost regimes with common theta draws when requested: records come in
// (z=1, z=2) pairs sharing theta and X.
Dataset sample_two_regimes(const Menu& menu1, const Menu& menu2, const Primitives& prim, int n,
                           std::uint64_t seed, bool common_theta = true,
                           const CovariateLaw& law = {});

// Stylized bilinear market: agents bunch on the index W = theta . X1 with the
// closed-form bunched allocation on the diagonal; higher-index agents are
// screened onto a full-dimensional cloud. Exercises the bunching-detection and
// Radon machinery with a generator whose index structure is exact.
Dataset sample_market_bilinear(const ClosedFormSolution& cfs, const Primitives& prim, int n,
                               std::uint64_t seed, const CovariateLaw& law = {});

Dataset apply_price_noise(const Dataset& ds, const NoiseSpec& spec, std::uint64_t seed);

// One market-level taste shifter draw: theta* = Y theta. Returns Y and, for
// menu evaluation, callers rely on the homogeneity of the quadratic-cost
// linear-utility problem (menu scales exactly with Y).
double draw_taste_shifter(const NoiseSpec& spec, std::uint64_t seed, std::uint64_t market_index);

// Markets of taste-shifted consumers for the deconvolution pipeline: observed
// pseudo-types are Y_m * theta_i with market ids in x2 column 0. q carries the
// pseudo-type sample itself (linear utility: theta* = grad P at the choice).
Dataset sample_taste_shifted_pseudotypes(const Primitives& prim, const NoiseSpec& spec,
                                         int markets, int per_market, std::uint64_t seed);

}  // namespace screenlab
