#pragma once

#include <complex>

#include "screenlab/simulate.hpp"

namespace screenlab {

struct KotlarskiConfig {
    double cf_floor = 0.05;   // frequency cutoff where |Ch(0,t)| falls below
    double xi_max = 60.0;     // widest frequency window considered
    int xi_points = 257;      // frequency grid (odd, symmetric around 0)
    int value_grid = 401;     // output grid for the recovered densities
};

struct DeconvResult {
    std::vector<double> xi;                      // frequency grid
    std::vector<std::complex<double>> ch_y;      // characteristic fn of log Y
    std::vector<std::complex<double>> ch_theta;  // characteristic fn of log theta
    double cutoff = 0.0;                         // |xi| beyond which the integrand is zeroed
    double mean_log_theta = 0.0;
    int pairs = 0;

    std::vector<double> y_grid, y_density, y_cdf;          // law of Y = exp(log Y)
    std::vector<double> theta_grid, theta_density, theta_cdf;

    double y_cdf_at(double y) const;
    double theta_cdf_at(double t) const;
};

// Kotlarski deconvolution of theta* = Y theta from positive pseudo-type
// samples with a market structure: records are split uniformly at random
// within each market (recorded seed) into two half-samples, paired, and the
// joint empirical characteristic function of the paired logs drives
//   Ch_logY(xi) = exp( int_0^xi Ch_1(0,t)/Ch(0,t) dt - i xi E[log theta] ),
// with the mean-of-log centering inside the exponential. Densities come from
// regularized Fourier inversion with the recorded frequency cutoff.
DeconvResult kotlarski_deconv(const std::vector<double>& values, const std::vector<int>& market,
                              std::uint64_t split_seed, KotlarskiConfig cfg = {});

// convenience: pseudo-type dataset produced by sample_taste_shifted_pseudotypes
DeconvResult kotlarski_deconv(const Dataset& pseudotypes, std::uint64_t split_seed,
                              KotlarskiConfig cfg = {});

}  // namespace screenlab
