#pragma once

#include <Eigen/Dense>

#include "screenlab/simulate.hpp"

namespace screenlab {

using Eigen::Matrix2d;
using Eigen::Vector2d;

// Multivariate quantiles through the subgradient field of the integral
// transform with kernel g(q; s) = |q - s| - |s|:
//   field(q) = mean over the sample of (q - s)/|q - s|,
// a monotone map whose inverse is the quantile function. The inverse runs a
// damped Newton on the empirical field with a coordinate-wise monotone
// bisection fallback.
class QuantileMap {
public:
    QuantileMap() = default;
    QuantileMap(std::vector<double> sx, std::vector<double> sy, int max_sample = 4000,
                std::uint64_t seed = 97531);

    Vector2d field(const Vector2d& q) const;
    Matrix2d field_jacobian(const Vector2d& q) const;

    // inverse of the field at rank t (|t| < 1); fell_back reports the fallback
    Vector2d inverse(const Vector2d& t, bool* fell_back = nullptr) const;

    int sample_size() const { return static_cast<int>(sx_.size()); }
    Vector2d sample_mean() const;
    void bounds(Vector2d& lo, Vector2d& hi) const;

    // classical one-dimensional quantile: minimal point of the kernel
    // criterion at rank t in (-1, 1), i.e. the (t+1)/2 sample quantile
    static double inverse_1d(std::vector<double> sample, double t);
    static double field_1d(const std::vector<double>& sample, double q);

private:
    std::vector<double> sx_, sy_;
};

// rank-matching map between two choice distributions: the bundle in `to` with
// the same multivariate rank as q has in `from`
Vector2d quantile_match(const QuantileMap& from, const QuantileMap& to, const Vector2d& q,
                        bool* fell_back = nullptr);

}  // namespace screenlab
