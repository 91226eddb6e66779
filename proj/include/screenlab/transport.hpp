#pragma once

#include <Eigen/Dense>

#include "screenlab/common.hpp"

namespace screenlab {

using Eigen::Vector2d;

struct TransportConfig {
    int assignment_limit = 2000;  // exact assignment up to this many atoms per side
    double eps_factor = 1e-3;     // entropic epsilon = factor x mean |cost|
    int sinkhorn_iter = 30000;
    double marginal_tol = 1e-9;
};

// Discrete coupling maximizing E[theta . q] between a choice sample and a
// type sample. Equal atom counts use an exact assignment (Jonker-Volgenant
// style shortest augmenting paths); unequal counts use entropic scaling with
// a final rounding step onto the feasible polytope.
struct TransportPlan {
    bool assignment = true;
    std::vector<int> match;   // assignment: choice atom i -> type atom match[i]
    Eigen::MatrixXd coupling; // dense plan for the regularized case
    std::vector<Vector2d> choices, types;
    double objective = 0.0;   // E[theta . q] under the plan
    double max_marginal_error = 0.0;

    // barycentric image of choice atom i under the plan
    Vector2d map_at(int i) const;
};

TransportPlan transport_overid(const std::vector<Vector2d>& choices,
                               const std::vector<Vector2d>& types, TransportConfig cfg = {});

// mean squared deviation between the transport map and a reference inverse
double transport_map_msd(const TransportPlan& plan,
                         const std::function<Vector2d(const Vector2d&)>& reference);

}  // namespace screenlab
