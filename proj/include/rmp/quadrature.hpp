#pragma once

// Gauss-Hermite cubature against the standard normal weight.

#include <Eigen/Dense>

#include <cmath>

namespace rmp {

/// Nodes and weights of the p-point probabilists' Gauss-Hermite rule:
/// sum_i w_i f(x_i) approximates E[f(X)] for X ~ N(0, 1), exactly for
/// polynomials of degree <= 2p - 1.  Weights sum to one.
struct GaussHermite {
    Eigen::VectorXd nodes;
    Eigen::VectorXd weights;

    explicit GaussHermite(int points);

    /// Cached rule; `points` must be >= 1.
    static const GaussHermite& get(int points);

    /// E[f(Z)] for Z ~ N(mean, variance).
    template <class F>
    double expect(double mean, double variance, F f) const {
        const double sd = std::sqrt(variance);
        double s = 0.0;
        for (Eigen::Index i = 0; i < nodes.size(); ++i) s += weights[i] * f(mean + sd * nodes[i]);
        return s;
    }
};

}  // namespace rmp
