#include "rmp/quadrature.hpp"

#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>

namespace rmp {

GaussHermite::GaussHermite(int points) {
    if (points < 1) throw std::invalid_argument("Gauss-Hermite rule needs at least one point");
    // Golub-Welsch: eigen-decomposition of the Jacobi matrix of the monic
    // probabilists' Hermite recurrence, off-diagonal sqrt(k).
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(points, points);
    for (int k = 1; k < points; ++k) {
        jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(static_cast<double>(k));
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
    nodes = es.eigenvalues();
    weights = es.eigenvectors().row(0).array().square().transpose();
    weights /= weights.sum();
    // Symmetrize against round-off so odd moments vanish exactly.
    for (int i = 0; i < points / 2; ++i) {
        const int j = points - 1 - i;
        const double x = 0.5 * (nodes[j] - nodes[i]);
        const double w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = weights[j] = w;
    }
    if (points % 2) nodes[points / 2] = 0.0;
}

const GaussHermite& GaussHermite::get(int points) {
    static std::mutex mu;
    static std::map<int, std::unique_ptr<GaussHermite>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[points];
    if (!slot) slot = std::make_unique<GaussHermite>(points);
    return *slot;
}

}  // namespace rmp
