#pragma once

#include <Eigen/Core>

namespace subsetmle {

/// Nodes and weights of the Q-point Gauss-Hermite rule for weight e^{-z^2}.
/// modified_weights holds w_k e^{z_k^2}, computed through the orthonormal
/// Hermite-function recurrence; unlike the raw weights these neither
/// underflow nor lose relative accuracy at the extreme nodes of large rules.
struct GaussHermiteRule {
    Eigen::VectorXd nodes;
    Eigen::VectorXd weights;
    Eigen::VectorXd modified_weights;
};

/**
 * Gauss-Hermite rule computed via Golub-Welsch (eigendecomposition of the
 * Jacobi matrix of the Hermite recurrence). Rules are cached per Q; the
 * cache is thread-safe and the returned reference stays valid for the
 * program lifetime.
 */
const GaussHermiteRule& gauss_hermite(int q);

}  // namespace subsetmle
