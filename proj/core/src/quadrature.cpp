#include "subsetmle/quadrature.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>

#include "subsetmle/errors.hpp"

namespace subsetmle {

namespace {

GaussHermiteRule compute_rule(int q) {
    if (q < 1) throw ConfigError("gauss_hermite: need at least 1 node");
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(q, q);
    for (int k = 1; k < q; ++k) {
        const double b = std::sqrt(k / 2.0);
        jacobi(k, k - 1) = b;
        jacobi(k - 1, k) = b;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi, Eigen::EigenvaluesOnly);
    GaussHermiteRule rule;
    rule.nodes = solver.eigenvalues();
    rule.weights.resize(q);
    rule.modified_weights.resize(q);
    for (int k = 0; k < q; ++k) {
        // w_k e^{z^2} = 1 / (q * psi_{q-1}(z)^2) with psi the orthonormal
        // Hermite functions; the upward recurrence on psi is stable because
        // the e^{-z^2/2} factor is carried along.
        const double z = rule.nodes[k];
        double prev = 0.0;
        double cur = std::pow(M_PI, -0.25) * std::exp(-0.5 * z * z);
        for (int n = 0; n < q - 1; ++n) {
            const double next =
                z * std::sqrt(2.0 / (n + 1)) * cur - std::sqrt(n / (n + 1.0)) * prev;
            prev = cur;
            cur = next;
        }
        rule.modified_weights[k] = 1.0 / (q * cur * cur);
        rule.weights[k] = rule.modified_weights[k] * std::exp(-z * z);
    }
    return rule;
}

}  // namespace

const GaussHermiteRule& gauss_hermite(int q) {
    static std::mutex mutex;
    static std::map<int, std::unique_ptr<GaussHermiteRule>> cache;
    std::scoped_lock lock(mutex);
    auto it = cache.find(q);
    if (it == cache.end()) {
        it = cache.emplace(q, std::make_unique<GaussHermiteRule>(compute_rule(q))).first;
    }
    return *it->second;
}

}  // namespace subsetmle
