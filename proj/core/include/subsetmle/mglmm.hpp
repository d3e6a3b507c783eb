#pragma once

#include <Eigen/Core>
#include <cstdint>

#include "subsetmle/params.hpp"

namespace subsetmle {

/**
 * Non-stochastic predictor layout for the logit-normal mixed model: one
 * p-vector x_{ij} per subject pair, shared by the two responses, with
 * ||x_{ij}|| <= 1. The diagonal predictors must keep the Gram matrix
 * N^{-1} sum_i x_{ii} x_{ii}' away from singularity; this is verified, not
 * assumed.
 */
struct MglmmDesign {
    int N = 0;
    int p = 0;
    Eigen::MatrixXd x;  // (N*N) x p, row index i*N + j (0-based)

    [[nodiscard]] Eigen::VectorXd x_at(int i, int j) const {
        return x.row(static_cast<std::int64_t>(i) * N + j).transpose();
    }
    [[nodiscard]] double gram_min_eigenvalue() const;
    /// Throws ConfigError if a norm exceeds 1 or the Gram floor is violated.
    void validate(double gram_floor = kDefaultGramFloor) const;

    static constexpr double kDefaultGramFloor = 0.1;
};

/// Predictors drawn uniformly in the unit ball, regenerated until the
/// diagonal Gram condition holds.
MglmmDesign random_design(int N, int p, std::uint64_t seed,
                          double gram_floor = MglmmDesign::kDefaultGramFloor);

/// Per subject (i, j): a normal response y1 (conditional variance 1) and a
/// binary response y2, both driven by the shared crossed random effects.
struct MglmmDataset {
    MglmmDesign design;
    Eigen::MatrixXd y1;  // N x N
    Eigen::MatrixXd y2;  // N x N, entries in {0, 1}
    std::uint64_t seed = 0;

    [[nodiscard]] int N() const { return design.N; }
    [[nodiscard]] std::int64_t n() const { return 2LL * design.N * design.N; }
};

MglmmDataset simulate_mglmm(const MglmmParams& theta, const MglmmDesign& design,
                            std::uint64_t seed);

/**
 * Marginal success probability of a binary response whose linear predictor is
 * eta0 plus the sum of two independent N(0, theta_d) effects:
 *   p(eta0, theta_d) = E[logistic(eta0 + V)], V ~ N(0, 2 theta_d),
 * by Gauss-Hermite quadrature with q nodes.
 */
double marginal_success_prob(double eta0, double theta_d, int q = 64);
double marginal_success_prob(const Eigen::VectorXd& x, const Eigen::VectorXd& beta2,
                             double theta_d, int q = 64);

/// KL divergence between Bernoulli(p0) and Bernoulli(p1).
double bernoulli_kl(double p0, double p1);

/**
 * Log-likelihood ratio of the diagonal normal subcollection
 * W1 = (Y_{1,1,1}, ..., Y_{N,N,1}): independent N(x_{ii}' beta1, 1 + 2 theta_d).
 */
double subcoll_ratio_normal(const MglmmParams& theta, const MglmmParams& theta0,
                            const MglmmDataset& data);

/// Same for the diagonal binary subcollection W2, using the marginal success
/// probabilities. Throws NumericalError if a probability degenerates to 0/1.
double subcoll_ratio_bernoulli(const MglmmParams& theta, const MglmmParams& theta0,
                               const MglmmDataset& data, int q = 64);

/// Closed-form E[Lambda_N(theta; W1)] = -sum_i KL of univariate normals.
double expected_subcoll_ratio_normal(const MglmmParams& theta, const MglmmParams& theta0,
                                     const MglmmDesign& design);

/// Closed-form E[Lambda_N(theta; W2)] = -sum_i KL of Bernoullis (exact up to
/// quadrature error in the success probabilities).
double expected_subcoll_ratio_bernoulli(const MglmmParams& theta, const MglmmParams& theta0,
                                        const MglmmDesign& design, int q = 64);

/// Tuning of the importance-sampling likelihood approximation.
struct ApproxConfig {
    int samples = 4096;
    std::uint64_t seed = 0;
    int max_newton_iter = 60;
    double newton_tol = 1e-9;
    int n_cap = 8;  // largest N for which the full likelihood is evaluated
};

/**
 * Gaussian importance-sampling proposal for the 2N-dimensional random-effect
 * integral: centered at the joint mode of log f(y|u) + log prior, with
 * covariance the inverse negative Hessian there. `draws` holds the proposal
 * samples u_s (columns); they are a deterministic function of cfg.seed, so
 * two proposals built with the same seed use common random numbers.
 */
struct IsProposal {
    Eigen::VectorXd mode;       // length 2N
    Eigen::MatrixXd draws;      // 2N x S
    Eigen::VectorXd log_q;      // log proposal density at each draw
    double logdet_neg_hessian = 0.0;
    int newton_iterations = 0;
};

IsProposal build_is_proposal(const MglmmParams& theta, const MglmmDataset& data,
                             const ApproxConfig& cfg);

struct IsEstimate {
    double estimate = 0.0;
    double mc_stderr = 0.0;
};

/**
 * Importance-sampling estimate of log f_theta(y) on a frozen proposal. As a
 * function of theta with the proposal fixed this is smooth, so its exact
 * gradient (is_loglik_grad) and finite differences of it agree to truncation
 * error; this is the objective optimized inside one fitting round.
 */
IsEstimate is_loglik(const MglmmParams& theta, const MglmmDataset& data,
                     const IsProposal& proposal);

/// Exact gradient of is_loglik in theta (self-normalized weights), length 2p+1.
Eigen::VectorXd is_loglik_grad(const MglmmParams& theta, const MglmmDataset& data,
                               const IsProposal& proposal);

/// Estimate of the marginal log likelihood with the proposal built at theta.
IsEstimate full_loglik_mglmm(const MglmmParams& theta, const MglmmDataset& data,
                             const ApproxConfig& cfg);

/// Score estimate at theta: gradient of the frozen-proposal objective with
/// the proposal built at theta itself.
Eigen::VectorXd mglmm_score(const MglmmParams& theta, const MglmmDataset& data,
                            const ApproxConfig& cfg);

/// Conditional log density log f(y | u) (u stacks the two effect vectors).
double mglmm_conditional_loglik(const MglmmParams& theta, const MglmmDataset& data,
                                const Eigen::VectorXd& u);

/// Log density of the random effects, N(0, theta_d I_{2N}).
double mglmm_prior_loglik(double theta_d, const Eigen::VectorXd& u);

}  // namespace subsetmle
