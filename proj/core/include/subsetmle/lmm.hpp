#pragma once

#include <Eigen/Core>
#include <cstdint>

#include "subsetmle/params.hpp"
#include "subsetmle/structured_linalg.hpp"

namespace subsetmle {

/**
 * Simulated response array of the longitudinal LMM. The vector `y` stacks
 * Y_{ijt} with t fastest, then the column subject j, then the row subject i,
 * matching the covariance layout in structured_linalg.
 */
struct LmmDataset {
    int N = 0;
    int T = 0;
    std::uint64_t seed = 0;
    Eigen::VectorXd y;

    [[nodiscard]] std::int64_t n() const { return static_cast<std::int64_t>(T) * N * N; }
    [[nodiscard]] std::int64_t index(int i, int j, int t) const {
        return (static_cast<std::int64_t>(i) * N + j) * T + t;
    }
    /// 0-based subject/time indices.
    [[nodiscard]] double at(int i, int j, int t) const { return y[index(i, j, t)]; }
};

/// Treatment indicator over time: 1 in the first half of the range (0-based
/// t < T/2), 0 after.
Eigen::VectorXd treatment_column(int T);

/// Mean of Y_{ijt}; depends on t only.
double lmm_mean_at(const LmmParams& theta, int T, int t);

/**
 * Draw a dataset from the LMM. The crossed effects, the AR(1) processes and
 * the measurement noise are sampled from separate child streams of `seed`,
 * so the output is a pure function of (theta, N, T, seed).
 */
LmmDataset simulate_lmm(const LmmParams& theta, int N, int T, std::uint64_t seed);

/// Exact marginal Gaussian log density of the dataset under theta.
double lmm_loglik(const LmmParams& theta, const LmmDataset& data);

/// Log-likelihood ratio log f_theta(Y) - log f_theta0(Y).
double lmm_loglik_ratio(const LmmParams& theta, const LmmParams& theta0, const LmmDataset& data);

/// Analytic gradient of lmm_loglik in the natural parameters (length 7).
Eigen::VectorXd lmm_score(const LmmParams& theta, const LmmDataset& data);

enum class Subcollection { W1, W2 };

Subcollection subcollection_from_name(const std::string& name);
std::string subcollection_name(Subcollection which);

/**
 * Independent blocks extracted from a dataset. Blocks are rows of `blocks`;
 * block i (1-based) is
 *   W1: (Y_{2i-1,2i-1,1}, Y_{2i,2i,T})
 *   W2: (Y_{2i-1,2i-1,1}, Y_{2i-1,2i-1,2}, Y_{2i-1,2i-1,3},
 *        Y_{2i-1,2i,1},   Y_{2i,2i-1,1})
 * No two blocks share a random effect, so they are independent; their
 * common distribution is Gaussian with the moments below.
 */
struct LmmSubcollection {
    Subcollection which = Subcollection::W1;
    int m = 0;               // number of blocks, N/2
    Eigen::MatrixXd blocks;  // m x (2 or 5)
};

LmmSubcollection extract_subcollection(const LmmDataset& data, Subcollection which);

/// Block mean of W1: [theta1 + theta2, theta1].
Eigen::Vector2d w1_mean(const LmmParams& theta);

/// Common scalar variance of both W1 components: theta3+theta4+theta5+theta6.
double w1_variance(const LmmParams& theta);

/// Block mean of W2. The first three components sit at times 1..3, so their
/// means carry the treatment effect only while t <= T/2; the last two sit at
/// time 1 and are always treated.
Eigen::VectorXd w2_mean(const LmmParams& theta, int T);

/// 5 x 5 block covariance of W2 (independent of T).
Eigen::MatrixXd w2_covariance(const LmmParams& theta);

/**
 * Subcollection log-likelihood ratio Lambda_m(theta; W) = sum over blocks of
 * log g_theta(block) - log g_theta0(block), using the closed-form Gaussian
 * block densities. T is needed to place the treatment switch in the W2 mean.
 */
double subcollection_loglik_ratio(const LmmParams& theta, const LmmParams& theta0,
                                  const LmmSubcollection& sub, int T);

/**
 * Expected per-block log-likelihood ratio E_theta0[Lambda_1(theta)], i.e. the
 * negative Kullback-Leibler divergence of the theta block law from the theta0
 * block law. Strictly negative whenever the block distributions differ.
 */
double subcollection_expected_ratio(const LmmParams& theta, const LmmParams& theta0,
                                    Subcollection which, int T);

/// Negative KL divergence -KL(N(m0,C0) || N(m1,C1)), the expected log ratio.
double gaussian_expected_log_ratio(const Eigen::VectorXd& mean0, const Eigen::MatrixXd& cov0,
                                   const Eigen::VectorXd& mean1, const Eigen::MatrixXd& cov1);

// ---------------------------------------------------------------------------
// Toy crossed model: Y_{ij} = theta + U1_i + U2_j + E_{ij}, all standard
// normal. The grand mean is the exact MLE and its sampling variance is
// (2N^3 + N^2) / N^4.
// ---------------------------------------------------------------------------

Eigen::MatrixXd simulate_toy(double theta_mean, int N, std::uint64_t seed);

/// Grand mean = MLE of the toy location parameter.
double fit_toy(const Eigen::MatrixXd& data);

/// Exact Gaussian log likelihood of the toy model at mean theta.
double toy_loglik(double theta_mean, const Eigen::MatrixXd& data);

/// d/dtheta of toy_loglik.
double toy_score(double theta_mean, const Eigen::MatrixXd& data);

/// Exact sampling variance of the toy MLE: (2N^3 + N^2) / N^4.
double toy_estimator_variance(int N);

}  // namespace subsetmle
