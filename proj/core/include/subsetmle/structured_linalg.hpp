#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>

#include "subsetmle/params.hpp"

namespace subsetmle {

/// First order autoregressive correlation matrix, entries rho^|i-j|.
struct Ar1Matrix {
    int size = 0;
    double rho = 0.0;
    Eigen::MatrixXd entries;
};

/// Build the T x T AR(1) correlation matrix. Throws DomainError if |rho| >= 1.
Ar1Matrix ar1_matrix(int T, double rho);

/// Entrywise derivative of the AR(1) matrix with respect to rho.
Eigen::MatrixXd ar1_derivative(const Ar1Matrix& psi);

/**
 * Marginal covariance C(theta) of the stacked LMM response vector (time indexinner,
 * then column subject index, then row subject index), n = T * N^2:
 *
 *   cov(Y_{ijt}, Y_{i'j't'}) = theta3 * 1{(i,j,t) = (i',j',t')}
 *                            + (theta4 + theta5 + theta6 * theta7^|t-t'|) * 1{i=i', j=j'}
 *                            + theta4 * 1{i=i', j!=j'}
 *                            + theta5 * 1{i!=i', j=j'}.
 *
 * An orthogonal change of basis that rotates the two subject dimensions onto
 * (mean, contrasts) block-diagonalizes C into four distinct T x T blocks:
 *
 *   block(i_avg, j_avg) = theta3*I + theta6*Psi + N*theta4*J*1{j_avg} + N*theta5*J*1{i_avg}
 *
 * with multiplicities 1, N-1, N-1 and (N-1)^2. All kernel operations run on
 * these blocks; `dense()` materializes the full matrix for oracle use.
 */
struct LmmCovariance {
    int N = 0;
    int T = 0;
    double theta3 = 0.0, theta4 = 0.0, theta5 = 0.0, theta6 = 0.0;
    Ar1Matrix psi;
    std::optional<Eigen::MatrixXd> materialized;

    [[nodiscard]] std::int64_t n() const {
        return static_cast<std::int64_t>(T) * N * N;
    }

    /// One of the four distinct diagonal blocks of the rotated covariance.
    [[nodiscard]] Eigen::MatrixXd block(bool i_avg, bool j_avg) const;

    /// Materialize the full n x n matrix. Throws ConfigError above `cap`.
    [[nodiscard]] Eigen::MatrixXd dense(std::int64_t cap = kDenseCap) const;

    /// Fill `materialized` (idempotent).
    void materialize(std::int64_t cap = kDenseCap);

    static constexpr std::int64_t kDenseCap = 4096;
};

/// Covariance for interior theta and even N, T. Throws DomainError /
/// ConfigError otherwise.
LmmCovariance build_lmm_covariance(const LmmParams& theta, int N, int T);

struct GaussianKernel {
    double quad = 0.0;    // residual' C^{-1} residual
    double logdet = 0.0;  // log det C
};

/**
 * Quadratic form and log-determinant of the structured covariance, computed
 * through the block diagonalization with one Cholesky per distinct block.
 * residual must have length n() and use the (t fastest, then j, then i)
 * stacking. Throws NumericalError with the failing pivot index if a block is
 * not positive definite.
 */
GaussianKernel gaussian_kernel(const LmmCovariance& cov, const Eigen::VectorXd& residual);

/**
 * Sufficient statistics of a residual vector in the rotated basis: the
 * coordinate vector of the doubly-averaged block and the scatter matrices of
 * the three contrast groups. Together with the four blocks these determine
 * the quadratic form and all its parameter derivatives.
 */
struct LmmBlockStats {
    Eigen::VectorXd v_both;  // coordinates of the (mean, mean) block, length T
    Eigen::MatrixXd s4;      // scatter over blocks sharing only the row effect
    Eigen::MatrixXd s5;      // scatter over blocks sharing only the column effect
    Eigen::MatrixXd s0;      // scatter over fully centered blocks
};

LmmBlockStats lmm_block_stats(int N, int T, const Eigen::VectorXd& residual);

/**
 * Lower Cholesky factor of a symmetric positive definite matrix. Unlike
 * Eigen's LLT this reports the index of the first failing pivot, which the
 * kernel surfaces in NumericalError.
 */
Eigen::MatrixXd cholesky_lower(const Eigen::MatrixXd& a);

/// log det from a lower Cholesky factor.
double logdet_from_cholesky(const Eigen::MatrixXd& lower);

/// Measured extreme eigenvalues of C(theta), computed exactly from the four
/// distinct blocks (every eigenvalue of C is an eigenvalue of one of them).
struct EigenvalueRange {
    double min = 0.0;
    double max = 0.0;
};
EigenvalueRange lmm_covariance_eigen_range(const LmmCovariance& cov);

}  // namespace subsetmle
