#include "subsetmle/structured_linalg.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <limits>
#include <string>

#include "subsetmle/errors.hpp"

namespace subsetmle {

Ar1Matrix ar1_matrix(int T, double rho) {
    if (T < 1) throw ConfigError("ar1_matrix: T must be >= 1, got " + std::to_string(T));
    if (!(std::abs(rho) < 1.0)) {
        throw DomainError("ar1_matrix: rho must lie in (-1, 1), got " + std::to_string(rho));
    }
    Ar1Matrix out;
    out.size = T;
    out.rho = rho;
    out.entries.resize(T, T);
    for (int i = 0; i < T; ++i) {
        out.entries(i, i) = 1.0;
        double power = 1.0;
        for (int j = i + 1; j < T; ++j) {
            power *= rho;
            out.entries(i, j) = power;
            out.entries(j, i) = power;
        }
    }
    return out;
}

Eigen::MatrixXd ar1_derivative(const Ar1Matrix& psi) {
    const int T = psi.size;
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(T, T);
    for (int i = 0; i < T; ++i) {
        for (int j = 0; j < T; ++j) {
            const int lag = std::abs(i - j);
            if (lag == 0) continue;
            // d/drho rho^lag; the lag = 1 entry survives rho = 0.
            d(i, j) = lag == 1 ? 1.0 : lag * std::pow(psi.rho, lag - 1);
        }
    }
    return d;
}

LmmCovariance build_lmm_covariance(const LmmParams& theta, int N, int T) {
    theta.validate();
    if (N < 2 || N % 2 != 0) {
        throw ConfigError("build_lmm_covariance: N must be even and >= 2, got " +
                          std::to_string(N));
    }
    if (T < 2 || T % 2 != 0) {
        throw ConfigError("build_lmm_covariance: T must be even and >= 2, got " +
                          std::to_string(T));
    }
    LmmCovariance cov;
    cov.N = N;
    cov.T = T;
    cov.theta3 = theta.theta3;
    cov.theta4 = theta.theta4;
    cov.theta5 = theta.theta5;
    cov.theta6 = theta.theta6;
    cov.psi = ar1_matrix(T, theta.theta7);
    return cov;
}

Eigen::MatrixXd LmmCovariance::block(bool i_avg, bool j_avg) const {
    Eigen::MatrixXd m = theta6 * psi.entries;
    m.diagonal().array() += theta3;
    double shared = 0.0;
    if (j_avg) shared += N * theta4;
    if (i_avg) shared += N * theta5;
    if (shared != 0.0) m.array() += shared;
    return m;
}

Eigen::MatrixXd LmmCovariance::dense(std::int64_t cap) const {
    const std::int64_t size = n();
    if (size > cap) {
        throw ConfigError("LmmCovariance::dense: n = " + std::to_string(size) +
                          " exceeds the dense cap " + std::to_string(cap));
    }
    Eigen::MatrixXd c(size, size);
    const auto index = [this](int i, int j, int t) { return (i * N + j) * T + t; };
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < N; ++j) {
            for (int t = 0; t < T; ++t) {
                const std::int64_t row = index(i, j, t);
                for (int i2 = 0; i2 < N; ++i2) {
                    for (int j2 = 0; j2 < N; ++j2) {
                        for (int t2 = 0; t2 < T; ++t2) {
                            const std::int64_t col = index(i2, j2, t2);
                            double v = 0.0;
                            if (i == i2 && j == j2) {
                                v = theta4 + theta5 + theta6 * psi.entries(t, t2);
                                if (t == t2) v += theta3;
                            } else if (i == i2) {
                                v = theta4;
                            } else if (j == j2) {
                                v = theta5;
                            }
                            c(row, col) = v;
                        }
                    }
                }
            }
        }
    }
    return c;
}

void LmmCovariance::materialize(std::int64_t cap) {
    if (!materialized) materialized = dense(cap);
}

Eigen::MatrixXd cholesky_lower(const Eigen::MatrixXd& a) {
    const auto k = a.rows();
    Eigen::MatrixXd lower = Eigen::MatrixXd::Zero(k, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        double diag = a(j, j) - lower.row(j).head(j).squaredNorm();
        if (!(diag > 0.0) || !std::isfinite(diag)) {
            throw NumericalError("cholesky_lower: non-positive pivot " + std::to_string(diag) +
                                     " at index " + std::to_string(j),
                                 static_cast<int>(j));
        }
        diag = std::sqrt(diag);
        lower(j, j) = diag;
        for (Eigen::Index i = j + 1; i < k; ++i) {
            lower(i, j) = (a(i, j) - lower.row(i).head(j).dot(lower.row(j).head(j))) / diag;
        }
    }
    return lower;
}

double logdet_from_cholesky(const Eigen::MatrixXd& lower) {
    return 2.0 * lower.diagonal().array().log().sum();
}

LmmBlockStats lmm_block_stats(int N, int T, const Eigen::VectorXd& residual) {
    if (residual.size() != static_cast<std::int64_t>(T) * N * N) {
        throw ContractError("lmm_block_stats: residual length " + std::to_string(residual.size()) +
                            " does not match T*N^2 = " + std::to_string(static_cast<long>(T) * N * N));
    }
    // View the residual as an N x N grid of T-vectors; the scatter matrices
    // of the rotated contrast groups only need row sums, column sums and the
    // total sum of those T-vectors.
    Eigen::MatrixXd row_sums = Eigen::MatrixXd::Zero(T, N);  // over j, per i
    Eigen::MatrixXd col_sums = Eigen::MatrixXd::Zero(T, N);  // over i, per j
    Eigen::MatrixXd total_scatter = Eigen::MatrixXd::Zero(T, T);
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < N; ++j) {
            const auto cell = residual.segment(static_cast<std::int64_t>(i * N + j) * T, T);
            row_sums.col(i) += cell;
            col_sums.col(j) += cell;
            total_scatter.noalias() += cell * cell.transpose();
        }
    }
    const Eigen::VectorXd grand = row_sums.rowwise().sum();

    LmmBlockStats stats;
    stats.v_both = grand / static_cast<double>(N);
    const Eigen::MatrixXd grand_outer = grand * grand.transpose() / static_cast<double>(N) / N;
    stats.s4 = row_sums * row_sums.transpose() / static_cast<double>(N) - grand_outer;
    stats.s5 = col_sums * col_sums.transpose() / static_cast<double>(N) - grand_outer;
    stats.s0 = total_scatter - row_sums * row_sums.transpose() / static_cast<double>(N) -
               col_sums * col_sums.transpose() / static_cast<double>(N) + grand_outer;
    return stats;
}

EigenvalueRange lmm_covariance_eigen_range(const LmmCovariance& cov) {
    EigenvalueRange range;
    range.min = std::numeric_limits<double>::infinity();
    range.max = -range.min;
    for (bool i_avg : {false, true}) {
        for (bool j_avg : {false, true}) {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov.block(i_avg, j_avg),
                                                                  Eigen::EigenvaluesOnly);
            range.min = std::min(range.min, solver.eigenvalues().minCoeff());
            range.max = std::max(range.max, solver.eigenvalues().maxCoeff());
        }
    }
    return range;
}

GaussianKernel gaussian_kernel(const LmmCovariance& cov, const Eigen::VectorXd& residual) {
    const int N = cov.N;
    const LmmBlockStats stats = lmm_block_stats(N, cov.T, residual);

    const Eigen::MatrixXd m_both = cov.block(true, true);
    const Eigen::MatrixXd m4 = cov.block(false, true);
    const Eigen::MatrixXd m5 = cov.block(true, false);
    const Eigen::MatrixXd m0 = cov.block(false, false);

    const Eigen::MatrixXd l_both = cholesky_lower(m_both);
    const Eigen::MatrixXd l4 = cholesky_lower(m4);
    const Eigen::MatrixXd l5 = cholesky_lower(m5);
    const Eigen::MatrixXd l0 = cholesky_lower(m0);

    GaussianKernel out;
    out.logdet = logdet_from_cholesky(l_both) +
                 (N - 1) * (logdet_from_cholesky(l4) + logdet_from_cholesky(l5)) +
                 static_cast<double>(N - 1) * (N - 1) * logdet_from_cholesky(l0);

    // quad = v' M^{-1} v for the doubly-averaged block plus tr(M^{-1} S) for
    // each contrast group.
    const auto quad_vec = [](const Eigen::MatrixXd& lower, const Eigen::VectorXd& v) {
        return lower.triangularView<Eigen::Lower>().solve(v).squaredNorm();
    };
    const auto quad_scatter = [](const Eigen::MatrixXd& lower, const Eigen::MatrixXd& s) {
        const Eigen::MatrixXd half = lower.triangularView<Eigen::Lower>().solve(s);
        const Eigen::MatrixXd full =
            lower.transpose().triangularView<Eigen::Upper>().solve(half);
        return full.trace();
    };
    out.quad = quad_vec(l_both, stats.v_both) + quad_scatter(l4, stats.s4) +
               quad_scatter(l5, stats.s5) + quad_scatter(l0, stats.s0);
    return out;
}

}  // namespace subsetmle
