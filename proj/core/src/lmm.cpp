#include "subsetmle/lmm.hpp"

#include <cmath>
#include <string>

#include "subsetmle/errors.hpp"
#include "subsetmle/rng.hpp"

namespace subsetmle {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
}

Eigen::VectorXd treatment_column(int T) {
    Eigen::VectorXd h = Eigen::VectorXd::Zero(T);
    h.head(T / 2).setOnes();
    return h;
}

double lmm_mean_at(const LmmParams& theta, int T, int t) {
    return theta.theta1 + (t < T / 2 ? theta.theta2 : 0.0);
}

LmmDataset simulate_lmm(const LmmParams& theta, int N, int T, std::uint64_t seed) {
    theta.validate();
    if (N < 2 || N % 2 != 0) {
        throw ConfigError("simulate_lmm: N must be even and >= 2, got " + std::to_string(N));
    }
    if (T < 4 || T % 2 != 0) {
        throw ConfigError("simulate_lmm: T must be even and >= 4, got " + std::to_string(T));
    }

    SplitRng root(seed);
    SplitRng rng_u1 = root.split(0);
    SplitRng rng_u2 = root.split(1);
    SplitRng rng_ar = root.split(2);
    SplitRng rng_eps = root.split(3);

    Eigen::VectorXd u1(N), u2(N);
    const double sd4 = std::sqrt(theta.theta4);
    const double sd5 = std::sqrt(theta.theta5);
    for (int i = 0; i < N; ++i) u1[i] = sd4 * rng_u1.normal();
    for (int j = 0; j < N; ++j) u2[j] = sd5 * rng_u2.normal();

    LmmDataset data;
    data.N = N;
    data.T = T;
    data.seed = seed;
    data.y.resize(data.n());

    const double rho = theta.theta7;
    const double sd6 = std::sqrt(theta.theta6);
    const double innovation_sd = sd6 * std::sqrt(1.0 - rho * rho);
    const double sd3 = std::sqrt(theta.theta3);

    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < N; ++j) {
            // AR(1) process per subject, exact stationary start.
            double ar = sd6 * rng_ar.normal();
            for (int t = 0; t < T; ++t) {
                if (t > 0) ar = rho * ar + innovation_sd * rng_ar.normal();
                data.y[data.index(i, j, t)] = lmm_mean_at(theta, T, t) + u1[i] + u2[j] + ar +
                                              sd3 * rng_eps.normal();
            }
        }
    }
    return data;
}

double lmm_loglik(const LmmParams& theta, const LmmDataset& data) {
    theta.validate();
    if (data.y.size() != data.n()) {
        throw ContractError("lmm_loglik: dataset vector has length " +
                            std::to_string(data.y.size()) + ", expected " +
                            std::to_string(data.n()));
    }
    const LmmCovariance cov = build_lmm_covariance(theta, data.N, data.T);
    Eigen::VectorXd residual = data.y;
    for (int t = 0; t < data.T; ++t) {
        const double mean = lmm_mean_at(theta, data.T, t);
        for (int i = 0; i < data.N; ++i) {
            for (int j = 0; j < data.N; ++j) residual[data.index(i, j, t)] -= mean;
        }
    }
    const GaussianKernel kernel = gaussian_kernel(cov, residual);
    return -0.5 * (kernel.logdet + kernel.quad + static_cast<double>(data.n()) * kLog2Pi);
}

double lmm_loglik_ratio(const LmmParams& theta, const LmmParams& theta0, const LmmDataset& data) {
    return lmm_loglik(theta, data) - lmm_loglik(theta0, data);
}

Eigen::VectorXd lmm_score(const LmmParams& theta, const LmmDataset& data) {
    theta.validate();
    const int N = data.N;
    const int T = data.T;
    const LmmCovariance cov = build_lmm_covariance(theta, N, T);

    Eigen::VectorXd residual = data.y;
    for (int t = 0; t < T; ++t) {
        const double mean = lmm_mean_at(theta, T, t);
        for (int i = 0; i < N; ++i) {
            for (int j = 0; j < N; ++j) residual[data.index(i, j, t)] -= mean;
        }
    }
    const LmmBlockStats stats = lmm_block_stats(N, T, residual);

    struct Group {
        Eigen::MatrixXd inv;      // M^{-1}
        Eigen::MatrixXd weight;   // mult * M^{-1} - M^{-1} S M^{-1}
        bool has_theta4, has_theta5;
    };
    const auto make_group = [&](bool i_avg, bool j_avg, double mult,
                                const Eigen::MatrixXd& scatter) {
        const Eigen::MatrixXd m = cov.block(i_avg, j_avg);
        const Eigen::MatrixXd lower = cholesky_lower(m);
        const Eigen::MatrixXd inv = lower.transpose().triangularView<Eigen::Upper>().solve(
            lower.triangularView<Eigen::Lower>().solve(
                Eigen::MatrixXd::Identity(T, T)));
        Group g;
        g.inv = inv;
        g.weight = mult * inv - inv * scatter * inv;
        g.has_theta4 = j_avg;
        g.has_theta5 = i_avg;
        return g;
    };

    const Eigen::MatrixXd v_outer = stats.v_both * stats.v_both.transpose();
    const double nm1 = static_cast<double>(N - 1);
    Group groups[4] = {
        make_group(true, true, 1.0, v_outer),
        make_group(false, true, nm1, stats.s4),
        make_group(true, false, nm1, stats.s5),
        make_group(false, false, nm1 * nm1, stats.s0),
    };

    Eigen::VectorXd score(LmmParams::kDim);

    // Mean parameters: 1' C^{-1} r and h' C^{-1} r. Both design columns are
    // constant across subjects, so they live entirely in the doubly-averaged
    // block with coordinates N * 1_T and N * h_T.
    const Eigen::VectorXd m_both_inv_v = groups[0].inv * stats.v_both;
    const Eigen::VectorXd h = treatment_column(T);
    score[0] = N * m_both_inv_v.sum();
    score[1] = N * h.dot(m_both_inv_v);

    // Covariance parameters: -1/2 sum_g <weight_g, dM_g/dtheta_k>.
    const Eigen::MatrixXd dpsi = ar1_derivative(cov.psi);
    for (int k = 2; k < LmmParams::kDim; ++k) score[k] = 0.0;
    for (const Group& g : groups) {
        score[2] += -0.5 * g.weight.trace();
        const double j_sum = g.weight.sum();
        if (g.has_theta4) score[3] += -0.5 * N * j_sum;
        if (g.has_theta5) score[4] += -0.5 * N * j_sum;
        score[5] += -0.5 * g.weight.cwiseProduct(cov.psi.entries).sum();
        score[6] += -0.5 * cov.theta6 * g.weight.cwiseProduct(dpsi).sum();
    }
    return score;
}

Subcollection subcollection_from_name(const std::string& name) {
    if (name == "W1" || name == "w1") return Subcollection::W1;
    if (name == "W2" || name == "w2") return Subcollection::W2;
    throw ConfigError("unknown subcollection '" + name + "' (expected W1 or W2)");
}

std::string subcollection_name(Subcollection which) {
    return which == Subcollection::W1 ? "W1" : "W2";
}

LmmSubcollection extract_subcollection(const LmmDataset& data, Subcollection which) {
    if (data.N < 2 || data.N % 2 != 0) {
        throw ConfigError("extract_subcollection: N must be even, got " + std::to_string(data.N));
    }
    const int min_T = which == Subcollection::W1 ? 1 : 3;
    if (data.T < min_T) {
        throw ConfigError("extract_subcollection: T = " + std::to_string(data.T) +
                          " too small for " + subcollection_name(which) + " (needs T >= " +
                          std::to_string(min_T) + ")");
    }
    LmmSubcollection sub;
    sub.which = which;
    sub.m = data.N / 2;
    if (which == Subcollection::W1) {
        sub.blocks.resize(sub.m, 2);
        for (int b = 0; b < sub.m; ++b) {
            const int a = 2 * b;      // subject index 2i-1, 0-based
            const int c = 2 * b + 1;  // subject index 2i, 0-based
            sub.blocks(b, 0) = data.at(a, a, 0);
            sub.blocks(b, 1) = data.at(c, c, data.T - 1);
        }
    } else {
        sub.blocks.resize(sub.m, 5);
        for (int b = 0; b < sub.m; ++b) {
            const int a = 2 * b;
            const int c = 2 * b + 1;
            sub.blocks(b, 0) = data.at(a, a, 0);
            sub.blocks(b, 1) = data.at(a, a, 1);
            sub.blocks(b, 2) = data.at(a, a, 2);
            sub.blocks(b, 3) = data.at(a, c, 0);
            sub.blocks(b, 4) = data.at(c, a, 0);
        }
    }
    return sub;
}

Eigen::Vector2d w1_mean(const LmmParams& theta) {
    return Eigen::Vector2d(theta.theta1 + theta.theta2, theta.theta1);
}

double w1_variance(const LmmParams& theta) {
    return theta.theta3 + theta.theta4 + theta.theta5 + theta.theta6;
}

Eigen::VectorXd w2_mean(const LmmParams& theta, int T) {
    Eigen::VectorXd m(5);
    for (int t = 0; t < 3; ++t) m[t] = lmm_mean_at(theta, T, t);
    m[3] = lmm_mean_at(theta, T, 0);
    m[4] = lmm_mean_at(theta, T, 0);
    return m;
}

Eigen::MatrixXd w2_covariance(const LmmParams& theta) {
    const double diag = theta.theta3 + theta.theta4 + theta.theta5 + theta.theta6;
    const double lag1 = theta.theta4 + theta.theta5 + theta.theta6 * theta.theta7;
    const double lag2 = theta.theta4 + theta.theta5 + theta.theta6 * theta.theta7 * theta.theta7;
    Eigen::MatrixXd c(5, 5);
    c.setZero();
    c.diagonal().setConstant(diag);
    c(0, 1) = c(1, 2) = lag1;
    c(0, 2) = lag2;
    // Component 4 shares the row effect with 1..3, component 5 the column
    // effect; 4 and 5 share nothing.
    for (int k = 0; k < 3; ++k) {
        c(k, 3) = theta.theta4;
        c(k, 4) = theta.theta5;
    }
    c = c.selfadjointView<Eigen::Upper>();
    return c;
}

namespace {

double gaussian_logdens(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                        const Eigen::MatrixXd& cov) {
    const Eigen::MatrixXd lower = cholesky_lower(cov);
    const Eigen::VectorXd z = lower.triangularView<Eigen::Lower>().solve(x - mean);
    return -0.5 * (z.squaredNorm() + logdet_from_cholesky(lower) +
                   static_cast<double>(x.size()) * kLog2Pi);
}

}  // namespace

double subcollection_loglik_ratio(const LmmParams& theta, const LmmParams& theta0,
                                  const LmmSubcollection& sub, int T) {
    theta.validate();
    theta0.validate();
    Eigen::VectorXd mean, mean0;
    Eigen::MatrixXd cov, cov0;
    if (sub.which == Subcollection::W1) {
        mean = w1_mean(theta);
        mean0 = w1_mean(theta0);
        cov = w1_variance(theta) * Eigen::MatrixXd::Identity(2, 2);
        cov0 = w1_variance(theta0) * Eigen::MatrixXd::Identity(2, 2);
    } else {
        mean = w2_mean(theta, T);
        mean0 = w2_mean(theta0, T);
        cov = w2_covariance(theta);
        cov0 = w2_covariance(theta0);
    }
    const Eigen::MatrixXd lower = cholesky_lower(cov);
    const Eigen::MatrixXd lower0 = cholesky_lower(cov0);
    const double logdet_diff = logdet_from_cholesky(lower) - logdet_from_cholesky(lower0);
    double total = 0.0;
    for (int b = 0; b < sub.m; ++b) {
        const Eigen::VectorXd block = sub.blocks.row(b).transpose();
        const double q = lower.triangularView<Eigen::Lower>().solve(block - mean).squaredNorm();
        const double q0 = lower0.triangularView<Eigen::Lower>().solve(block - mean0).squaredNorm();
        total += -0.5 * (logdet_diff + q - q0);
    }
    return total;
}

double gaussian_expected_log_ratio(const Eigen::VectorXd& mean0, const Eigen::MatrixXd& cov0,
                                   const Eigen::VectorXd& mean1, const Eigen::MatrixXd& cov1) {
    const auto k = mean0.size();
    const Eigen::MatrixXd lower1 = cholesky_lower(cov1);
    const Eigen::MatrixXd lower0 = cholesky_lower(cov0);
    const Eigen::MatrixXd c1_inv_c0 = lower1.transpose().triangularView<Eigen::Upper>().solve(
        lower1.triangularView<Eigen::Lower>().solve(cov0));
    const Eigen::VectorXd z = lower1.triangularView<Eigen::Lower>().solve(mean1 - mean0);
    const double logdet_ratio = logdet_from_cholesky(lower1) - logdet_from_cholesky(lower0);
    return -0.5 * (c1_inv_c0.trace() - static_cast<double>(k) + z.squaredNorm() + logdet_ratio);
}

double subcollection_expected_ratio(const LmmParams& theta, const LmmParams& theta0,
                                    Subcollection which, int T) {
    theta.validate();
    theta0.validate();
    if (which == Subcollection::W1) {
        return gaussian_expected_log_ratio(w1_mean(theta0),
                                           w1_variance(theta0) * Eigen::MatrixXd::Identity(2, 2),
                                           w1_mean(theta),
                                           w1_variance(theta) * Eigen::MatrixXd::Identity(2, 2));
    }
    return gaussian_expected_log_ratio(w2_mean(theta0, T), w2_covariance(theta0),
                                       w2_mean(theta, T), w2_covariance(theta));
}

// ---------------------------------------------------------------------------
// Toy model
// ---------------------------------------------------------------------------

Eigen::MatrixXd simulate_toy(double theta_mean, int N, std::uint64_t seed) {
    if (N < 2) throw ConfigError("simulate_toy: N must be >= 2, got " + std::to_string(N));
    SplitRng root(seed);
    SplitRng rng_u1 = root.split(0);
    SplitRng rng_u2 = root.split(1);
    SplitRng rng_eps = root.split(2);
    Eigen::VectorXd u1(N), u2(N);
    for (int i = 0; i < N; ++i) u1[i] = rng_u1.normal();
    for (int j = 0; j < N; ++j) u2[j] = rng_u2.normal();
    Eigen::MatrixXd y(N, N);
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < N; ++j) y(i, j) = theta_mean + u1[i] + u2[j] + rng_eps.normal();
    }
    return y;
}

double fit_toy(const Eigen::MatrixXd& data) {
    if (data.rows() != data.cols() || data.rows() < 2) {
        throw ContractError("fit_toy: data must be a square matrix with N >= 2");
    }
    return data.mean();
}

namespace {

// Rotated-basis pieces of the toy covariance V = I + I(x)J + J(x)I: the
// doubly-averaged direction has variance 2N+1, the two contrast groups N+1,
// and the fully centered group 1.
struct ToyQuad {
    double quad;
    double logdet;
};

ToyQuad toy_kernel(const Eigen::MatrixXd& residual) {
    const int N = static_cast<int>(residual.rows());
    const double grand = residual.sum();
    const double row_sq = residual.rowwise().sum().squaredNorm();
    const double col_sq = residual.colwise().sum().squaredNorm();
    const double total_sq = residual.squaredNorm();

    const double v_both_sq = grand * grand / static_cast<double>(N) / N;
    const double s4 = row_sq / N - v_both_sq;
    const double s5 = col_sq / N - v_both_sq;
    const double s0 = total_sq - row_sq / N - col_sq / N + v_both_sq;

    ToyQuad out;
    out.quad = v_both_sq / (2.0 * N + 1.0) + (s4 + s5) / (N + 1.0) + s0;
    out.logdet = std::log(2.0 * N + 1.0) + 2.0 * (N - 1) * std::log(N + 1.0);
    return out;
}

}  // namespace

double toy_loglik(double theta_mean, const Eigen::MatrixXd& data) {
    const int N = static_cast<int>(data.rows());
    const Eigen::MatrixXd residual = data.array() - theta_mean;
    const ToyQuad kernel = toy_kernel(residual);
    return -0.5 * (kernel.quad + kernel.logdet + static_cast<double>(N) * N * kLog2Pi);
}

double toy_score(double theta_mean, const Eigen::MatrixXd& data) {
    const int N = static_cast<int>(data.rows());
    // 1' V^{-1} r: the all-ones direction lies in the doubly-averaged block.
    const double grand = data.sum() - theta_mean * N * N;
    return grand / (2.0 * N + 1.0);
}

double toy_estimator_variance(int N) {
    const double n = static_cast<double>(N);
    return (2.0 * n * n * n + n * n) / (n * n * n * n);
}

}  // namespace subsetmle
