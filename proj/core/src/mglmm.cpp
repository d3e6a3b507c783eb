#include "subsetmle/mglmm.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "subsetmle/errors.hpp"
#include "subsetmle/quadrature.hpp"
#include "subsetmle/rng.hpp"
#include "subsetmle/structured_linalg.hpp"

namespace subsetmle {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

inline double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }

inline double softplus(double t) {
    if (t > 35.0) return t;
    if (t < -35.0) return std::exp(t);
    return std::log1p(std::exp(t));
}

}  // namespace

double MglmmDesign::gram_min_eigenvalue() const {
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
    for (int i = 0; i < N; ++i) {
        const Eigen::VectorXd xi = x_at(i, i);
        gram.noalias() += xi * xi.transpose();
    }
    gram /= static_cast<double>(N);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram, Eigen::EigenvaluesOnly);
    return solver.eigenvalues().minCoeff();
}

void MglmmDesign::validate(double gram_floor) const {
    if (N < 1 || p < 1 || x.rows() != static_cast<std::int64_t>(N) * N || x.cols() != p) {
        throw ConfigError("MglmmDesign: x must be (N*N) x p with N, p >= 1");
    }
    for (std::int64_t r = 0; r < x.rows(); ++r) {
        if (x.row(r).norm() > 1.0 + 1e-12) {
            throw ConfigError("MglmmDesign: ||x|| exceeds 1 at flat index " + std::to_string(r));
        }
    }
    // The diagonal Gram matrix has rank at most N, so the floor is only
    // meaningful once N >= p.
    if (N >= p) {
        const double lambda = gram_min_eigenvalue();
        if (lambda < gram_floor) {
            throw ConfigError("MglmmDesign: diagonal Gram min eigenvalue " +
                              std::to_string(lambda) + " below the floor " +
                              std::to_string(gram_floor));
        }
    }
}

MglmmDesign random_design(int N, int p, std::uint64_t seed, double gram_floor) {
    if (N < 1 || p < 1) throw ConfigError("random_design: N and p must be >= 1");
    SplitRng root(seed);
    for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
        SplitRng rng = root.split(attempt);
        MglmmDesign design;
        design.N = N;
        design.p = p;
        design.x.resize(static_cast<std::int64_t>(N) * N, p);
        for (std::int64_t r = 0; r < design.x.rows(); ++r) {
            // Uniform in the unit ball: normal direction, radius U^{1/p}.
            Eigen::VectorXd dir(p);
            for (int k = 0; k < p; ++k) dir[k] = rng.normal();
            const double norm = dir.norm();
            const double radius = std::pow(rng.uniform(), 1.0 / p);
            design.x.row(r) = (radius / norm) * dir.transpose();
        }
        if (N < p || design.gram_min_eigenvalue() >= gram_floor) return design;
    }
    throw ConfigError("random_design: could not satisfy the Gram floor " +
                      std::to_string(gram_floor) + " in 64 attempts (N = " + std::to_string(N) +
                      ", p = " + std::to_string(p) + ")");
}

MglmmDataset simulate_mglmm(const MglmmParams& theta, const MglmmDesign& design,
                            std::uint64_t seed) {
    theta.validate();
    design.validate();
    if (theta.p() != design.p) {
        throw ContractError("simulate_mglmm: parameter p = " + std::to_string(theta.p()) +
                            " does not match design p = " + std::to_string(design.p));
    }
    const int N = design.N;
    SplitRng root(seed);
    SplitRng rng_u1 = root.split(0);
    SplitRng rng_u2 = root.split(1);
    SplitRng rng_normal = root.split(2);
    SplitRng rng_binary = root.split(3);

    const double sd = std::sqrt(theta.theta_d);
    Eigen::VectorXd u1(N), u2(N);
    for (int i = 0; i < N; ++i) u1[i] = sd * rng_u1.normal();
    for (int j = 0; j < N; ++j) u2[j] = sd * rng_u2.normal();

    MglmmDataset data;
    data.design = design;
    data.seed = seed;
    data.y1.resize(N, N);
    data.y2.resize(N, N);
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < N; ++j) {
            const Eigen::VectorXd xij = design.x_at(i, j);
            const double shared = u1[i] + u2[j];
            data.y1(i, j) = xij.dot(theta.beta1) + shared + rng_normal.normal();
            const double prob = logistic(xij.dot(theta.beta2) + shared);
            data.y2(i, j) = rng_binary.uniform() < prob ? 1.0 : 0.0;
        }
    }
    return data;
}

double marginal_success_prob(double eta0, double theta_d, int q) {
    if (!(theta_d > 0.0)) {
        throw DomainError("marginal_success_prob: theta_d must be positive, got " +
                          std::to_string(theta_d));
    }
    // Reflection keeps the adaptive rule on eta0 >= 0 where the symmetrized
    // integrand (logistic(eta0+v) + logistic(eta0-v))/2 peaks at v = 0; the
    // curvature-matched width sharpens plain Gauss-Hermite by an order of
    // magnitude and keeps p(0, theta_d) = 1/2 exact.
    if (eta0 < 0.0) return 1.0 - marginal_success_prob(-eta0, theta_d, q);
    const double s2 = 2.0 * theta_d;
    const double sig = logistic(eta0);
    const double curvature = (1.0 - sig) * (2.0 * sig - 1.0);
    const double tau2 = 1.0 / (1.0 / s2 + curvature);
    const double scale = std::sqrt(2.0 * tau2);

    const GaussHermiteRule& rule = gauss_hermite(q);
    double acc = 0.0;
    for (int k = 0; k < q; ++k) {
        const double z = rule.nodes[k];
        const double v = scale * z;
        const double symmetrized = 0.5 * (logistic(eta0 + v) + logistic(eta0 - v));
        acc += symmetrized * rule.modified_weights[k] * std::exp(-v * v / (2.0 * s2));
    }
    return acc * scale / std::sqrt(2.0 * M_PI * s2);
}

double marginal_success_prob(const Eigen::VectorXd& x, const Eigen::VectorXd& beta2,
                             double theta_d, int q) {
    if (x.size() != beta2.size()) {
        throw ContractError("marginal_success_prob: x and beta2 sizes differ");
    }
    return marginal_success_prob(x.dot(beta2), theta_d, q);
}

double bernoulli_kl(double p0, double p1) {
    if (!(p0 > 0.0 && p0 < 1.0 && p1 > 0.0 && p1 < 1.0)) {
        throw DomainError("bernoulli_kl: probabilities must lie strictly in (0, 1)");
    }
    return p0 * std::log(p0 / p1) + (1.0 - p0) * std::log((1.0 - p0) / (1.0 - p1));
}

namespace {

double normal_logdens(double y, double mean, double var) {
    const double z = y - mean;
    return -0.5 * (std::log(var) + z * z / var + kLog2Pi);
}

}  // namespace

double subcoll_ratio_normal(const MglmmParams& theta, const MglmmParams& theta0,
                            const MglmmDataset& data) {
    theta.validate();
    theta0.validate();
    const double var = 1.0 + 2.0 * theta.theta_d;
    const double var0 = 1.0 + 2.0 * theta0.theta_d;
    double total = 0.0;
    for (int i = 0; i < data.N(); ++i) {
        const Eigen::VectorXd xi = data.design.x_at(i, i);
        const double y = data.y1(i, i);
        total += normal_logdens(y, xi.dot(theta.beta1), var) -
                 normal_logdens(y, xi.dot(theta0.beta1), var0);
    }
    return total;
}

double subcoll_ratio_bernoulli(const MglmmParams& theta, const MglmmParams& theta0,
                               const MglmmDataset& data, int q) {
    theta.validate();
    theta0.validate();
    double total = 0.0;
    for (int i = 0; i < data.N(); ++i) {
        const Eigen::VectorXd xi = data.design.x_at(i, i);
        const double p = marginal_success_prob(xi, theta.beta2, theta.theta_d, q);
        const double p0 = marginal_success_prob(xi, theta0.beta2, theta0.theta_d, q);
        if (!(p > 0.0 && p < 1.0 && p0 > 0.0 && p0 < 1.0)) {
            throw NumericalError("subcoll_ratio_bernoulli: degenerate success probability at i = " +
                                 std::to_string(i));
        }
        const double y = data.y2(i, i);
        total += y * std::log(p / p0) + (1.0 - y) * std::log((1.0 - p) / (1.0 - p0));
    }
    return total;
}

double expected_subcoll_ratio_normal(const MglmmParams& theta, const MglmmParams& theta0,
                                     const MglmmDesign& design) {
    const double var = 1.0 + 2.0 * theta.theta_d;
    const double var0 = 1.0 + 2.0 * theta0.theta_d;
    double total = 0.0;
    for (int i = 0; i < design.N; ++i) {
        const Eigen::VectorXd xi = design.x_at(i, i);
        const double delta = xi.dot(theta.beta1 - theta0.beta1);
        total += -0.5 * (std::log(var / var0) + (var0 + delta * delta) / var - 1.0);
    }
    return total;
}

double expected_subcoll_ratio_bernoulli(const MglmmParams& theta, const MglmmParams& theta0,
                                        const MglmmDesign& design, int q) {
    double total = 0.0;
    for (int i = 0; i < design.N; ++i) {
        const Eigen::VectorXd xi = design.x_at(i, i);
        const double p = marginal_success_prob(xi, theta.beta2, theta.theta_d, q);
        const double p0 = marginal_success_prob(xi, theta0.beta2, theta0.theta_d, q);
        total += -bernoulli_kl(p0, p);
    }
    return total;
}

// ---------------------------------------------------------------------------
// Importance-sampling likelihood approximation
// ---------------------------------------------------------------------------

double mglmm_conditional_loglik(const MglmmParams& theta, const MglmmDataset& data,
                                const Eigen::VectorXd& u) {
    const int N = data.N();
    if (u.size() != 2 * N) throw ContractError("mglmm_conditional_loglik: u must have length 2N");
    double total = 0.0;
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < N; ++j) {
            const Eigen::VectorXd xij = data.design.x_at(i, j);
            const double shared = u[i] + u[N + j];
            const double eta1 = xij.dot(theta.beta1) + shared;
            const double eta2 = xij.dot(theta.beta2) + shared;
            const double r = data.y1(i, j) - eta1;
            total += -0.5 * (r * r + kLog2Pi) + data.y2(i, j) * eta2 - softplus(eta2);
        }
    }
    return total;
}

double mglmm_prior_loglik(double theta_d, const Eigen::VectorXd& u) {
    const double r = static_cast<double>(u.size());
    return -0.5 * (r * std::log(2.0 * M_PI * theta_d) + u.squaredNorm() / theta_d);
}

namespace {

// Joint mode of u -> log f(y|u) + log prior via damped Newton. The joint is
// strictly concave, so the (negated) Hessian is positive definite and the
// Newton direction is an ascent direction.
struct ModeResult {
    Eigen::VectorXd mode;
    Eigen::MatrixXd neg_hessian;
    int iterations = 0;
};

ModeResult find_mode(const MglmmParams& theta, const MglmmDataset& data, const ApproxConfig& cfg) {
    const int N = data.N();
    const int dim = 2 * N;
    Eigen::MatrixXd base1(N, N), base2(N, N);
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < N; ++j) {
            const Eigen::VectorXd xij = data.design.x_at(i, j);
            base1(i, j) = xij.dot(theta.beta1);
            base2(i, j) = xij.dot(theta.beta2);
        }
    }

    Eigen::VectorXd u = Eigen::VectorXd::Zero(dim);
    const auto objective = [&](const Eigen::VectorXd& v) {
        double total = mglmm_prior_loglik(theta.theta_d, v);
        for (int i = 0; i < N; ++i) {
            for (int j = 0; j < N; ++j) {
                const double shared = v[i] + v[N + j];
                const double r = data.y1(i, j) - base1(i, j) - shared;
                const double eta2 = base2(i, j) + shared;
                total += -0.5 * (r * r + kLog2Pi) + data.y2(i, j) * eta2 - softplus(eta2);
            }
        }
        return total;
    };

    Eigen::VectorXd grad(dim);
    Eigen::MatrixXd neg_hess(dim, dim);
    double value = objective(u);
    int iter = 0;
    for (; iter < cfg.max_newton_iter; ++iter) {
        grad.setZero();
        neg_hess.setZero();
        for (int i = 0; i < N; ++i) {
            for (int j = 0; j < N; ++j) {
                const double shared = u[i] + u[N + j];
                const double r1 = data.y1(i, j) - base1(i, j) - shared;
                const double prob = logistic(base2(i, j) + shared);
                const double r2 = data.y2(i, j) - prob;
                const double curv = 1.0 + prob * (1.0 - prob);
                grad[i] += r1 + r2;
                grad[N + j] += r1 + r2;
                neg_hess(i, i) += curv;
                neg_hess(N + j, N + j) += curv;
                neg_hess(i, N + j) += curv;
                neg_hess(N + j, i) += curv;
            }
        }
        grad -= u / theta.theta_d;
        neg_hess.diagonal().array() += 1.0 / theta.theta_d;

        if (grad.lpNorm<Eigen::Infinity>() <= cfg.newton_tol) break;

        const Eigen::VectorXd step = neg_hess.llt().solve(grad);
        double alpha = 1.0;
        bool accepted = false;
        for (int halving = 0; halving < 40; ++halving) {
            const Eigen::VectorXd candidate = u + alpha * step;
            const double cand_value = objective(candidate);
            if (cand_value >= value - 1e-14 * std::abs(value)) {
                u = candidate;
                value = cand_value;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) break;  // stalled; gradient check below decides
    }
    if (grad.lpNorm<Eigen::Infinity>() > std::max(cfg.newton_tol, 1e-6)) {
        throw NumericalError(
            "find_mode: Newton did not converge in " + std::to_string(iter) +
            " iterations; last |grad|_inf = " + std::to_string(grad.lpNorm<Eigen::Infinity>()) +
            ", objective = " + std::to_string(value));
    }
    ModeResult result;
    result.mode = u;
    result.neg_hessian = neg_hess;
    result.iterations = iter;
    return result;
}

}  // namespace

IsProposal build_is_proposal(const MglmmParams& theta, const MglmmDataset& data,
                             const ApproxConfig& cfg) {
    theta.validate();
    if (data.N() > cfg.n_cap) {
        throw ConfigError("build_is_proposal: N = " + std::to_string(data.N()) +
                          " exceeds the configured cap " + std::to_string(cfg.n_cap));
    }
    const ModeResult mode = find_mode(theta, data, cfg);
    const int dim = 2 * data.N();
    const Eigen::MatrixXd lower = cholesky_lower(mode.neg_hessian);

    IsProposal proposal;
    proposal.mode = mode.mode;
    proposal.newton_iterations = mode.iterations;
    proposal.logdet_neg_hessian = logdet_from_cholesky(lower);
    proposal.draws.resize(dim, cfg.samples);
    proposal.log_q.resize(cfg.samples);

    // Common random numbers: the standard normal block depends only on
    // cfg.seed, never on theta or the data.
    SplitRng rng = SplitRng(cfg.seed).split(0x49535052);  // stream tag for proposals
    Eigen::VectorXd z(dim);
    const double log_norm = -0.5 * dim * kLog2Pi + 0.5 * proposal.logdet_neg_hessian;
    for (int s = 0; s < cfg.samples; ++s) {
        for (int k = 0; k < dim; ++k) z[k] = rng.normal();
        proposal.draws.col(s) =
            proposal.mode + lower.transpose().triangularView<Eigen::Upper>().solve(z);
        proposal.log_q[s] = log_norm - 0.5 * z.squaredNorm();
    }
    return proposal;
}

namespace {

// Log weights of the frozen-proposal estimator at theta, vectorized over
// samples: w_s = log f_theta(y | u_s) + log prior_theta(u_s) - log q(u_s).
Eigen::VectorXd log_weights(const MglmmParams& theta, const MglmmDataset& data,
                            const IsProposal& proposal) {
    const int N = data.N();
    const int S = static_cast<int>(proposal.draws.cols());
    const int cells = N * N;

    Eigen::VectorXd base1(cells), base2(cells), y1(cells), y2(cells);
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < N; ++j) {
            const int c = i * N + j;
            const Eigen::VectorXd xij = data.design.x_at(i, j);
            base1[c] = xij.dot(theta.beta1);
            base2[c] = xij.dot(theta.beta2);
            y1[c] = data.y1(i, j);
            y2[c] = data.y2(i, j);
        }
    }

    Eigen::VectorXd w(S);
    for (int s = 0; s < S; ++s) {
        const auto u = proposal.draws.col(s);
        double total = mglmm_prior_loglik(theta.theta_d, u) - proposal.log_q[s];
        for (int i = 0; i < N; ++i) {
            const double ui = u[i];
            for (int j = 0; j < N; ++j) {
                const int c = i * N + j;
                const double shared = ui + u[N + j];
                const double r = y1[c] - base1[c] - shared;
                const double eta2 = base2[c] + shared;
                total += -0.5 * (r * r + kLog2Pi) + y2[c] * eta2 - softplus(eta2);
            }
        }
        w[s] = total;
    }
    return w;
}

}  // namespace

IsEstimate is_loglik(const MglmmParams& theta, const MglmmDataset& data,
                     const IsProposal& proposal) {
    const Eigen::VectorXd w = log_weights(theta, data, proposal);
    const double w_max = w.maxCoeff();
    const Eigen::ArrayXd scaled = (w.array() - w_max).exp();
    const double mean = scaled.mean();
    const double sd = std::sqrt((scaled - mean).square().sum() /
                                std::max<Eigen::Index>(1, scaled.size() - 1));
    IsEstimate out;
    out.estimate = w_max + std::log(mean);
    out.mc_stderr = sd / (mean * std::sqrt(static_cast<double>(scaled.size())));
    return out;
}

Eigen::VectorXd is_loglik_grad(const MglmmParams& theta, const MglmmDataset& data,
                               const IsProposal& proposal) {
    const int N = data.N();
    const int S = static_cast<int>(proposal.draws.cols());
    const Eigen::VectorXd w = log_weights(theta, data, proposal);
    const double w_max = w.maxCoeff();
    Eigen::VectorXd omega = (w.array() - w_max).exp();
    omega /= omega.sum();

    const int p = theta.p();
    const int cells = N * N;
    Eigen::VectorXd base2(cells);
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < N; ++j) {
            base2[i * N + j] = data.design.x.row(i * N + j).dot(theta.beta2);
        }
    }

    // Self-normalized average of the joint score. The beta blocks are
    // X'(y - fitted), so it suffices to accumulate the weighted per-cell
    // averages of the shared effect and of the success probability.
    Eigen::VectorXd avg_shared = Eigen::VectorXd::Zero(cells);
    Eigen::VectorXd avg_prob = Eigen::VectorXd::Zero(cells);
    double g_var = 0.0;
    for (int s = 0; s < S; ++s) {
        const auto u = proposal.draws.col(s);
        const double ws = omega[s];
        for (int i = 0; i < N; ++i) {
            const double ui = u[i];
            for (int j = 0; j < N; ++j) {
                const int c = i * N + j;
                const double shared = ui + u[N + j];
                avg_shared[c] += ws * shared;
                avg_prob[c] += ws * logistic(base2[c] + shared);
            }
        }
        g_var += ws * (-N / theta.theta_d +
                       u.squaredNorm() / (2.0 * theta.theta_d * theta.theta_d));
    }

    Eigen::VectorXd r1(cells), r2(cells);
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < N; ++j) {
            const int c = i * N + j;
            r1[c] = data.y1(i, j) - data.design.x.row(c).dot(theta.beta1) - avg_shared[c];
            r2[c] = data.y2(i, j) - avg_prob[c];
        }
    }
    Eigen::VectorXd grad(2 * p + 1);
    grad.head(p) = data.design.x.transpose() * r1;
    grad.segment(p, p) = data.design.x.transpose() * r2;
    grad[2 * p] = g_var;
    return grad;
}

IsEstimate full_loglik_mglmm(const MglmmParams& theta, const MglmmDataset& data,
                             const ApproxConfig& cfg) {
    const IsProposal proposal = build_is_proposal(theta, data, cfg);
    return is_loglik(theta, data, proposal);
}

Eigen::VectorXd mglmm_score(const MglmmParams& theta, const MglmmDataset& data,
                            const ApproxConfig& cfg) {
    const IsProposal proposal = build_is_proposal(theta, data, cfg);
    return is_loglik_grad(theta, data, proposal);
}

}  // namespace subsetmle
