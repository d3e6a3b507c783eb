#include "subsetmle/estimation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "subsetmle/errors.hpp"
#include "subsetmle/rng.hpp"

namespace subsetmle {

Eigen::VectorXd reparameterize(Model model, const Eigen::Ref<const Eigen::VectorXd>& v,
                               Direction direction) {
    Eigen::VectorXd out = v;
    switch (model) {
        case Model::Toy:
            return out;
        case Model::Lmm: {
            if (v.size() != LmmParams::kDim) {
                throw ContractError("reparameterize: LMM vector must have length 7");
            }
            if (direction == Direction::ToUnconstrained) {
                LmmParams::from_vector(v).validate();
                for (int k = 2; k < 6; ++k) out[k] = std::log(v[k]);
                out[6] = std::atanh(v[6]);
            } else {
                for (int k = 2; k < 6; ++k) out[k] = std::exp(v[k]);
                out[6] = std::tanh(v[6]);
            }
            return out;
        }
        case Model::Mglmm: {
            const auto last = v.size() - 1;
            if (direction == Direction::ToUnconstrained) {
                MglmmParams::from_vector(v).validate();
                out[last] = std::log(v[last]);
            } else {
                out[last] = std::exp(v[last]);
            }
            return out;
        }
    }
    return out;
}

Eigen::VectorXd reparam_jacobian(Model model, const Eigen::Ref<const Eigen::VectorXd>& eta) {
    Eigen::VectorXd jac = Eigen::VectorXd::Ones(eta.size());
    switch (model) {
        case Model::Toy:
            break;
        case Model::Lmm: {
            for (int k = 2; k < 6; ++k) jac[k] = std::exp(eta[k]);
            const double t = std::tanh(eta[6]);
            jac[6] = 1.0 - t * t;
            break;
        }
        case Model::Mglmm:
            jac[eta.size() - 1] = std::exp(eta[eta.size() - 1]);
            break;
    }
    return jac;
}

BfgsResult maximize_bfgs(const Objective& objective, Eigen::VectorXd x0, double grad_tol,
                         int max_iter) {
    const auto dim = x0.size();
    Eigen::MatrixXd inv_hess = Eigen::MatrixXd::Identity(dim, dim);
    Eigen::VectorXd x = std::move(x0);
    double value = objective.value(x);
    Eigen::VectorXd grad = objective.gradient(x);

    BfgsResult result;
    int iter = 0;
    for (; iter < max_iter; ++iter) {
        if (grad.norm() <= grad_tol) break;
        Eigen::VectorXd direction = inv_hess * grad;
        double slope = grad.dot(direction);
        if (!(slope > 0.0) || !direction.allFinite()) {
            inv_hess.setIdentity();
            direction = grad;
            slope = grad.squaredNorm();
        }

        // Armijo backtracking on the ascent direction.
        double step = 1.0;
        double new_value = -std::numeric_limits<double>::infinity();
        Eigen::VectorXd x_new;
        bool accepted = false;
        for (int halving = 0; halving < 50; ++halving) {
            x_new = x + step * direction;
            new_value = objective.value(x_new);
            if (std::isfinite(new_value) && new_value >= value + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;

        const Eigen::VectorXd grad_new = objective.gradient(x_new);
        const Eigen::VectorXd s = x_new - x;
        const Eigen::VectorXd y = grad - grad_new;  // change of the descent gradient
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            const Eigen::VectorXd hy = inv_hess * y;
            const double yhy = y.dot(hy);
            inv_hess += ((sy + yhy) / (sy * sy)) * (s * s.transpose()) -
                        (hy * s.transpose() + s * hy.transpose()) / sy;
        }
        x = x_new;
        value = new_value;
        grad = grad_new;
    }
    result.x = x;
    result.value = value;
    result.grad_norm = grad.norm();
    result.iterations = iter;
    result.converged = result.grad_norm <= grad_tol;
    return result;
}

namespace {

struct Problem {
    Model model;
    Eigen::VectorXd init_natural;
    Objective objective;  // in unconstrained coordinates
};

Objective wrap_natural(Model model, std::function<double(const Eigen::VectorXd&)> loglik,
                       std::function<Eigen::VectorXd(const Eigen::VectorXd&)> score) {
    Objective obj;
    // A long line-search step can push tanh/exp to a saturated boundary
    // value; such points are simply rejected by reporting -inf.
    obj.value = [model, loglik = std::move(loglik)](const Eigen::VectorXd& eta) {
        try {
            return loglik(reparameterize(model, eta, Direction::ToNatural));
        } catch (const DomainError&) {
            return -std::numeric_limits<double>::infinity();
        } catch (const NumericalError&) {
            return -std::numeric_limits<double>::infinity();
        }
    };
    obj.gradient = [model, score = std::move(score)](const Eigen::VectorXd& eta) {
        const Eigen::VectorXd natural = reparameterize(model, eta, Direction::ToNatural);
        return (score(natural).array() * reparam_jacobian(model, eta).array()).matrix().eval();
    };
    return obj;
}

FitResult run_multistart(const Problem& problem, const FitConfig& cfg) {
    if (cfg.starts < 1) throw ConfigError("FitConfig: starts must be >= 1");
    const Eigen::VectorXd eta0 =
        reparameterize(problem.model, problem.init_natural, Direction::ToUnconstrained);

    FitResult result;
    result.model = problem.model;
    result.starts.reserve(cfg.starts);

    SplitRng root(cfg.seed);
    int best = -1;
    for (int k = 0; k < cfg.starts; ++k) {
        Eigen::VectorXd eta = eta0;
        if (k > 0) {
            SplitRng rng = root.split(k);
            for (Eigen::Index c = 0; c < eta.size(); ++c) {
                eta[c] += cfg.start_dispersion * rng.normal();
            }
        }
        const BfgsResult run = maximize_bfgs(problem.objective, eta, cfg.grad_tol, cfg.max_iter);
        StartRecord record;
        record.index = k;
        record.theta_start = reparameterize(problem.model, eta, Direction::ToNatural);
        record.loglik = run.value;
        record.grad_norm = run.grad_norm;
        record.iterations = run.iterations;
        record.converged = run.converged;
        result.starts.push_back(record);

        if (!run.converged) continue;
        const bool better =
            best < 0 || run.value > result.loglik ||
            (run.value == result.loglik && run.grad_norm < result.grad_norm);
        if (better) {
            best = k;
            result.theta_hat = reparameterize(problem.model, run.x, Direction::ToNatural);
            result.loglik = run.value;
            result.grad_norm = run.grad_norm;
            result.converged = true;
        }
    }
    if (best < 0) {
        double best_grad = std::numeric_limits<double>::infinity();
        for (const auto& record : result.starts) best_grad = std::min(best_grad, record.grad_norm);
        throw FitError("fit_mle: no start converged (best grad norm " + std::to_string(best_grad) +
                           " > tol " + std::to_string(cfg.grad_tol) + ")",
                       best_grad);
    }
    return result;
}

Eigen::VectorXd lmm_moment_init(const LmmDataset& data) {
    const int T = data.T;
    double treated = 0.0, untreated = 0.0;
    std::int64_t n_treated = 0, n_untreated = 0;
    for (int i = 0; i < data.N; ++i) {
        for (int j = 0; j < data.N; ++j) {
            for (int t = 0; t < T; ++t) {
                if (t < T / 2) {
                    treated += data.at(i, j, t);
                    ++n_treated;
                } else {
                    untreated += data.at(i, j, t);
                    ++n_untreated;
                }
            }
        }
    }
    treated /= static_cast<double>(n_treated);
    untreated /= static_cast<double>(n_untreated);

    double ss = 0.0;
    for (int i = 0; i < data.N; ++i) {
        for (int j = 0; j < data.N; ++j) {
            for (int t = 0; t < T; ++t) {
                const double mean = t < T / 2 ? treated : untreated;
                const double r = data.at(i, j, t) - mean;
                ss += r * r;
            }
        }
    }
    const double pooled = std::max(1e-3, ss / static_cast<double>(data.n()));

    Eigen::VectorXd init(LmmParams::kDim);
    init << untreated, treated - untreated, pooled / 4.0, pooled / 4.0, pooled / 4.0,
        pooled / 4.0, 0.0;
    return init;
}

Eigen::VectorXd mglmm_moment_init(const MglmmDataset& data) {
    const int p = data.design.p;
    const int cells = data.N() * data.N();
    Eigen::VectorXd y1_flat(cells), y2_flat(cells);
    for (int i = 0; i < data.N(); ++i) {
        for (int j = 0; j < data.N(); ++j) {
            y1_flat[i * data.N() + j] = data.y1(i, j);
            y2_flat[i * data.N() + j] = 4.0 * (data.y2(i, j) - 0.5);
        }
    }
    const Eigen::MatrixXd& x = data.design.x;
    Eigen::MatrixXd gram = x.transpose() * x;
    gram.diagonal().array() += 1e-8 * gram.trace();
    const Eigen::VectorXd beta1 = gram.ldlt().solve(x.transpose() * y1_flat);
    // Linear-probability moment for the binary block (logistic slope 1/4 at 0).
    const Eigen::VectorXd beta2 = gram.ldlt().solve(x.transpose() * y2_flat);

    const double resid_var =
        (y1_flat - x * beta1).squaredNorm() / std::max(1, cells - p);
    const double theta_d = std::max(0.05, (resid_var - 1.0) / 2.0);

    Eigen::VectorXd init(2 * p + 1);
    init.head(p) = beta1;
    init.segment(p, p) = beta2;
    init[2 * p] = theta_d;
    return init;
}

}  // namespace

FitResult fit_mle(const LmmDataset& data, const FitConfig& cfg) {
    Problem problem;
    problem.model = Model::Lmm;
    problem.init_natural = lmm_moment_init(data);
    problem.objective = wrap_natural(
        Model::Lmm,
        [&data](const Eigen::VectorXd& v) { return lmm_loglik(LmmParams::from_vector(v), data); },
        [&data](const Eigen::VectorXd& v) { return lmm_score(LmmParams::from_vector(v), data); });
    return run_multistart(problem, cfg);
}

FitResult fit_mle(const MglmmDataset& data, const FitConfig& cfg) {
    if (cfg.starts < 1) throw ConfigError("FitConfig: starts must be >= 1");
    const Eigen::VectorXd init = mglmm_moment_init(data);
    const Eigen::VectorXd eta0 = reparameterize(Model::Mglmm, init, Direction::ToUnconstrained);

    FitResult result;
    result.model = Model::Mglmm;
    SplitRng root(cfg.seed);
    int best = -1;

    for (int k = 0; k < cfg.starts; ++k) {
        Eigen::VectorXd eta = eta0;
        if (k > 0) {
            SplitRng rng = root.split(k);
            for (Eigen::Index c = 0; c < eta.size(); ++c) {
                eta[c] += cfg.start_dispersion * rng.normal();
            }
        }

        // Monte Carlo ML: alternate between rebuilding the proposal at the
        // current iterate and maximizing the frozen smooth objective. Early
        // rounds run on fewer samples; the final round uses the full budget.
        StartRecord record;
        record.index = k;
        record.theta_start = reparameterize(Model::Mglmm, eta, Direction::ToNatural);
        BfgsResult run;
        bool failed = false;
        for (int round = 0; round < cfg.mcml_rounds; ++round) {
            const bool last = round == cfg.mcml_rounds - 1;
            ApproxConfig approx = cfg.approx;
            if (!last) approx.samples = std::min(cfg.mcml_warmup_samples, cfg.approx.samples);
            const MglmmParams at = MglmmParams::from_vector(
                reparameterize(Model::Mglmm, eta, Direction::ToNatural));
            IsProposal proposal;
            try {
                proposal = build_is_proposal(at, data, approx);
            } catch (const NumericalError&) {
                failed = true;
                break;
            }
            const Objective objective = wrap_natural(
                Model::Mglmm,
                [&data, &proposal](const Eigen::VectorXd& v) {
                    return is_loglik(MglmmParams::from_vector(v), data, proposal).estimate;
                },
                [&data, &proposal](const Eigen::VectorXd& v) {
                    return is_loglik_grad(MglmmParams::from_vector(v), data, proposal);
                });
            run = maximize_bfgs(objective, eta, cfg.grad_tol, cfg.max_iter);
            const double moved = (run.x - eta).norm();
            eta = run.x;
            if (last) break;
            if (round > 0 && moved <= cfg.mcml_theta_tol) {
                // Already self-consistent; still finish with a full-budget round.
                ApproxConfig full = cfg.approx;
                const MglmmParams center = MglmmParams::from_vector(
                    reparameterize(Model::Mglmm, eta, Direction::ToNatural));
                const IsProposal final_proposal = build_is_proposal(center, data, full);
                const Objective final_objective = wrap_natural(
                    Model::Mglmm,
                    [&data, &final_proposal](const Eigen::VectorXd& v) {
                        return is_loglik(MglmmParams::from_vector(v), data, final_proposal)
                            .estimate;
                    },
                    [&data, &final_proposal](const Eigen::VectorXd& v) {
                        return is_loglik_grad(MglmmParams::from_vector(v), data, final_proposal);
                    });
                run = maximize_bfgs(final_objective, eta, cfg.grad_tol, cfg.max_iter);
                eta = run.x;
                break;
            }
        }
        if (failed) {
            record.loglik = -std::numeric_limits<double>::infinity();
            record.grad_norm = std::numeric_limits<double>::infinity();
            record.converged = false;
            result.starts.push_back(record);
            continue;
        }
        record.loglik = run.value;
        record.grad_norm = run.grad_norm;
        record.iterations = run.iterations;
        record.converged = run.converged;
        result.starts.push_back(record);

        if (!run.converged) continue;
        const bool better =
            best < 0 || run.value > result.loglik ||
            (run.value == result.loglik && run.grad_norm < result.grad_norm);
        if (better) {
            best = k;
            result.theta_hat = reparameterize(Model::Mglmm, run.x, Direction::ToNatural);
            result.loglik = run.value;
            result.grad_norm = run.grad_norm;
            result.converged = true;
        }
    }
    if (best < 0) {
        double best_grad = std::numeric_limits<double>::infinity();
        for (const auto& record : result.starts) best_grad = std::min(best_grad, record.grad_norm);
        throw FitError("fit_mle(mglmm): no start converged (best grad norm " +
                           std::to_string(best_grad) + ")",
                       best_grad);
    }
    return result;
}

FitResult fit_mle_toy(const Eigen::MatrixXd& data, const FitConfig& cfg) {
    Problem problem;
    problem.model = Model::Toy;
    problem.init_natural = Eigen::VectorXd::Constant(1, data.mean());
    problem.objective = wrap_natural(
        Model::Toy,
        [&data](const Eigen::VectorXd& v) { return toy_loglik(v[0], data); },
        [&data](const Eigen::VectorXd& v) {
            return Eigen::VectorXd::Constant(1, toy_score(v[0], data)).eval();
        });
    return run_multistart(problem, cfg);
}

namespace {

double max_rel_error(const Objective& objective, const Eigen::VectorXd& eta) {
    const Eigen::VectorXd analytic = objective.gradient(eta);
    double worst = 0.0;
    for (Eigen::Index k = 0; k < eta.size(); ++k) {
        const double h = 1e-6 * (1.0 + std::abs(eta[k]));
        Eigen::VectorXd hi = eta, lo = eta;
        hi[k] += h;
        lo[k] -= h;
        const double fd = (objective.value(hi) - objective.value(lo)) / (2.0 * h);
        const double rel = std::abs(analytic[k] - fd) / std::max(1.0, std::abs(fd));
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace

double check_gradient(const LmmParams& theta, const LmmDataset& data) {
    const Objective objective = wrap_natural(
        Model::Lmm,
        [&data](const Eigen::VectorXd& v) { return lmm_loglik(LmmParams::from_vector(v), data); },
        [&data](const Eigen::VectorXd& v) { return lmm_score(LmmParams::from_vector(v), data); });
    return max_rel_error(objective,
                         reparameterize(Model::Lmm, theta.to_vector(), Direction::ToUnconstrained));
}

double check_gradient(const MglmmParams& theta, const MglmmDataset& data,
                      const ApproxConfig& cfg) {
    // Both sides differentiate the same frozen-proposal estimator, so the
    // common random numbers cancel and only truncation error remains.
    const IsProposal proposal = build_is_proposal(theta, data, cfg);
    const Objective objective = wrap_natural(
        Model::Mglmm,
        [&data, &proposal](const Eigen::VectorXd& v) {
            return is_loglik(MglmmParams::from_vector(v), data, proposal).estimate;
        },
        [&data, &proposal](const Eigen::VectorXd& v) {
            return is_loglik_grad(MglmmParams::from_vector(v), data, proposal);
        });
    return max_rel_error(
        objective, reparameterize(Model::Mglmm, theta.to_vector(), Direction::ToUnconstrained));
}

double check_gradient_toy(double theta_mean, const Eigen::MatrixXd& data) {
    const Objective objective = wrap_natural(
        Model::Toy,
        [&data](const Eigen::VectorXd& v) { return toy_loglik(v[0], data); },
        [&data](const Eigen::VectorXd& v) {
            return Eigen::VectorXd::Constant(1, toy_score(v[0], data)).eval();
        });
    return max_rel_error(objective, Eigen::VectorXd::Constant(1, theta_mean));
}

}  // namespace subsetmle
