#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <vector>

#include "subsetmle/lmm.hpp"
#include "subsetmle/mglmm.hpp"
#include "subsetmle/params.hpp"

namespace subsetmle {

enum class Direction { ToUnconstrained, ToNatural };

/**
 * Bijection between the natural parameter space and an unconstrained one:
 * log for positive components (variances), atanh for the AR correlation,
 * identity elsewhere. All optimization runs on the unconstrained side so
 * iterates can never leave the interior.
 */
Eigen::VectorXd reparameterize(Model model, const Eigen::Ref<const Eigen::VectorXd>& v,
                               Direction direction);

/// Diagonal of d(natural)/d(unconstrained) at an unconstrained point.
Eigen::VectorXd reparam_jacobian(Model model, const Eigen::Ref<const Eigen::VectorXd>& eta);

struct FitConfig {
    int starts = 8;
    double grad_tol = 1e-6;
    int max_iter = 200;
    double start_dispersion = 0.5;
    std::uint64_t seed = 0;

    // Monte Carlo likelihood settings (MGLMM only).
    ApproxConfig approx;
    int mcml_rounds = 4;
    double mcml_theta_tol = 1e-5;
    int mcml_warmup_samples = 1024;  // sample count of the non-final rounds
};

struct StartRecord {
    int index = 0;
    Eigen::VectorXd theta_start;  // natural coordinates
    double loglik = 0.0;
    double grad_norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

/**
 * Result of a multistart fit. `grad_norm` is measured in the unconstrained
 * coordinates of the objective the optimizer maximized (for the MGLMM that
 * is the final-round frozen Monte Carlo objective). Among converged starts
 * the best log likelihood wins; ties break on lower grad_norm, then on
 * start index.
 */
struct FitResult {
    Model model = Model::Toy;
    Eigen::VectorXd theta_hat;
    double loglik = 0.0;
    double grad_norm = 0.0;
    bool converged = false;
    std::vector<StartRecord> starts;
};

FitResult fit_mle(const LmmDataset& data, const FitConfig& cfg);
FitResult fit_mle(const MglmmDataset& data, const FitConfig& cfg);
FitResult fit_mle_toy(const Eigen::MatrixXd& data, const FitConfig& cfg);

/// Max relative disagreement between the analytic score and central finite
/// differences of the log likelihood, in unconstrained coordinates.
double check_gradient(const LmmParams& theta, const LmmDataset& data);
double check_gradient(const MglmmParams& theta, const MglmmDataset& data,
                      const ApproxConfig& cfg);
double check_gradient_toy(double theta_mean, const Eigen::MatrixXd& data);

// Generic smooth maximization used by the fitters; exposed for tests.
struct Objective {
    std::function<double(const Eigen::VectorXd&)> value;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gradient;
};

struct BfgsResult {
    Eigen::VectorXd x;
    double value = 0.0;
    double grad_norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// BFGS ascent with Armijo backtracking; stops when ||grad|| <= grad_tol.
BfgsResult maximize_bfgs(const Objective& objective, Eigen::VectorXd x0, double grad_tol,
                         int max_iter);

}  // namespace subsetmle
