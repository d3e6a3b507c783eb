#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "subsetmle/estimation.hpp"
#include "subsetmle/params.hpp"
#include "subsetmle/sphere.hpp"

namespace subsetmle {

/// Shared knobs of the verification checks.
struct VerifyOptions {
    int workers = 0;        // 0 = hardware concurrency
    int T = 4;              // LMM time dimension
    int p = 2;              // MGLMM predictor dimension
    int is_samples = 1024;  // IS budget for full-likelihood checks
    int quad_points = 64;
    int kl_reference_N = 32;           // MGLMM design size for closed-form KL sups
    std::uint64_t design_seed = 1863;  // MGLMM designs per size derive from this
};

/// Weighted least-squares line fit with a 3-sigma slope interval. The slope
/// standard error is inflated by the root reduced chi-square when the line
/// underfits the points.
struct RateFit {
    std::vector<double> xs, ys, y_se;
    double slope = 0.0;
    double intercept = 0.0;
    double slope_se = 0.0;
    double slope_lo = 0.0;
    double slope_hi = 0.0;
    std::string x_axis, y_axis;
};

RateFit fit_line(const std::vector<double>& xs, const std::vector<double>& ys,
                 const std::vector<double>& y_se, std::string x_axis = "x",
                 std::string y_axis = "y");

/// Monotone-trend verdict allowing `allowed` inversions, each within
/// `sigmas` combined standard errors.
struct TrendCheck {
    bool passed = false;
    int inversions = 0;
    std::string detail;
};

TrendCheck check_trend(const std::vector<double>& values, const std::vector<double>& ses,
                       bool decreasing, double sigmas = 3.0, int allowed = 1);

// ---------------------------------------------------------------------------
// Checks
// ---------------------------------------------------------------------------

/**
 * Empirical form of the conditional bound P(L_n >= c | W) <= c^{-1} L_m:
 * integrating both sides, the frequency of {L_n >= c} may not exceed the
 * Monte Carlo mean of min(1, c^{-1} L_m) beyond joint noise. For the MGLMM
 * the full-data ratio is importance sampled; replications whose estimator
 * noise could flip the indicator widen the tolerance.
 */
struct SubsetInequalityReport {
    double c = 1.0;
    int reps = 0;
    double lhs = 0.0, lhs_se = 0.0;
    double rhs_w1 = 0.0, rhs_w1_se = 0.0;
    double rhs_w2 = 0.0, rhs_w2_se = 0.0;
    double ambiguous_fraction = 0.0;
    bool passed = false;
};

SubsetInequalityReport subset_inequality_check(Model model, const Eigen::VectorXd& theta,
                                               const Eigen::VectorXd& theta0, double c, int N,
                                               int reps, std::uint64_t seed,
                                               const VerifyOptions& opts);

/**
 * Identification-rate experiment: for each size, the Monte Carlo mean of
 * sup over grid-in-subset of Lambda_m(theta; W^{(i)}), polished by one
 * coordinate pass from the best grid point. The fitted line of that mean
 * against the subcollection size m must have a strictly negative 3-sigma
 * slope interval for the subset to be identified at an exponential rate.
 */
struct IdentificationReport {
    std::vector<int> sizes;       // N values
    std::vector<double> ms;       // subcollection sizes m(N)
    std::vector<double> sup_mean, sup_se;
    RateFit fit;                  // E[sup Lambda] vs m
    std::size_t grid_points_used = 0;
    bool passed = false;
};

IdentificationReport identification_rate(Model model, Subcollection which,
                                         const SubsetSpec& spec, const SphereGrid& grid,
                                         const std::vector<int>& sizes, int reps,
                                         std::uint64_t seed, const VerifyOptions& opts);

/**
 * Closed-form KL negativity: sup over grid-in-subset of N^{-1} E[Lambda_N].
 * Passes when the sup stays below -tol_margin.
 */
struct KlSupReport {
    double sup = 0.0;
    Eigen::VectorXd argmax;
    double tol_margin = 1e-6;
    std::size_t grid_points_used = 0;
    bool passed = false;
};

KlSupReport kl_sup_check(Model model, const SubsetSpec& spec, const SphereGrid& grid,
                         const VerifyOptions& opts, double tol_margin = 1e-6);

/**
 * Uniform-LLN diagnostic: Monte Carlo mean of
 * sup over grid-in-subset of N^{-1} |Lambda_N - E Lambda_N| per size, which
 * must trend downward (one inversion within noise allowed). The fitted
 * log-log slope is reported for reference; the CLT heuristic puts it near
 * -1/2 but it is not part of the pass decision.
 */
struct UllnReport {
    std::vector<int> sizes;
    std::vector<double> sup_mean, sup_se;
    RateFit fit;  // log sup-deviation vs log N
    TrendCheck trend;
    bool passed = false;
};

UllnReport ulln_check(Model model, Subcollection which, const SubsetSpec& spec,
                      const SphereGrid& grid, const std::vector<int>& sizes, int reps,
                      std::uint64_t seed, const VerifyOptions& opts);

/**
 * Growth order of the score over a fixed ball sample: per size the Monte
 * Carlo median of sup over 200 ball points of ||grad Lambda_n||, fitted
 * log-log against n. The fitted exponent b_hat is the empirical Lipschitz
 * order.
 */
struct LipschitzReport {
    std::vector<int> sizes;      // N values
    std::vector<double> ns;      // full sample sizes n(N)
    std::vector<double> sup_median, sup_se;
    std::vector<double> center_norm_median;  // ||grad Lambda(theta0)|| medians
    RateFit fit;                 // log median sup vs log n
    double b_hat = 0.0;
    double b_bound = 0.0;        // model-specific acceptance bound
    bool center_norm_growing = false;
    bool passed = false;
};

LipschitzReport lipschitz_order(Model model, const Eigen::VectorXd& theta0, double epsilon,
                                const std::vector<int>& sizes, int reps, int ball_points,
                                std::uint64_t seed, const VerifyOptions& opts);

/**
 * Rate-condition bookkeeping: with delta_n = n^{-b}, b slightly above the
 * fitted Lipschitz order, K_n delta_n vanishes by construction; covering
 * growth M_n = O(n^{b (d-1)}) loses to the exponential identification rate
 * exactly when the identification slope is negative.
 */
struct RateConditionReport {
    double b_hat = 0.0;
    double b_used = 0.0;
    double ident_slope = 0.0, ident_slope_hi = 0.0;
    double grid_exponent = 0.0;
    bool condition1 = false;  // K_n delta_n -> 0
    bool condition2 = false;  // M_n a_n -> 0
    std::string explanation;
    std::vector<double> ns, log_mn_an;  // numeric illustration at the tested sizes
    bool passed = false;
};

RateConditionReport rate_condition_check(Model model, const LipschitzReport& lipschitz,
                                         const IdentificationReport& ident,
                                         double grid_exponent, const VerifyOptions& opts);

/// Per-size summary of a consistency experiment.
struct ConsistencySize {
    int size = 0;
    double median_error = 0.0;
    double median_error_se = 0.0;  // bootstrap
    Eigen::VectorXd rmse;          // per coordinate
    std::vector<double> coverage;  // per epsilon in epsilon_list
    int failures = 0;
};

struct ConsistencyReport {
    std::vector<ConsistencySize> per_size;
    std::vector<double> epsilon_list;
    TrendCheck median_trend;
    std::vector<TrendCheck> coverage_trends;  // one per epsilon
    bool passed = false;
};

ConsistencyReport consistency_experiment(Model model, const Eigen::VectorXd& theta0,
                                         const std::vector<int>& sizes, int reps,
                                         const std::vector<double>& epsilon_list,
                                         const FitConfig& fit_cfg, std::uint64_t seed,
                                         const VerifyOptions& opts);

/// Monte Carlo mean of L_m(theta; W) over replications, which must sit
/// within 3 standard errors of 1 for every probed theta and subcollection.
struct UnitMeanEntry {
    Eigen::VectorXd theta;
    std::string subcollection;
    double mean = 0.0, se = 0.0;
    bool passed = false;
};

struct UnitMeanReport {
    std::vector<UnitMeanEntry> entries;
    bool passed = false;
};

UnitMeanReport unit_mean_check(Model model, const Eigen::VectorXd& theta0, double radius,
                               int n_thetas, int N, int reps, std::uint64_t seed,
                               const VerifyOptions& opts);

/// Toy-model convergence rate: fitted log RMSE vs log n slope and the exact
/// closed-form RMSE target at the reference size.
struct ToyRateReport {
    std::vector<int> sizes;
    std::vector<double> rmse, rmse_se;
    RateFit fit;  // log rmse vs log n
    int reference_size = 100;
    double reference_rmse = 0.0, reference_rmse_se = 0.0, reference_exact = 0.0;
    double slope_lo_bound = -0.32, slope_hi_bound = -0.18;
    bool passed = false;
};

ToyRateReport toy_rate_check(double theta0, const std::vector<int>& sizes, int reps,
                             std::uint64_t seed, const VerifyOptions& opts);

/// Structured-vs-dense equivalence of the LMM log likelihood.
struct DenseOracleReport {
    double max_rel_err = 0.0;
    int cases = 0;
    bool passed = false;
};

DenseOracleReport dense_oracle_check(const Eigen::VectorXd& theta0, std::uint64_t seed,
                                     const VerifyOptions& opts);

/// Analytic-score vs finite-difference agreement for both models.
struct GradientCheckReport {
    double lmm_worst = 0.0;
    double mglmm_worst = 0.0;
    bool passed = false;
};

GradientCheckReport gradient_check_report(const Eigen::VectorXd& lmm_theta0,
                                          const Eigen::VectorXd& mglmm_theta0, int lmm_points,
                                          int mglmm_points, std::uint64_t seed,
                                          const VerifyOptions& opts);

/// Mesh growth of sphere_grid across delta halvings: fitted exponent of M
/// against epsilon/delta must stay at or below (d-1) + 0.5.
struct SphereGrowthReport {
    std::vector<double> deltas;
    std::vector<std::size_t> counts;
    double exponent = 0.0;
    double exponent_bound = 0.0;
    bool passed = false;
};

SphereGrowthReport sphere_growth_check(Model model, const Eigen::VectorXd& theta0,
                                       double epsilon, const std::vector<double>& deltas);

}  // namespace subsetmle
