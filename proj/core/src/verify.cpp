#include "subsetmle/verify.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "subsetmle/errors.hpp"
#include "subsetmle/lmm.hpp"
#include "subsetmle/mglmm.hpp"
#include "subsetmle/parallel.hpp"
#include "subsetmle/rng.hpp"

namespace subsetmle {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b) {
    return SplitRng(root).split(a).split(b).key();
}

double mean_of(const std::vector<double>& xs) {
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double se_of_mean(const std::vector<double>& xs) {
    const double mean = mean_of(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const double n = static_cast<double>(xs.size());
    return std::sqrt(ss / (n - 1.0) / n);
}

double median_of(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

double bootstrap_median_se(const std::vector<double>& xs, std::uint64_t seed,
                           int resamples = 200) {
    SplitRng rng(seed);
    std::vector<double> medians(resamples);
    std::vector<double> work(xs.size());
    for (int b = 0; b < resamples; ++b) {
        for (std::size_t k = 0; k < xs.size(); ++k) {
            work[k] = xs[static_cast<std::size_t>(rng.uniform() * xs.size())];
        }
        medians[b] = median_of(work);
    }
    const double mean = mean_of(medians);
    double ss = 0.0;
    for (double m : medians) ss += (m - mean) * (m - mean);
    return std::sqrt(ss / (resamples - 1.0));
}

Eigen::VectorXd project_to_sphere(const Eigen::VectorXd& center, double radius,
                                  const Eigen::VectorXd& point) {
    const Eigen::VectorXd offset = point - center;
    const double norm = offset.norm();
    if (norm == 0.0) return center;
    return center + (radius / norm) * offset;
}

MglmmDesign design_for_size(int N, const VerifyOptions& opts) {
    return random_design(N, opts.p, SplitRng(opts.design_seed).split(N).key());
}

// --- subcollection density precomputations -------------------------------

struct LmmSubDensity {
    Eigen::VectorXd mean;
    Eigen::MatrixXd chol;
    double logdet = 0.0;
    double log_norm = 0.0;  // -(k/2) log 2pi - logdet/2
};

LmmSubDensity make_lmm_subdensity(const LmmParams& theta, Subcollection which, int T) {
    LmmSubDensity d;
    if (which == Subcollection::W1) {
        d.mean = w1_mean(theta);
        d.chol = std::sqrt(w1_variance(theta)) * Eigen::MatrixXd::Identity(2, 2);
        d.logdet = 2.0 * std::log(w1_variance(theta));
    } else {
        d.mean = w2_mean(theta, T);
        d.chol = cholesky_lower(w2_covariance(theta));
        d.logdet = logdet_from_cholesky(d.chol);
    }
    d.log_norm = -0.5 * (static_cast<double>(d.mean.size()) * kLog2Pi + d.logdet);
    return d;
}

double lmm_sub_loglik(const LmmSubDensity& d, const Eigen::MatrixXd& blocks) {
    double total = 0.0;
    for (Eigen::Index b = 0; b < blocks.rows(); ++b) {
        const Eigen::VectorXd z = d.chol.triangularView<Eigen::Lower>().solve(
            blocks.row(b).transpose() - d.mean);
        total += d.log_norm - 0.5 * z.squaredNorm();
    }
    return total;
}

struct MglmmSubDensity {
    Subcollection which = Subcollection::W1;
    Eigen::VectorXd per_i;  // W1: mean_i; W2: p_i
    double var = 1.0;       // W1 only
};

MglmmSubDensity make_mglmm_subdensity(const MglmmParams& theta, Subcollection which,
                                      const MglmmDesign& design, int q) {
    MglmmSubDensity d;
    d.which = which;
    d.per_i.resize(design.N);
    if (which == Subcollection::W1) {
        d.var = 1.0 + 2.0 * theta.theta_d;
        for (int i = 0; i < design.N; ++i) d.per_i[i] = design.x_at(i, i).dot(theta.beta1);
    } else {
        for (int i = 0; i < design.N; ++i) {
            const double p = marginal_success_prob(design.x_at(i, i), theta.beta2,
                                                   theta.theta_d, q);
            if (!(p > 0.0 && p < 1.0)) {
                throw NumericalError("mglmm subcollection: degenerate success probability");
            }
            d.per_i[i] = p;
        }
    }
    return d;
}

double mglmm_sub_loglik(const MglmmSubDensity& d, const Eigen::VectorXd& diag_y) {
    double total = 0.0;
    if (d.which == Subcollection::W1) {
        const double log_norm = -0.5 * (std::log(d.var) + kLog2Pi);
        for (int i = 0; i < diag_y.size(); ++i) {
            const double r = diag_y[i] - d.per_i[i];
            total += log_norm - 0.5 * r * r / d.var;
        }
    } else {
        for (int i = 0; i < diag_y.size(); ++i) {
            total += diag_y[i] * std::log(d.per_i[i]) +
                     (1.0 - diag_y[i]) * std::log(1.0 - d.per_i[i]);
        }
    }
    return total;
}

Eigen::VectorXd diagonal_of(const MglmmDataset& data, Subcollection which) {
    Eigen::VectorXd out(data.N());
    for (int i = 0; i < data.N(); ++i) {
        out[i] = which == Subcollection::W1 ? data.y1(i, i) : data.y2(i, i);
    }
    return out;
}

// One coordinate-polishing pass from the best grid point: step each
// coordinate by +/- mesh/2, project back to the sphere, keep admissible
// improvements.
template <typename LambdaFn>
double polish_supremum(const SphereGrid& grid, const SubsetSpec& spec,
                       const Eigen::VectorXd& start, double start_value, double step,
                       LambdaFn&& lambda_of) {
    double best = start_value;
    Eigen::VectorXd best_point = start;
    for (int c = 0; c < start.size(); ++c) {
        for (double sign : {-1.0, 1.0}) {
            Eigen::VectorXd candidate = best_point;
            candidate[c] += sign * step;
            candidate = project_to_sphere(grid.center, grid.radius, candidate);
            if (!is_interior_vector(grid.model, candidate)) continue;
            if (!spec.contains(candidate, grid.center)) continue;
            const double value = lambda_of(candidate);
            if (value > best) {
                best = value;
                best_point = candidate;
            }
        }
    }
    return best;
}

}  // namespace

// ---------------------------------------------------------------------------

RateFit fit_line(const std::vector<double>& xs, const std::vector<double>& ys,
                 const std::vector<double>& y_se, std::string x_axis, std::string y_axis) {
    if (xs.size() != ys.size() || xs.size() < 2) {
        throw ContractError("fit_line: need matching xs/ys with at least two points");
    }
    RateFit fit;
    fit.xs = xs;
    fit.ys = ys;
    fit.y_se = y_se;
    fit.x_axis = std::move(x_axis);
    fit.y_axis = std::move(y_axis);

    const std::size_t n = xs.size();
    std::vector<double> weights(n, 1.0);
    if (!y_se.empty()) {
        if (y_se.size() != n) throw ContractError("fit_line: y_se size mismatch");
        for (std::size_t k = 0; k < n; ++k) {
            const double se = std::max(y_se[k], 1e-12);
            weights[k] = 1.0 / (se * se);
        }
    }
    double sw = 0, swx = 0, swy = 0;
    for (std::size_t k = 0; k < n; ++k) {
        sw += weights[k];
        swx += weights[k] * xs[k];
        swy += weights[k] * ys[k];
    }
    const double xbar = swx / sw, ybar = swy / sw;
    double sxx = 0, sxy = 0;
    for (std::size_t k = 0; k < n; ++k) {
        sxx += weights[k] * (xs[k] - xbar) * (xs[k] - xbar);
        sxy += weights[k] * (xs[k] - xbar) * (ys[k] - ybar);
    }
    fit.slope = sxy / sxx;
    fit.intercept = ybar - fit.slope * xbar;

    double chi2 = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double r = ys[k] - fit.intercept - fit.slope * xs[k];
        chi2 += weights[k] * r * r;
    }
    double se = std::sqrt(1.0 / sxx);
    if (y_se.empty()) {
        se = std::sqrt(chi2 / (static_cast<double>(n) - 2.0) / sxx);
    } else if (n > 2) {
        // Inflate when the line underfits beyond the stated noise.
        se *= std::max(1.0, std::sqrt(chi2 / (static_cast<double>(n) - 2.0)));
    }
    fit.slope_se = se;
    fit.slope_lo = fit.slope - 3.0 * se;
    fit.slope_hi = fit.slope + 3.0 * se;
    return fit;
}

TrendCheck check_trend(const std::vector<double>& values, const std::vector<double>& ses,
                       bool decreasing, double sigmas, int allowed) {
    TrendCheck trend;
    trend.passed = true;
    std::ostringstream detail;
    for (std::size_t k = 0; k + 1 < values.size(); ++k) {
        const double step = values[k + 1] - values[k];
        const bool inverted = decreasing ? step > 0.0 : step < 0.0;
        if (!inverted) continue;
        ++trend.inversions;
        const double tol =
            sigmas * std::sqrt(ses[k] * ses[k] + ses[k + 1] * ses[k + 1]);
        if (std::abs(step) > tol) {
            trend.passed = false;
            detail << "step " << k << "->" << k + 1 << " breaks the trend by " << std::abs(step)
                   << " > " << tol << "; ";
        }
    }
    if (trend.inversions > allowed) {
        trend.passed = false;
        detail << trend.inversions << " inversions exceed the allowed " << allowed << "; ";
    }
    trend.detail = detail.str();
    return trend;
}

// ---------------------------------------------------------------------------

SubsetInequalityReport subset_inequality_check(Model model, const Eigen::VectorXd& theta,
                                               const Eigen::VectorXd& theta0, double c, int N,
                                               int reps, std::uint64_t seed,
                                               const VerifyOptions& opts) {
    if (!(c > 0.0)) throw ConfigError("subset_inequality_check: c must be positive");
    validate_interior_vector(model, theta);
    validate_interior_vector(model, theta0);
    const double log_c = std::log(c);

    std::vector<double> indicator(reps), rhs1(reps), rhs2(reps), ambiguous(reps, 0.0);

    if (model == Model::Lmm) {
        const LmmParams th = LmmParams::from_vector(theta);
        const LmmParams th0 = LmmParams::from_vector(theta0);
        const LmmSubDensity d1 = make_lmm_subdensity(th, Subcollection::W1, opts.T);
        const LmmSubDensity d1_0 = make_lmm_subdensity(th0, Subcollection::W1, opts.T);
        const LmmSubDensity d2 = make_lmm_subdensity(th, Subcollection::W2, opts.T);
        const LmmSubDensity d2_0 = make_lmm_subdensity(th0, Subcollection::W2, opts.T);
        parallel_for(reps, opts.workers, [&](std::size_t r) {
            const LmmDataset data = simulate_lmm(th0, N, opts.T, derive_seed(seed, 11, r));
            const double lambda_n = lmm_loglik_ratio(th, th0, data);
            indicator[r] = lambda_n >= log_c ? 1.0 : 0.0;
            const LmmSubcollection w1 = extract_subcollection(data, Subcollection::W1);
            const LmmSubcollection w2 = extract_subcollection(data, Subcollection::W2);
            const double lam1 = lmm_sub_loglik(d1, w1.blocks) - lmm_sub_loglik(d1_0, w1.blocks);
            const double lam2 = lmm_sub_loglik(d2, w2.blocks) - lmm_sub_loglik(d2_0, w2.blocks);
            rhs1[r] = std::min(1.0, std::exp(lam1 - log_c));
            rhs2[r] = std::min(1.0, std::exp(lam2 - log_c));
        });
    } else if (model == Model::Mglmm) {
        const MglmmParams th = MglmmParams::from_vector(theta);
        const MglmmParams th0 = MglmmParams::from_vector(theta0);
        const MglmmDesign design = design_for_size(N, opts);
        parallel_for(reps, opts.workers, [&](std::size_t r) {
            const MglmmDataset data = simulate_mglmm(th0, design, derive_seed(seed, 11, r));
            ApproxConfig cfg;
            cfg.samples = opts.is_samples;
            cfg.seed = derive_seed(seed, 13, r);  // common random numbers across theta
            const IsEstimate at_theta = full_loglik_mglmm(th, data, cfg);
            const IsEstimate at_theta0 = full_loglik_mglmm(th0, data, cfg);
            const double lambda_n = at_theta.estimate - at_theta0.estimate;
            const double noise = 3.0 * (at_theta.mc_stderr + at_theta0.mc_stderr);
            indicator[r] = lambda_n >= log_c ? 1.0 : 0.0;
            ambiguous[r] = std::abs(lambda_n - log_c) <= noise ? 1.0 : 0.0;
            rhs1[r] = std::min(1.0, std::exp(subcoll_ratio_normal(th, th0, data) - log_c));
            rhs2[r] = std::min(1.0, std::exp(subcoll_ratio_bernoulli(th, th0, data,
                                                                     opts.quad_points) -
                                             log_c));
        });
    } else {
        throw ConfigError("subset_inequality_check: lmm or mglmm only");
    }

    SubsetInequalityReport report;
    report.c = c;
    report.reps = reps;
    report.lhs = mean_of(indicator);
    report.lhs_se = std::sqrt(report.lhs * (1.0 - report.lhs) / reps);
    report.rhs_w1 = mean_of(rhs1);
    report.rhs_w1_se = se_of_mean(rhs1);
    report.rhs_w2 = mean_of(rhs2);
    report.rhs_w2_se = se_of_mean(rhs2);
    report.ambiguous_fraction = mean_of(ambiguous);
    const auto holds = [&](double rhs, double rhs_se) {
        const double tol = 3.0 * std::sqrt(report.lhs_se * report.lhs_se + rhs_se * rhs_se) +
                           report.ambiguous_fraction;
        return report.lhs <= rhs + tol;
    };
    report.passed = holds(report.rhs_w1, report.rhs_w1_se) &&
                    holds(report.rhs_w2, report.rhs_w2_se);
    return report;
}

// ---------------------------------------------------------------------------

IdentificationReport identification_rate(Model model, Subcollection which,
                                         const SubsetSpec& spec, const SphereGrid& grid,
                                         const std::vector<int>& sizes, int reps,
                                         std::uint64_t seed, const VerifyOptions& opts) {
    const std::vector<std::size_t> restricted = restrict_grid(grid, spec);
    for (std::size_t k : restricted) {
        if ((grid.points[k] - grid.center).norm() < 1e-12) {
            throw ContractError("identification_rate: theta0 found inside the subset grid");
        }
    }

    IdentificationReport report;
    report.sizes = sizes;
    report.grid_points_used = restricted.size();
    const double polish_step = grid.mesh / 2.0;

    for (std::size_t si = 0; si < sizes.size(); ++si) {
        const int N = sizes[si];
        std::vector<double> sups(reps);

        if (model == Model::Lmm) {
            const LmmParams th0 = LmmParams::from_vector(grid.center);
            const LmmSubDensity dens0 = make_lmm_subdensity(th0, which, opts.T);
            std::vector<LmmSubDensity> dens;
            dens.reserve(restricted.size());
            for (std::size_t k : restricted) {
                dens.push_back(make_lmm_subdensity(LmmParams::from_vector(grid.points[k]),
                                                   which, opts.T));
            }
            parallel_for(reps, opts.workers, [&](std::size_t r) {
                const LmmDataset data =
                    simulate_lmm(th0, N, opts.T, derive_seed(seed, si, r));
                const LmmSubcollection sub = extract_subcollection(data, which);
                const double base0 = lmm_sub_loglik(dens0, sub.blocks);
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_k = 0;
                for (std::size_t k = 0; k < dens.size(); ++k) {
                    const double lambda = lmm_sub_loglik(dens[k], sub.blocks) - base0;
                    if (lambda > best) {
                        best = lambda;
                        best_k = k;
                    }
                }
                const auto lambda_of = [&](const Eigen::VectorXd& candidate) {
                    const LmmSubDensity cand = make_lmm_subdensity(
                        LmmParams::from_vector(candidate), which, opts.T);
                    return lmm_sub_loglik(cand, sub.blocks) - base0;
                };
                sups[r] = polish_supremum(grid, spec, grid.points[restricted[best_k]], best,
                                          polish_step, lambda_of);
            });
        } else if (model == Model::Mglmm) {
            const MglmmParams th0 = MglmmParams::from_vector(grid.center);
            const MglmmDesign design = design_for_size(N, opts);
            const MglmmSubDensity dens0 =
                make_mglmm_subdensity(th0, which, design, opts.quad_points);
            std::vector<MglmmSubDensity> dens;
            dens.reserve(restricted.size());
            for (std::size_t k : restricted) {
                dens.push_back(make_mglmm_subdensity(MglmmParams::from_vector(grid.points[k]),
                                                     which, design, opts.quad_points));
            }
            parallel_for(reps, opts.workers, [&](std::size_t r) {
                const MglmmDataset data =
                    simulate_mglmm(th0, design, derive_seed(seed, si, r));
                const Eigen::VectorXd diag = diagonal_of(data, which);
                const double base0 = mglmm_sub_loglik(dens0, diag);
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_k = 0;
                for (std::size_t k = 0; k < dens.size(); ++k) {
                    const double lambda = mglmm_sub_loglik(dens[k], diag) - base0;
                    if (lambda > best) {
                        best = lambda;
                        best_k = k;
                    }
                }
                const auto lambda_of = [&](const Eigen::VectorXd& candidate) {
                    const MglmmSubDensity cand =
                        make_mglmm_subdensity(MglmmParams::from_vector(candidate), which,
                                              design, opts.quad_points);
                    return mglmm_sub_loglik(cand, diag) - base0;
                };
                sups[r] = polish_supremum(grid, spec, grid.points[restricted[best_k]], best,
                                          polish_step, lambda_of);
            });
        } else {
            throw ConfigError("identification_rate: lmm or mglmm only");
        }

        report.ms.push_back(model == Model::Lmm ? N / 2.0 : static_cast<double>(N));
        report.sup_mean.push_back(mean_of(sups));
        report.sup_se.push_back(se_of_mean(sups));
    }

    report.fit = fit_line(report.ms, report.sup_mean, report.sup_se, "m", "E[sup Lambda_m]");
    report.passed = report.fit.slope_hi < 0.0;
    return report;
}

// ---------------------------------------------------------------------------

namespace {

// Closed-form N^{-1} E[Lambda] at a parameter point for the subcollection
// paired with the subset (A1 <-> W1, A2 <-> W2).
double normalized_expected_lambda(Model model, Subcollection which,
                                  const Eigen::VectorXd& theta, const Eigen::VectorXd& theta0,
                                  int T, const MglmmDesign* design, int quad_points) {
    if (model == Model::Lmm) {
        // E[Lambda_{N/2}] = (N/2) * per-block value; normalized by N.
        return 0.5 * subcollection_expected_ratio(LmmParams::from_vector(theta),
                                                  LmmParams::from_vector(theta0), which, T);
    }
    const MglmmParams th = MglmmParams::from_vector(theta);
    const MglmmParams th0 = MglmmParams::from_vector(theta0);
    const double total = which == Subcollection::W1
                             ? expected_subcoll_ratio_normal(th, th0, *design)
                             : expected_subcoll_ratio_bernoulli(th, th0, *design, quad_points);
    return total / design->N;
}

}  // namespace

KlSupReport kl_sup_check(Model model, const SubsetSpec& spec, const SphereGrid& grid,
                         const VerifyOptions& opts, double tol_margin) {
    const std::vector<std::size_t> restricted = restrict_grid(grid, spec);
    const Subcollection which =
        spec.which == SubsetKind::A1 ? Subcollection::W1 : Subcollection::W2;

    MglmmDesign design;
    if (model == Model::Mglmm) design = design_for_size(opts.kl_reference_N, opts);

    const auto value_at = [&](const Eigen::VectorXd& theta) {
        return normalized_expected_lambda(model, which, theta, grid.center, opts.T,
                                          model == Model::Mglmm ? &design : nullptr,
                                          opts.quad_points);
    };

    KlSupReport report;
    report.tol_margin = tol_margin;
    report.grid_points_used = restricted.size();
    double best = -std::numeric_limits<double>::infinity();
    std::size_t best_k = restricted.front();
    std::vector<double> values(restricted.size());
    parallel_for(restricted.size(), opts.workers,
                 [&](std::size_t k) { values[k] = value_at(grid.points[restricted[k]]); });
    for (std::size_t k = 0; k < restricted.size(); ++k) {
        if (values[k] > best) {
            best = values[k];
            best_k = restricted[k];
        }
    }
    best = polish_supremum(grid, spec, grid.points[best_k], best, grid.mesh / 2.0, value_at);
    report.sup = best;
    report.argmax = grid.points[best_k];
    report.passed = report.sup < -tol_margin;
    return report;
}

// ---------------------------------------------------------------------------

UllnReport ulln_check(Model model, Subcollection which, const SubsetSpec& spec,
                      const SphereGrid& grid, const std::vector<int>& sizes, int reps,
                      std::uint64_t seed, const VerifyOptions& opts) {
    const std::vector<std::size_t> restricted = restrict_grid(grid, spec);

    UllnReport report;
    report.sizes = sizes;

    for (std::size_t si = 0; si < sizes.size(); ++si) {
        const int N = sizes[si];
        std::vector<double> sups(reps);

        if (model == Model::Lmm) {
            const LmmParams th0 = LmmParams::from_vector(grid.center);
            const LmmSubDensity dens0 = make_lmm_subdensity(th0, which, opts.T);
            std::vector<LmmSubDensity> dens;
            std::vector<double> expected;  // E Lambda_m per point
            for (std::size_t k : restricted) {
                const LmmParams th = LmmParams::from_vector(grid.points[k]);
                dens.push_back(make_lmm_subdensity(th, which, opts.T));
                expected.push_back((N / 2.0) *
                                   subcollection_expected_ratio(th, th0, which, opts.T));
            }
            parallel_for(reps, opts.workers, [&](std::size_t r) {
                const LmmDataset data =
                    simulate_lmm(th0, N, opts.T, derive_seed(seed, 100 + si, r));
                const LmmSubcollection sub = extract_subcollection(data, which);
                const double base0 = lmm_sub_loglik(dens0, sub.blocks);
                double best = 0.0;
                for (std::size_t k = 0; k < dens.size(); ++k) {
                    const double lambda = lmm_sub_loglik(dens[k], sub.blocks) - base0;
                    best = std::max(best, std::abs(lambda - expected[k]));
                }
                sups[r] = best / N;
            });
        } else if (model == Model::Mglmm) {
            const MglmmParams th0 = MglmmParams::from_vector(grid.center);
            const MglmmDesign design = design_for_size(N, opts);
            const MglmmSubDensity dens0 =
                make_mglmm_subdensity(th0, which, design, opts.quad_points);
            std::vector<MglmmSubDensity> dens;
            std::vector<double> expected;
            for (std::size_t k : restricted) {
                const MglmmParams th = MglmmParams::from_vector(grid.points[k]);
                dens.push_back(make_mglmm_subdensity(th, which, design, opts.quad_points));
                expected.push_back(which == Subcollection::W1
                                       ? expected_subcoll_ratio_normal(th, th0, design)
                                       : expected_subcoll_ratio_bernoulli(th, th0, design,
                                                                          opts.quad_points));
            }
            parallel_for(reps, opts.workers, [&](std::size_t r) {
                const MglmmDataset data =
                    simulate_mglmm(th0, design, derive_seed(seed, 100 + si, r));
                const Eigen::VectorXd diag = diagonal_of(data, which);
                const double base0 = mglmm_sub_loglik(dens0, diag);
                double best = 0.0;
                for (std::size_t k = 0; k < dens.size(); ++k) {
                    const double lambda = mglmm_sub_loglik(dens[k], diag) - base0;
                    best = std::max(best, std::abs(lambda - expected[k]));
                }
                sups[r] = best / N;
            });
        } else {
            throw ConfigError("ulln_check: lmm or mglmm only");
        }

        report.sup_mean.push_back(mean_of(sups));
        report.sup_se.push_back(se_of_mean(sups));
    }

    std::vector<double> log_n, log_v, log_se;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        log_n.push_back(std::log(static_cast<double>(sizes[k])));
        log_v.push_back(std::log(report.sup_mean[k]));
        log_se.push_back(report.sup_se[k] / report.sup_mean[k]);
    }
    report.fit = fit_line(log_n, log_v, log_se, "log N", "log E[sup |Lambda - E Lambda|/N]");
    report.trend = check_trend(report.sup_mean, report.sup_se, /*decreasing=*/true);
    report.passed = report.trend.passed;
    return report;
}

// ---------------------------------------------------------------------------

LipschitzReport lipschitz_order(Model model, const Eigen::VectorXd& theta0, double epsilon,
                                const std::vector<int>& sizes, int reps, int ball_points,
                                std::uint64_t seed, const VerifyOptions& opts) {
    const std::vector<Eigen::VectorXd> ball = ball_sample(model, theta0, epsilon, ball_points);

    LipschitzReport report;
    report.sizes = sizes;
    report.b_bound = model == Model::Mglmm ? 1.5 : 4.0;

    for (std::size_t si = 0; si < sizes.size(); ++si) {
        const int N = sizes[si];
        std::vector<double> sups(reps), centers(reps);

        if (model == Model::Lmm) {
            const LmmParams th0 = LmmParams::from_vector(theta0);
            report.ns.push_back(static_cast<double>(opts.T) * N * N);
            parallel_for(reps, opts.workers, [&](std::size_t r) {
                const LmmDataset data =
                    simulate_lmm(th0, N, opts.T, derive_seed(seed, 200 + si, r));
                double best = 0.0;
                for (const auto& point : ball) {
                    best = std::max(
                        best, lmm_score(LmmParams::from_vector(point), data).norm());
                }
                sups[r] = best;
                centers[r] = lmm_score(th0, data).norm();
            });
        } else if (model == Model::Mglmm) {
            const MglmmParams th0 = MglmmParams::from_vector(theta0);
            const MglmmDesign design = design_for_size(N, opts);
            report.ns.push_back(2.0 * N * N);
            parallel_for(reps, opts.workers, [&](std::size_t r) {
                const MglmmDataset data =
                    simulate_mglmm(th0, design, derive_seed(seed, 200 + si, r));
                ApproxConfig cfg;
                cfg.samples = opts.is_samples;
                cfg.seed = derive_seed(seed, 300 + si, r);
                double best = 0.0;
                for (const auto& point : ball) {
                    best = std::max(
                        best,
                        mglmm_score(MglmmParams::from_vector(point), data, cfg).norm());
                }
                sups[r] = best;
                centers[r] = mglmm_score(th0, data, cfg).norm();
            });
        } else {
            throw ConfigError("lipschitz_order: lmm or mglmm only");
        }

        report.sup_median.push_back(median_of(sups));
        // Normal-theory standard error of a median.
        report.sup_se.push_back(1.2533 * se_of_mean(sups));
        report.center_norm_median.push_back(median_of(centers));
    }

    std::vector<double> log_n, log_v, log_se;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        log_n.push_back(std::log(report.ns[k]));
        log_v.push_back(std::log(report.sup_median[k]));
        log_se.push_back(report.sup_se[k] / report.sup_median[k]);
    }
    report.fit = fit_line(log_n, log_v, log_se, "log n", "log median sup ||grad Lambda||");
    report.b_hat = report.fit.slope;

    std::vector<double> center_se(sizes.size(), 0.0);
    report.center_norm_growing =
        check_trend(report.center_norm_median, report.sup_se, /*decreasing=*/false).passed &&
        report.center_norm_median.back() > report.center_norm_median.front();
    report.passed = std::isfinite(report.b_hat) && report.b_hat <= report.b_bound;
    return report;
}

// ---------------------------------------------------------------------------

RateConditionReport rate_condition_check(Model model, const LipschitzReport& lipschitz,
                                         const IdentificationReport& ident,
                                         double grid_exponent, const VerifyOptions& opts) {
    RateConditionReport report;
    report.b_hat = lipschitz.b_hat;
    report.b_used = lipschitz.b_hat + 0.25;
    report.ident_slope = ident.fit.slope;
    report.ident_slope_hi = ident.fit.slope_hi;
    report.grid_exponent = grid_exponent;

    report.condition1 = std::isfinite(report.b_hat);
    report.condition2 = report.ident_slope_hi < 0.0;

    std::ostringstream text;
    text << "delta_n = n^{-b} with b = " << report.b_used << " > b_hat = " << report.b_hat
         << ", so K_n delta_n ~ n^{b_hat - b} = n^{-0.25} -> 0 (condition 1 "
         << (report.condition1 ? "holds" : "fails: unbounded Lipschitz fit") << "). ";
    text << "M_n = O(n^{b(d-1)}) grows polynomially with exponent " << report.b_used << " * "
         << grid_exponent << "; a_n = exp(" << report.ident_slope << " * m(n)) with m(n) = "
         << (model == Model::Lmm ? "sqrt(n/T)/2" : "sqrt(n/2)") << ". ";
    if (report.condition2) {
        text << "Since the identification slope is negative beyond 3 sigma, the exponential "
                "decay dominates every polynomial and M_n a_n -> 0 (condition 2 holds).";
    } else {
        text << "The identification slope interval reaches 0, so a_n need not decay "
                "exponentially: a polynomial times a non-vanishing rate does not converge "
                "(condition 2 fails).";
    }
    report.explanation = text.str();

    for (std::size_t k = 0; k < ident.sizes.size(); ++k) {
        const int N = ident.sizes[k];
        const double n = model == Model::Lmm ? static_cast<double>(opts.T) * N * N : 2.0 * N * N;
        const double m = ident.ms[k];
        report.ns.push_back(n);
        report.log_mn_an.push_back(report.b_used * grid_exponent * std::log(n) +
                                   report.ident_slope * m);
    }
    report.passed = report.condition1 && report.condition2;
    return report;
}

// ---------------------------------------------------------------------------

ConsistencyReport consistency_experiment(Model model, const Eigen::VectorXd& theta0,
                                         const std::vector<int>& sizes, int reps,
                                         const std::vector<double>& epsilon_list,
                                         const FitConfig& fit_cfg, std::uint64_t seed,
                                         const VerifyOptions& opts) {
    validate_interior_vector(model, theta0);
    ConsistencyReport report;
    report.epsilon_list = epsilon_list;

    for (std::size_t si = 0; si < sizes.size(); ++si) {
        const int N = sizes[si];
        const int dim = static_cast<int>(theta0.size());
        std::vector<double> errors(reps, std::numeric_limits<double>::quiet_NaN());
        Eigen::MatrixXd sq_err = Eigen::MatrixXd::Zero(reps, dim);
        std::vector<int> failed(reps, 0);

        MglmmDesign design;
        if (model == Model::Mglmm) design = design_for_size(N, opts);

        parallel_for(reps, opts.workers, [&](std::size_t r) {
            FitConfig cfg = fit_cfg;
            cfg.seed = derive_seed(seed, 400 + si, 2 * r);
            cfg.approx.seed = derive_seed(seed, 400 + si, 2 * r + 1);
            const std::uint64_t data_seed = derive_seed(seed, 500 + si, r);
            Eigen::VectorXd theta_hat;
            try {
                if (model == Model::Lmm) {
                    const LmmDataset data =
                        simulate_lmm(LmmParams::from_vector(theta0), N, opts.T, data_seed);
                    theta_hat = fit_mle(data, cfg).theta_hat;
                } else if (model == Model::Mglmm) {
                    const MglmmDataset data =
                        simulate_mglmm(MglmmParams::from_vector(theta0), design, data_seed);
                    theta_hat = fit_mle(data, cfg).theta_hat;
                } else {
                    const Eigen::MatrixXd data = simulate_toy(theta0[0], N, data_seed);
                    theta_hat = Eigen::VectorXd::Constant(1, fit_toy(data));
                }
            } catch (const FitError&) {
                failed[r] = 1;
                return;
            }
            const Eigen::VectorXd diff = theta_hat - theta0;
            errors[r] = diff.norm();
            sq_err.row(r) = diff.array().square();
        });

        ConsistencySize size_report;
        size_report.size = N;
        size_report.failures = std::accumulate(failed.begin(), failed.end(), 0);
        if (size_report.failures > 0.05 * reps) {
            throw ExperimentError("consistency_experiment: optimizer failure rate " +
                                  std::to_string(size_report.failures) + "/" +
                                  std::to_string(reps) + " exceeds 5% at N = " +
                                  std::to_string(N));
        }
        std::vector<double> ok_errors;
        for (double e : errors) {
            if (std::isfinite(e)) ok_errors.push_back(e);
        }
        size_report.median_error = median_of(ok_errors);
        size_report.median_error_se =
            bootstrap_median_se(ok_errors, derive_seed(seed, 600 + si, 0));
        size_report.rmse = (sq_err.colwise().sum() /
                            static_cast<double>(ok_errors.size())).array().sqrt();
        for (double eps : epsilon_list) {
            int hits = 0;
            for (double e : ok_errors) {
                if (e < eps) ++hits;
            }
            size_report.coverage.push_back(static_cast<double>(hits) / ok_errors.size());
        }
        report.per_size.push_back(std::move(size_report));
    }

    std::vector<double> medians, median_ses;
    for (const auto& s : report.per_size) {
        medians.push_back(s.median_error);
        median_ses.push_back(s.median_error_se);
    }
    report.median_trend = check_trend(medians, median_ses, /*decreasing=*/true);
    report.passed = report.median_trend.passed;
    for (std::size_t e = 0; e < epsilon_list.size(); ++e) {
        std::vector<double> cov, cov_se;
        for (const auto& s : report.per_size) {
            cov.push_back(s.coverage[e]);
            cov_se.push_back(std::sqrt(std::max(1e-12, s.coverage[e] * (1.0 - s.coverage[e]) /
                                                            reps)));
        }
        report.coverage_trends.push_back(check_trend(cov, cov_se, /*decreasing=*/false));
        report.passed = report.passed && report.coverage_trends.back().passed;
    }
    return report;
}

// ---------------------------------------------------------------------------

UnitMeanReport unit_mean_check(Model model, const Eigen::VectorXd& theta0, double radius,
                               int n_thetas, int N, int reps, std::uint64_t seed,
                               const VerifyOptions& opts) {
    const std::vector<Eigen::VectorXd> thetas = sphere_sample(model, theta0, radius, n_thetas);

    UnitMeanReport report;
    report.passed = true;
    for (std::size_t ti = 0; ti < thetas.size(); ++ti) {
        for (Subcollection which : {Subcollection::W1, Subcollection::W2}) {
            std::vector<double> ratios(reps);
            if (model == Model::Lmm) {
                const LmmParams th = LmmParams::from_vector(thetas[ti]);
                const LmmParams th0 = LmmParams::from_vector(theta0);
                const LmmSubDensity dens = make_lmm_subdensity(th, which, opts.T);
                const LmmSubDensity dens0 = make_lmm_subdensity(th0, which, opts.T);
                parallel_for(reps, opts.workers, [&](std::size_t r) {
                    const LmmDataset data =
                        simulate_lmm(th0, N, opts.T, derive_seed(seed, 700 + ti, r));
                    const LmmSubcollection sub = extract_subcollection(data, which);
                    ratios[r] = std::exp(lmm_sub_loglik(dens, sub.blocks) -
                                         lmm_sub_loglik(dens0, sub.blocks));
                });
            } else if (model == Model::Mglmm) {
                const MglmmParams th = MglmmParams::from_vector(thetas[ti]);
                const MglmmParams th0 = MglmmParams::from_vector(theta0);
                const MglmmDesign design = design_for_size(N, opts);
                const MglmmSubDensity dens =
                    make_mglmm_subdensity(th, which, design, opts.quad_points);
                const MglmmSubDensity dens0 =
                    make_mglmm_subdensity(th0, which, design, opts.quad_points);
                parallel_for(reps, opts.workers, [&](std::size_t r) {
                    const MglmmDataset data =
                        simulate_mglmm(th0, design, derive_seed(seed, 700 + ti, r));
                    const Eigen::VectorXd diag = diagonal_of(data, which);
                    ratios[r] =
                        std::exp(mglmm_sub_loglik(dens, diag) - mglmm_sub_loglik(dens0, diag));
                });
            } else {
                throw ConfigError("unit_mean_check: lmm or mglmm only");
            }
            UnitMeanEntry entry;
            entry.theta = thetas[ti];
            entry.subcollection = subcollection_name(which);
            entry.mean = mean_of(ratios);
            entry.se = se_of_mean(ratios);
            entry.passed = std::abs(entry.mean - 1.0) <= 3.0 * entry.se;
            report.passed = report.passed && entry.passed;
            report.entries.push_back(std::move(entry));
        }
    }
    return report;
}

// ---------------------------------------------------------------------------

ToyRateReport toy_rate_check(double theta0, const std::vector<int>& sizes, int reps,
                             std::uint64_t seed, const VerifyOptions& opts) {
    ToyRateReport report;
    report.sizes = sizes;
    report.reference_exact = std::sqrt(toy_estimator_variance(report.reference_size));

    const auto rmse_at = [&](int N, std::uint64_t size_tag, double* se_out) {
        std::vector<double> sq(reps);
        parallel_for(reps, opts.workers, [&](std::size_t r) {
            const double est = fit_toy(simulate_toy(theta0, N, derive_seed(seed, size_tag, r)));
            sq[r] = (est - theta0) * (est - theta0);
        });
        const double mse = mean_of(sq);
        const double rmse = std::sqrt(mse);
        *se_out = se_of_mean(sq) / (2.0 * rmse);  // delta method
        return rmse;
    };

    std::vector<double> log_n, log_rmse, log_se;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        double se = 0.0;
        const double rmse = rmse_at(sizes[k], 800 + k, &se);
        report.rmse.push_back(rmse);
        report.rmse_se.push_back(se);
        log_n.push_back(std::log(static_cast<double>(sizes[k]) * sizes[k]));
        log_rmse.push_back(std::log(rmse));
        log_se.push_back(se / rmse);
    }
    report.fit = fit_line(log_n, log_rmse, log_se, "log n", "log RMSE");

    double ref_se = 0.0;
    report.reference_rmse = rmse_at(report.reference_size, 899, &ref_se);
    report.reference_rmse_se = ref_se;

    const bool slope_ok = report.fit.slope >= report.slope_lo_bound &&
                          report.fit.slope <= report.slope_hi_bound;
    const bool ref_ok = std::abs(report.reference_rmse - report.reference_exact) <=
                        3.0 * report.reference_rmse_se;
    report.passed = slope_ok && ref_ok;
    return report;
}

// ---------------------------------------------------------------------------

DenseOracleReport dense_oracle_check(const Eigen::VectorXd& theta0, std::uint64_t seed,
                                     const VerifyOptions& opts) {
    const LmmParams th0 = LmmParams::from_vector(theta0);
    DenseOracleReport report;
    SplitRng rng(seed);
    for (int N : {2, 4}) {
        for (int trial = 0; trial < 4; ++trial) {
            LmmParams eval = th0;
            eval.theta1 += 0.5 * rng.normal();
            eval.theta2 += 0.5 * rng.normal();
            eval.theta3 *= std::exp(0.3 * rng.normal());
            eval.theta4 *= std::exp(0.3 * rng.normal());
            eval.theta5 *= std::exp(0.3 * rng.normal());
            eval.theta6 *= std::exp(0.3 * rng.normal());
            eval.theta7 = std::tanh(std::atanh(th0.theta7) + 0.3 * rng.normal());

            const LmmDataset data = simulate_lmm(th0, N, opts.T, rng.next_u64());
            const double structured = lmm_loglik(eval, data);

            const Eigen::MatrixXd cov = build_lmm_covariance(eval, N, opts.T).dense();
            Eigen::VectorXd residual = data.y;
            for (int i = 0; i < N; ++i) {
                for (int j = 0; j < N; ++j) {
                    for (int t = 0; t < opts.T; ++t) {
                        residual[data.index(i, j, t)] -= lmm_mean_at(eval, opts.T, t);
                    }
                }
            }
            Eigen::LLT<Eigen::MatrixXd> llt(cov);
            if (llt.info() != Eigen::Success) {
                throw NumericalError("dense_oracle_check: dense factorization failed");
            }
            const double logdet =
                2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
            const double dense = -0.5 * (logdet + residual.dot(llt.solve(residual)) +
                                         static_cast<double>(data.n()) * kLog2Pi);
            report.max_rel_err =
                std::max(report.max_rel_err,
                         std::abs(structured - dense) / std::max(1.0, std::abs(dense)));
            ++report.cases;
        }
    }
    report.passed = report.max_rel_err <= 1e-8;
    return report;
}

GradientCheckReport gradient_check_report(const Eigen::VectorXd& lmm_theta0,
                                          const Eigen::VectorXd& mglmm_theta0, int lmm_points,
                                          int mglmm_points, std::uint64_t seed,
                                          const VerifyOptions& opts) {
    GradientCheckReport report;
    SplitRng rng(seed);

    const LmmParams lmm_th0 = LmmParams::from_vector(lmm_theta0);
    const LmmDataset lmm_data = simulate_lmm(lmm_th0, 2, opts.T, rng.next_u64());
    const Eigen::VectorXd lmm_eta0 =
        reparameterize(Model::Lmm, lmm_theta0, Direction::ToUnconstrained);
    for (int k = 0; k < lmm_points; ++k) {
        Eigen::VectorXd eta = lmm_eta0;
        for (int c = 0; c < eta.size(); ++c) eta[c] += 0.4 * rng.normal();
        const LmmParams theta =
            LmmParams::from_vector(reparameterize(Model::Lmm, eta, Direction::ToNatural));
        report.lmm_worst = std::max(report.lmm_worst, check_gradient(theta, lmm_data));
    }

    const MglmmParams mglmm_th0 = MglmmParams::from_vector(mglmm_theta0);
    const MglmmDesign design = random_design(2, opts.p, rng.next_u64());
    const MglmmDataset mglmm_data = simulate_mglmm(mglmm_th0, design, rng.next_u64());
    const Eigen::VectorXd mglmm_eta0 =
        reparameterize(Model::Mglmm, mglmm_theta0, Direction::ToUnconstrained);
    for (int k = 0; k < mglmm_points; ++k) {
        Eigen::VectorXd eta = mglmm_eta0;
        for (int c = 0; c < eta.size(); ++c) eta[c] += 0.4 * rng.normal();
        const MglmmParams theta =
            MglmmParams::from_vector(reparameterize(Model::Mglmm, eta, Direction::ToNatural));
        ApproxConfig cfg;
        cfg.samples = opts.is_samples;
        cfg.seed = rng.next_u64();
        report.mglmm_worst =
            std::max(report.mglmm_worst, check_gradient(theta, mglmm_data, cfg));
    }
    report.passed = report.lmm_worst <= 1e-5 && report.mglmm_worst <= 1e-4;
    return report;
}

SphereGrowthReport sphere_growth_check(Model model, const Eigen::VectorXd& theta0,
                                       double epsilon, const std::vector<double>& deltas) {
    SphereGrowthReport report;
    report.deltas = deltas;
    const int dim = static_cast<int>(theta0.size());
    report.exponent_bound = static_cast<double>(dim - 1) + 0.5;

    std::vector<double> log_ratio, log_count;
    for (double delta : deltas) {
        const SphereGrid grid = sphere_grid(model, theta0, epsilon, delta);
        report.counts.push_back(grid.size());
        log_ratio.push_back(std::log(epsilon / delta));
        log_count.push_back(std::log(static_cast<double>(grid.size())));
    }
    const RateFit fit = fit_line(log_ratio, log_count, {}, "log eps/delta", "log M");
    report.exponent = fit.slope;
    report.passed = report.exponent <= report.exponent_bound;
    return report;
}

}  // namespace subsetmle
