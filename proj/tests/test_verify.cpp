#include <doctest.h>

#include <cmath>

#include "subsetmle/errors.hpp"
#include "subsetmle/verify.hpp"

using namespace subsetmle;

namespace {

Eigen::VectorXd lmm_theta0() {
    Eigen::VectorXd v(7);
    v << 1.0, 0.5, 1.0, 0.5, 0.5, 1.0, 0.3;
    return v;
}

Eigen::VectorXd mglmm_theta0() {
    Eigen::VectorXd v(5);
    v << 1.0, -0.5, 0.5, 1.0, 0.75;
    return v;
}

VerifyOptions fast_opts() {
    VerifyOptions opts;
    opts.workers = 2;
    opts.is_samples = 256;
    return opts;
}

}  // namespace

TEST_CASE("fit_line recovers an exact line") {
    const RateFit fit = fit_line({1.0, 2.0, 3.0, 4.0}, {5.0, 3.0, 1.0, -1.0}, {});
    CHECK(fit.slope == doctest::Approx(-2.0));
    CHECK(fit.intercept == doctest::Approx(7.0));
    CHECK(fit.slope_hi < 0.0);
}

TEST_CASE("fit_line weights widen the interval for noisy points") {
    const RateFit fit =
        fit_line({1.0, 2.0, 3.0, 4.0}, {5.1, 2.8, 1.2, -1.1}, {0.2, 0.2, 0.2, 0.2});
    CHECK(fit.slope < 0.0);
    CHECK(fit.slope_lo < fit.slope);
    CHECK(fit.slope_hi > fit.slope);
}

TEST_CASE("trend checker tolerates one inversion within noise") {
    CHECK(check_trend({4.0, 3.0, 2.0, 1.0}, {0.1, 0.1, 0.1, 0.1}, true).passed);
    // one small inversion
    CHECK(check_trend({4.0, 3.0, 3.1, 1.0}, {0.1, 0.1, 0.1, 0.1}, true).passed);
    // inversion too large
    CHECK_FALSE(check_trend({4.0, 3.0, 4.5, 1.0}, {0.1, 0.1, 0.1, 0.1}, true).passed);
    // two inversions
    CHECK_FALSE(
        check_trend({4.0, 4.1, 3.0, 3.1, 1.0}, {0.1, 0.1, 0.1, 0.1, 0.1}, true).passed);
    CHECK(check_trend({1.0, 2.0, 3.0}, {0.1, 0.1, 0.1}, false).passed);
}

TEST_CASE("sphere grid: exact radius and certified mesh on the circle") {
    Eigen::VectorXd center(2);
    center << 0.25, -1.0;
    const double eps = 1.0, delta = 0.125;
    const SphereGrid grid = sphere_grid_points(center, eps, delta, nullptr);
    for (const auto& p : grid.points) {
        CHECK(std::abs((p - center).norm() - eps) < 1e-10);
    }
    // Arc covering needs about pi*eps/delta points; the certified grid stays
    // within a small factor of that.
    const double ideal = M_PI * eps / delta;
    CHECK(grid.size() >= static_cast<std::size_t>(ideal * 0.5));
    CHECK(grid.size() <= static_cast<std::size_t>(ideal * 4.0));
}

TEST_CASE("sphere grid stays interior or refuses") {
    // theta4 = 0.3 with radius 0.9 forces negative-variance points.
    Eigen::VectorXd theta0 = lmm_theta0();
    theta0[3] = 0.3;
    CHECK_THROWS_AS(sphere_grid(Model::Lmm, theta0, 0.9, 0.45), DomainError);
    CHECK_NOTHROW(sphere_grid(Model::Lmm, theta0, 0.25, 0.125));
}

TEST_CASE("halving the mesh at d=7 multiplies the count by about 2^6") {
    const SphereGrid coarse = sphere_grid(Model::Lmm, lmm_theta0(), 0.5, 0.35);
    const SphereGrid fine = sphere_grid(Model::Lmm, lmm_theta0(), 0.5, 0.175);
    const double ratio = static_cast<double>(fine.size()) / coarse.size();
    CHECK(ratio >= 32.0);
    CHECK(ratio <= 128.0);
}

TEST_CASE("sphere growth exponent stays below d-1+1/2") {
    const SphereGrowthReport report =
        sphere_growth_check(Model::Mglmm, mglmm_theta0(), 0.5, {0.3, 0.2, 0.15, 0.11});
    CHECK(report.exponent_bound == doctest::Approx(4.5));
    CHECK(report.passed);
    CHECK(report.exponent > 2.0);  // genuinely polynomial growth
}

TEST_CASE("ball sample stays strictly inside the ball and interior") {
    const auto points = ball_sample(Model::Lmm, lmm_theta0(), 0.5, 200);
    CHECK(points.size() == 200);
    for (const auto& p : points) {
        CHECK((p - lmm_theta0()).norm() < 0.5);
        CHECK(is_interior_vector(Model::Lmm, p));
    }
}

TEST_CASE("subsets cover every sphere grid point") {
    const SphereGrid lmm_grid = sphere_grid(Model::Lmm, lmm_theta0(), 0.5, 0.35);
    CHECK(subsets_cover_grid(lmm_grid));
    const SphereGrid mglmm_grid = sphere_grid(Model::Mglmm, mglmm_theta0(), 0.5, 0.3);
    CHECK(subsets_cover_grid(mglmm_grid));
    CHECK(subsets_cover_grid(mglmm_grid, 0.5 / 8.0));
}

TEST_CASE("mglmm A2 membership follows the zeta construction") {
    const Eigen::VectorXd center = mglmm_theta0();
    SubsetSpec a2{Model::Mglmm, SubsetKind::A2, 0.5, 0.0};  // zeta defaults to eps/4
    Eigen::VectorXd theta = center;
    theta[2] += 0.4;  // beta2 shift of 0.4 >= eps/2
    theta[4] += 0.1;  // theta_d within zeta = 0.125
    CHECK(a2.contains(theta, center));
    theta[4] = center[4] + 0.2;  // theta_d beyond zeta
    CHECK_FALSE(a2.contains(theta, center));
    SubsetSpec a1{Model::Mglmm, SubsetKind::A1, 0.5, 0.0};
    CHECK(a1.contains(theta, center));
    // The A1 closure contains the center point; exclusion of theta0 from
    // grid-restricted subsets comes from the sphere radius itself.
    CHECK(a1.contains(center, center));
    CHECK_FALSE(a2.contains(center, center));
}

TEST_CASE("restrict_grid rejects empty restrictions") {
    const SphereGrid grid = sphere_grid(Model::Lmm, lmm_theta0(), 0.25, 0.2);
    SubsetSpec far{Model::Lmm, SubsetKind::A1, 10.0, 0.0};  // threshold 5 beats radius
    CHECK_THROWS_AS(restrict_grid(grid, far), ConfigError);
}

TEST_CASE("subset inequality holds for the LMM") {
    const VerifyOptions opts = fast_opts();
    Eigen::VectorXd theta = lmm_theta0();
    theta[0] += 1.0;
    const auto report =
        subset_inequality_check(Model::Lmm, theta, lmm_theta0(), 1.0, 4, 400, 7, opts);
    CHECK(report.passed);
    CHECK(report.lhs <= 1.0);

    // c huge: both sides collapse to zero.
    const auto tail =
        subset_inequality_check(Model::Lmm, theta, lmm_theta0(), 1e12, 4, 200, 7, opts);
    CHECK(tail.lhs == 0.0);
    CHECK(tail.rhs_w1 < 1e-6);
    CHECK(tail.passed);

    // theta = theta0, c = 1: both sides are exactly 1.
    const auto degenerate =
        subset_inequality_check(Model::Lmm, lmm_theta0(), lmm_theta0(), 1.0, 4, 100, 7, opts);
    CHECK(degenerate.lhs == 1.0);
    CHECK(degenerate.rhs_w1 == 1.0);
    CHECK(degenerate.passed);
}

TEST_CASE("subset inequality holds for the MGLMM") {
    const VerifyOptions opts = fast_opts();
    Eigen::VectorXd theta = mglmm_theta0();
    theta[0] += 0.75;
    const auto report =
        subset_inequality_check(Model::Mglmm, theta, mglmm_theta0(), 1.0, 3, 150, 11, opts);
    CHECK(report.passed);
}

TEST_CASE("KL sup is negative on both LMM subsets and shrinks with epsilon") {
    const VerifyOptions opts = fast_opts();
    double previous = 0.0;
    for (double eps : {0.1, 0.2, 0.4}) {
        const SphereGrid grid = sphere_grid(Model::Lmm, lmm_theta0(), eps, eps / 2.0);
        SubsetSpec spec{Model::Lmm, SubsetKind::A1, eps, 0.0};
        const KlSupReport report = kl_sup_check(Model::Lmm, spec, grid, opts);
        CHECK(report.passed);
        CHECK(report.sup < -1e-6);
        // |sup| grows with epsilon, i.e. sup itself decreases.
        CHECK(report.sup <= previous + 1e-12);
        previous = report.sup;
    }
    const SphereGrid grid = sphere_grid(Model::Lmm, lmm_theta0(), 0.4, 0.2);
    SubsetSpec a2{Model::Lmm, SubsetKind::A2, 0.4, 0.0};
    CHECK(kl_sup_check(Model::Lmm, a2, grid, opts).passed);
}

TEST_CASE("KL sup is negative for the MGLMM at both zeta choices") {
    const VerifyOptions opts = fast_opts();
    const double eps = 0.5;
    const SphereGrid grid = sphere_grid(Model::Mglmm, mglmm_theta0(), eps, eps / 2.0);
    for (double zeta : {eps / 8.0, eps / 4.0}) {
        for (SubsetKind kind : {SubsetKind::A1, SubsetKind::A2}) {
            SubsetSpec spec{Model::Mglmm, kind, eps, zeta};
            const KlSupReport report = kl_sup_check(Model::Mglmm, spec, grid, opts);
            CHECK(report.passed);
        }
    }
}

TEST_CASE("ULLN deviation is identically zero on the degenerate center grid") {
    SphereGrid degenerate;
    degenerate.model = Model::Lmm;
    degenerate.center = lmm_theta0();
    degenerate.radius = 0.0;
    degenerate.mesh = 0.1;
    degenerate.points = {lmm_theta0()};
    SubsetSpec spec{Model::Lmm, SubsetKind::A1, 0.0, 0.0};
    const UllnReport report = ulln_check(Model::Lmm, Subcollection::W1, spec, degenerate,
                                         {4, 8}, 50, 3, fast_opts());
    CHECK(std::abs(report.sup_mean[0]) < 1e-12);
    CHECK(std::abs(report.sup_mean[1]) < 1e-12);
}

TEST_CASE("ULLN deviation decreases for the LMM W1") {
    const SphereGrid grid = sphere_grid(Model::Lmm, lmm_theta0(), 0.5, 0.35);
    SubsetSpec spec{Model::Lmm, SubsetKind::A1, 0.5, 0.0};
    const UllnReport report = ulln_check(Model::Lmm, Subcollection::W1, spec, grid,
                                         {8, 16, 32, 64}, 100, 5, fast_opts());
    CHECK(report.passed);
    CHECK(report.sup_mean.front() > report.sup_mean.back());
}

TEST_CASE("identification machinery: subset excludes the center, stable under reps") {
    const SphereGrid grid = sphere_grid(Model::Lmm, lmm_theta0(), 0.5, 0.35);
    SubsetSpec spec{Model::Lmm, SubsetKind::A1, 0.5, 0.0};
    const auto restricted = restrict_grid(grid, spec);
    for (std::size_t k : restricted) {
        CHECK((grid.points[k] - grid.center).norm() > 0.4);
    }
    const auto once = identification_rate(Model::Lmm, Subcollection::W1, spec, grid,
                                          {8, 16, 32}, 60, 17, fast_opts());
    const auto twice = identification_rate(Model::Lmm, Subcollection::W1, spec, grid,
                                           {8, 16, 32}, 120, 17, fast_opts());
    CHECK((once.fit.slope > 0) == (twice.fit.slope > 0));
    // identical inputs reproduce identical outputs
    const auto again = identification_rate(Model::Lmm, Subcollection::W1, spec, grid,
                                           {8, 16, 32}, 60, 17, fast_opts());
    CHECK(again.fit.slope == once.fit.slope);
}

TEST_CASE("identification decays once past the covering transient") {
    // The exponential identification rate is asymptotic; the supremum enters
    // its decay regime at subcollection sizes in the hundreds.
    const SphereGrid grid = sphere_grid(Model::Lmm, lmm_theta0(), 0.5, 0.4);
    SubsetSpec spec{Model::Lmm, SubsetKind::A1, 0.5, 0.0};
    const auto report = identification_rate(Model::Lmm, Subcollection::W1, spec, grid,
                                            {128, 512, 1024}, 25, 23, fast_opts());
    CHECK(report.sup_mean.back() < report.sup_mean.front());
}

TEST_CASE("lipschitz order: finite exponent, growing center norm (LMM)") {
    const auto report = lipschitz_order(Model::Lmm, lmm_theta0(), 0.4, {2, 4, 8, 16}, 4, 40,
                                        29, fast_opts());
    CHECK(report.passed);
    CHECK(std::isfinite(report.b_hat));
    CHECK(report.b_hat <= 4.0);
    CHECK(report.b_hat > 0.3);
    CHECK(report.center_norm_median.back() > report.center_norm_median.front());
}

TEST_CASE("lipschitz order for the MGLMM stays near linear") {
    const auto report = lipschitz_order(Model::Mglmm, mglmm_theta0(), 0.4, {2, 4, 8}, 3, 24,
                                        31, fast_opts());
    CHECK(std::isfinite(report.b_hat));
    CHECK(report.b_hat <= 1.5);
}

TEST_CASE("rate conditions combine the two fits") {
    LipschitzReport lip;
    lip.b_hat = 1.1;
    lip.fit.slope = 1.1;
    IdentificationReport ident;
    ident.sizes = {8, 16};
    ident.ms = {4.0, 8.0};
    ident.fit.slope = -0.05;
    ident.fit.slope_hi = -0.01;
    const auto good = rate_condition_check(Model::Lmm, lip, ident, 6.0, fast_opts());
    CHECK(good.passed);
    CHECK(good.condition1);
    CHECK(good.condition2);

    ident.fit.slope = 0.0;
    ident.fit.slope_hi = 0.01;
    const auto bad = rate_condition_check(Model::Lmm, lip, ident, 6.0, fast_opts());
    CHECK_FALSE(bad.passed);
    CHECK(bad.condition1);
    CHECK_FALSE(bad.condition2);
    CHECK(bad.explanation.find("polynomial") != std::string::npos);
}

TEST_CASE("toy consistency experiment shows the expected trends") {
    Eigen::VectorXd theta0(1);
    theta0 << 0.6;
    FitConfig cfg;
    const auto report = consistency_experiment(Model::Toy, theta0, {16, 32, 64}, 80,
                                               {0.1, 0.3}, cfg, 41, fast_opts());
    CHECK(report.passed);
    CHECK(report.per_size.front().median_error > report.per_size.back().median_error);
    for (const auto& size : report.per_size) CHECK(size.failures == 0);
}

TEST_CASE("unit mean holds for both models and subcollections") {
    const auto lmm = unit_mean_check(Model::Lmm, lmm_theta0(), 0.2, 2, 4, 4000, 43,
                                     fast_opts());
    CHECK(lmm.passed);
    CHECK(lmm.entries.size() == 4);
    const auto mglmm = unit_mean_check(Model::Mglmm, mglmm_theta0(), 0.2, 2, 4, 4000, 47,
                                       fast_opts());
    CHECK(mglmm.passed);
}

TEST_CASE("toy rate matches the quarter-power law and the exact RMSE") {
    const auto report = toy_rate_check(0.8, {16, 32, 64, 128}, 200, 53, fast_opts());
    CHECK(report.passed);
    CHECK(report.fit.slope > -0.32);
    CHECK(report.fit.slope < -0.18);
    CHECK(report.reference_exact == doctest::Approx(0.1418).epsilon(2e-3));
}

TEST_CASE("dense oracle and gradient reports pass") {
    const auto dense = dense_oracle_check(lmm_theta0(), 59, fast_opts());
    CHECK(dense.passed);
    CHECK(dense.max_rel_err <= 1e-8);
    const auto grads =
        gradient_check_report(lmm_theta0(), mglmm_theta0(), 20, 3, 61, fast_opts());
    CHECK(grads.passed);
    CHECK(grads.lmm_worst <= 1e-5);
    CHECK(grads.mglmm_worst <= 1e-4);
}
