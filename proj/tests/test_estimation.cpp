#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "subsetmle/errors.hpp"
#include "subsetmle/estimation.hpp"
#include "subsetmle/rng.hpp"

using namespace subsetmle;

namespace {

LmmParams lmm_reference() {
    LmmParams theta;
    theta.theta1 = 1.0;
    theta.theta2 = 0.5;
    theta.theta3 = 1.0;
    theta.theta4 = 0.5;
    theta.theta5 = 0.5;
    theta.theta6 = 1.0;
    theta.theta7 = 0.3;
    return theta;
}

MglmmParams mglmm_reference() {
    MglmmParams theta;
    theta.beta1 = Eigen::Vector2d(1.0, -0.5);
    theta.beta2 = Eigen::Vector2d(0.5, 1.0);
    theta.theta_d = 0.75;
    return theta;
}

}  // namespace

TEST_CASE("reparameterization fixed points") {
    LmmParams theta = lmm_reference();
    theta.theta3 = 1.0;
    theta.theta7 = 0.0;
    const Eigen::VectorXd eta =
        reparameterize(Model::Lmm, theta.to_vector(), Direction::ToUnconstrained);
    CHECK(eta[2] == 0.0);  // log 1
    CHECK(eta[6] == 0.0);  // atanh 0
}

TEST_CASE("reparameterization round trip is the identity to 1e-12") {
    SplitRng rng(2718);
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::VectorXd v(7);
        v << rng.normal(), rng.normal(), 0.1 + 3.0 * rng.uniform(), 0.1 + 3.0 * rng.uniform(),
            0.1 + 3.0 * rng.uniform(), 0.1 + 3.0 * rng.uniform(), 1.9 * rng.uniform() - 0.95;
        const Eigen::VectorXd round = reparameterize(
            Model::Lmm, reparameterize(Model::Lmm, v, Direction::ToUnconstrained),
            Direction::ToNatural);
        CHECK((round - v).cwiseAbs().maxCoeff() < 1e-12);

        Eigen::VectorXd m(5);
        m << rng.normal(), rng.normal(), rng.normal(), rng.normal(), 0.05 + 2.0 * rng.uniform();
        const Eigen::VectorXd round_m = reparameterize(
            Model::Mglmm, reparameterize(Model::Mglmm, m, Direction::ToUnconstrained),
            Direction::ToNatural);
        CHECK((round_m - m).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("boundary parameters are rejected, not clamped") {
    Eigen::VectorXd v = lmm_reference().to_vector();
    v[3] = 0.0;
    CHECK_THROWS_AS(reparameterize(Model::Lmm, v, Direction::ToUnconstrained), DomainError);
    v = lmm_reference().to_vector();
    v[6] = 1.0;
    CHECK_THROWS_AS(reparameterize(Model::Lmm, v, Direction::ToUnconstrained), DomainError);
}

TEST_CASE("toy optimizer agrees with the closed-form grand mean") {
    const Eigen::MatrixXd data = simulate_toy(0.8, 16, 11);
    FitConfig cfg;
    cfg.starts = 4;
    cfg.seed = 1;
    const FitResult fit = fit_mle_toy(data, cfg);
    CHECK(fit.converged);
    CHECK(std::abs(fit.theta_hat[0] - fit_toy(data)) < 1e-10);
}

TEST_CASE("gradient checks per model") {
    const LmmDataset lmm_data = simulate_lmm(lmm_reference(), 2, 4, 21);
    SplitRng rng(37);
    for (int trial = 0; trial < 5; ++trial) {
        LmmParams theta = lmm_reference();
        theta.theta1 += rng.normal();
        theta.theta4 *= 0.5 + rng.uniform();
        theta.theta7 = 1.6 * rng.uniform() - 0.8;
        CHECK(check_gradient(theta, lmm_data) <= 1e-5);
    }

    const MglmmDesign design = random_design(2, 2, 5);
    const MglmmDataset mglmm_data = simulate_mglmm(mglmm_reference(), design, 7);
    ApproxConfig approx;
    approx.samples = 1024;
    approx.seed = 3;
    CHECK(check_gradient(mglmm_reference(), mglmm_data, approx) <= 1e-4);

    // Quadratic log likelihood: only finite-difference roundoff remains.
    const Eigen::MatrixXd toy_data = simulate_toy(0.0, 10, 13);
    CHECK(check_gradient_toy(0.4, toy_data) <= 1e-7);
}

TEST_CASE("lmm fit recovers the truth on a moderate dataset") {
    const LmmParams truth = lmm_reference();
    const LmmDataset data = simulate_lmm(truth, 8, 4, 1234);
    FitConfig cfg;
    cfg.starts = 4;
    cfg.seed = 9;
    const FitResult fit = fit_mle(data, cfg);
    CHECK(fit.converged);
    CHECK(fit.grad_norm <= cfg.grad_tol);
    // Stationarity holds in the natural coordinates as well.
    const Eigen::VectorXd score = lmm_score(LmmParams::from_vector(fit.theta_hat), data);
    CHECK(score.norm() < 1e-3);
    CHECK((fit.theta_hat - truth.to_vector()).norm() < 2.5);
}

TEST_CASE("multistart loglik is monotone in the number of starts") {
    const LmmDataset data = simulate_lmm(lmm_reference(), 4, 4, 654);
    FitConfig cfg;
    cfg.seed = 77;
    std::vector<double> values;
    for (int starts : {1, 3, 6}) {
        cfg.starts = starts;
        values.push_back(fit_mle(data, cfg).loglik);
    }
    CHECK(values[0] <= values[1] + 1e-9);
    CHECK(values[1] <= values[2] + 1e-9);
}

TEST_CASE("fit with zero treatment effect centers theta2 at zero") {
    LmmParams truth = lmm_reference();
    truth.theta2 = 0.0;
    const int reps = 40;
    std::vector<double> estimates(reps);
    FitConfig cfg;
    cfg.starts = 2;
    cfg.seed = 5;
    for (int r = 0; r < reps; ++r) {
        const LmmDataset data = simulate_lmm(truth, 6, 4, 40000 + r);
        estimates[r] = fit_mle(data, cfg).theta_hat[1];
    }
    std::sort(estimates.begin(), estimates.end());
    const double median = 0.5 * (estimates[reps / 2 - 1] + estimates[reps / 2]);

    // Bootstrap standard error of the median.
    SplitRng rng(31);
    std::vector<double> medians;
    for (int b = 0; b < 200; ++b) {
        std::vector<double> resample(reps);
        for (int k = 0; k < reps; ++k) {
            resample[k] = estimates[static_cast<int>(rng.uniform() * reps)];
        }
        std::sort(resample.begin(), resample.end());
        medians.push_back(0.5 * (resample[reps / 2 - 1] + resample[reps / 2]));
    }
    double mean = 0;
    for (double m : medians) mean += m;
    mean /= medians.size();
    double ss = 0;
    for (double m : medians) ss += (m - mean) * (m - mean);
    const double se = std::sqrt(ss / (medians.size() - 1));
    CHECK(std::abs(median) <= 3.0 * se + 1e-6);
}

TEST_CASE("mglmm fit converges and lands near the truth") {
    const MglmmParams truth = mglmm_reference();
    const MglmmDesign design = random_design(6, 2, 15);
    const MglmmDataset data = simulate_mglmm(truth, design, 17);
    FitConfig cfg;
    cfg.starts = 2;
    cfg.seed = 23;
    cfg.approx.samples = 2048;
    cfg.approx.seed = 29;
    const FitResult fit = fit_mle(data, cfg);
    CHECK(fit.converged);
    CHECK(fit.grad_norm <= cfg.grad_tol);
    CHECK(fit.theta_hat.size() == 5);
    CHECK(fit.theta_hat[4] > 0.0);
    CHECK((fit.theta_hat - truth.to_vector()).norm() < 4.0);
}

TEST_CASE("hopeless budget raises FitError with the best gradient norm") {
    const LmmDataset data = simulate_lmm(lmm_reference(), 2, 4, 3);
    FitConfig cfg;
    cfg.starts = 2;
    cfg.max_iter = 1;
    cfg.grad_tol = 1e-14;
    try {
        fit_mle(data, cfg);
        FAIL("expected FitError");
    } catch (const FitError& err) {
        CHECK(err.best_grad_norm > 0.0);
        CHECK(std::isfinite(err.best_grad_norm));
    }
}
