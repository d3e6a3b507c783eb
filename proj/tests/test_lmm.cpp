#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "subsetmle/errors.hpp"
#include "subsetmle/lmm.hpp"
#include "subsetmle/rng.hpp"

using namespace subsetmle;

namespace {

LmmParams reference_theta() {
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

LmmParams random_interior_theta(SplitRng& rng) {
    LmmParams theta;
    theta.theta1 = 2.0 * rng.normal();
    theta.theta2 = rng.normal();
    theta.theta3 = 0.3 + 1.5 * rng.uniform();
    theta.theta4 = 0.3 + 1.5 * rng.uniform();
    theta.theta5 = 0.3 + 1.5 * rng.uniform();
    theta.theta6 = 0.3 + 1.5 * rng.uniform();
    theta.theta7 = 1.6 * rng.uniform() - 0.8;
    return theta;
}

// Dense multivariate-normal log density, independent of the structured path.
double dense_mvn_loglik(const LmmParams& theta, const LmmDataset& data) {
    const Eigen::MatrixXd cov = build_lmm_covariance(theta, data.N, data.T).dense();
    Eigen::VectorXd residual = data.y;
    for (int i = 0; i < data.N; ++i) {
        for (int j = 0; j < data.N; ++j) {
            for (int t = 0; t < data.T; ++t) {
                residual[data.index(i, j, t)] -= lmm_mean_at(theta, data.T, t);
            }
        }
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    REQUIRE(llt.info() == Eigen::Success);
    const double logdet = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
    const double quad = residual.dot(llt.solve(residual));
    return -0.5 * (logdet + quad + data.n() * std::log(2.0 * M_PI));
}

struct MeanSe {
    double mean;
    double se;
};

MeanSe mean_and_se(const std::vector<double>& xs) {
    const double n = static_cast<double>(xs.size());
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= n;
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

}  // namespace

TEST_CASE("simulation is deterministic in (theta, N, T, seed)") {
    const LmmParams theta = reference_theta();
    const LmmDataset a = simulate_lmm(theta, 4, 4, 99);
    const LmmDataset b = simulate_lmm(theta, 4, 4, 99);
    const LmmDataset c = simulate_lmm(theta, 4, 4, 100);
    CHECK(a.y == b.y);
    CHECK(a.y != c.y);
}

TEST_CASE("simulate rejects odd dimensions") {
    CHECK_THROWS_AS(simulate_lmm(reference_theta(), 3, 4, 1), ConfigError);
    CHECK_THROWS_AS(simulate_lmm(reference_theta(), 4, 5, 1), ConfigError);
    CHECK_THROWS_AS(simulate_lmm(reference_theta(), 4, 2, 1), ConfigError);
}

TEST_CASE("treatment mean switches at T/2") {
    const LmmParams theta = reference_theta();
    const int reps = 4000;
    std::vector<double> treated, untreated;
    treated.reserve(reps);
    untreated.reserve(reps);
    for (int r = 0; r < reps; ++r) {
        const LmmDataset data = simulate_lmm(theta, 2, 4, 1000 + r);
        treated.push_back(data.at(0, 0, 0));
        untreated.push_back(data.at(0, 0, 3));
    }
    const MeanSe t = mean_and_se(treated);
    const MeanSe u = mean_and_se(untreated);
    CHECK(std::abs(t.mean - (theta.theta1 + theta.theta2)) < 3.0 * t.se);
    CHECK(std::abs(u.mean - theta.theta1) < 3.0 * u.se);
}

TEST_CASE("cross-column covariance recovers theta4") {
    const LmmParams theta = reference_theta();
    const int reps = 6000;
    std::vector<double> a(reps), b(reps);
    for (int r = 0; r < reps; ++r) {
        const LmmDataset data = simulate_lmm(theta, 2, 4, 5000 + r);
        a[r] = data.at(0, 0, 0);
        b[r] = data.at(0, 1, 0);
    }
    const MeanSe ma = mean_and_se(a), mb = mean_and_se(b);
    std::vector<double> products(reps);
    for (int r = 0; r < reps; ++r) products[r] = (a[r] - ma.mean) * (b[r] - mb.mean);
    const MeanSe cov = mean_and_se(products);
    CHECK(std::abs(cov.mean - theta.theta4) < 3.0 * cov.se);
}

TEST_CASE("tiny random-effect variances leave unit residual variance") {
    LmmParams theta = reference_theta();
    theta.theta3 = 1.0;
    theta.theta4 = theta.theta5 = theta.theta6 = 1e-10;
    std::vector<double> values;
    for (int r = 0; r < 100; ++r) {
        const LmmDataset data = simulate_lmm(theta, 8, 4, 77 + r);
        for (int t = 0; t < 4; ++t) {
            const double centered = data.at(1, 2, t) - lmm_mean_at(theta, 4, t);
            values.push_back(centered * centered);
        }
    }
    const MeanSe var = mean_and_se(values);
    CHECK(std::abs(var.mean - 1.0) < 3.0 * var.se);
}

TEST_CASE("loglik ratio at theta0 is identically zero") {
    const LmmParams theta = reference_theta();
    const LmmDataset data = simulate_lmm(theta, 4, 4, 11);
    CHECK(lmm_loglik_ratio(theta, theta, data) == 0.0);
}

TEST_CASE("loglik matches the dense multivariate-normal oracle") {
    SplitRng rng(314);
    for (int trial = 0; trial < 5; ++trial) {
        const LmmParams truth = random_interior_theta(rng);
        const LmmParams eval = random_interior_theta(rng);
        const LmmDataset data = simulate_lmm(truth, 2, 4, 400 + trial);
        const double fast = lmm_loglik(eval, data);
        const double dense = dense_mvn_loglik(eval, data);
        CHECK(std::abs(fast - dense) <= 1e-8 * std::max(1.0, std::abs(dense)));
    }
}

TEST_CASE("likelihood ratio has unit mean over replications") {
    // E[L_m(theta; W)] = 1 when the data are drawn under theta0.
    const LmmParams theta0 = reference_theta();
    LmmParams theta = theta0;
    theta.theta1 += 0.15;
    theta.theta6 += 0.1;
    const int reps = 10000;
    std::vector<double> lw1(reps), lw2(reps);
    for (int r = 0; r < reps; ++r) {
        const LmmDataset data = simulate_lmm(theta0, 4, 4, 90000 + r);
        const LmmSubcollection w1 = extract_subcollection(data, Subcollection::W1);
        const LmmSubcollection w2 = extract_subcollection(data, Subcollection::W2);
        lw1[r] = std::exp(subcollection_loglik_ratio(theta, theta0, w1, data.T));
        lw2[r] = std::exp(subcollection_loglik_ratio(theta, theta0, w2, data.T));
    }
    const MeanSe m1 = mean_and_se(lw1);
    const MeanSe m2 = mean_and_se(lw2);
    CHECK(std::abs(m1.mean - 1.0) < 3.0 * m1.se);
    CHECK(std::abs(m2.mean - 1.0) < 3.0 * m2.se);
}

TEST_CASE("score matches central finite differences") {
    SplitRng rng(271828);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const LmmParams truth = random_interior_theta(rng);
        const LmmDataset data = simulate_lmm(truth, 2, 4, 600 + trial);
        const LmmParams eval = random_interior_theta(rng);
        const Eigen::VectorXd analytic = lmm_score(eval, data);
        Eigen::VectorXd v = eval.to_vector();
        for (int k = 0; k < 7; ++k) {
            const double h = 1e-6 * (1.0 + std::abs(v[k]));
            Eigen::VectorXd hi = v, lo = v;
            hi[k] += h;
            lo[k] -= h;
            const double fd = (lmm_loglik(LmmParams::from_vector(hi), data) -
                               lmm_loglik(LmmParams::from_vector(lo), data)) /
                              (2.0 * h);
            worst = std::max(worst, std::abs(analytic[k] - fd) / std::max(1.0, std::abs(fd)));
        }
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("score component for theta1 equals 1' C^{-1} (Y - m)") {
    SplitRng rng(5);
    const LmmParams theta = random_interior_theta(rng);
    const LmmDataset data = simulate_lmm(reference_theta(), 2, 4, 919);
    const Eigen::MatrixXd cov = build_lmm_covariance(theta, data.N, data.T).dense();
    Eigen::VectorXd residual = data.y;
    for (int i = 0; i < data.N; ++i) {
        for (int j = 0; j < data.N; ++j) {
            for (int t = 0; t < data.T; ++t) {
                residual[data.index(i, j, t)] -= lmm_mean_at(theta, data.T, t);
            }
        }
    }
    const double expected = Eigen::LLT<Eigen::MatrixXd>(cov).solve(residual).sum();
    CHECK(lmm_score(theta, data)[0] == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("subcollection index patterns") {
    const LmmDataset data = simulate_lmm(reference_theta(), 4, 4, 2);

    const LmmSubcollection w1 = extract_subcollection(data, Subcollection::W1);
    CHECK(w1.m == 2);
    CHECK(w1.blocks(0, 0) == data.at(0, 0, 0));
    CHECK(w1.blocks(0, 1) == data.at(1, 1, data.T - 1));
    CHECK(w1.blocks(1, 0) == data.at(2, 2, 0));
    CHECK(w1.blocks(1, 1) == data.at(3, 3, data.T - 1));

    const LmmSubcollection w2 = extract_subcollection(data, Subcollection::W2);
    CHECK(w2.m == 2);
    // Second block begins with Y_{3,3,1} (0-based subject 2).
    CHECK(w2.blocks(1, 0) == data.at(2, 2, 0));
    CHECK(w2.blocks(1, 1) == data.at(2, 2, 1));
    CHECK(w2.blocks(1, 2) == data.at(2, 2, 2));
    CHECK(w2.blocks(1, 3) == data.at(2, 3, 0));
    CHECK(w2.blocks(1, 4) == data.at(3, 2, 0));
}

TEST_CASE("N=2 gives a single W1 block") {
    const LmmDataset data = simulate_lmm(reference_theta(), 2, 4, 3);
    const LmmSubcollection w1 = extract_subcollection(data, Subcollection::W1);
    CHECK(w1.m == 1);
    CHECK(w1.blocks(0, 0) == data.at(0, 0, 0));
    CHECK(w1.blocks(0, 1) == data.at(1, 1, 3));
}

TEST_CASE("W1 blocks are empirically uncorrelated across i") {
    const LmmParams theta = reference_theta();
    const int reps = 5000;
    std::vector<double> products;
    products.reserve(reps);
    std::vector<double> first(reps), second(reps);
    for (int r = 0; r < reps; ++r) {
        const LmmDataset data = simulate_lmm(theta, 4, 4, 40000 + r);
        const LmmSubcollection w1 = extract_subcollection(data, Subcollection::W1);
        first[r] = w1.blocks(0, 0);
        second[r] = w1.blocks(1, 0);
    }
    const MeanSe mf = mean_and_se(first), ms = mean_and_se(second);
    for (int r = 0; r < reps; ++r) {
        products.push_back((first[r] - mf.mean) * (second[r] - ms.mean));
    }
    const MeanSe cov = mean_and_se(products);
    CHECK(std::abs(cov.mean) < 3.0 * cov.se);
}

TEST_CASE("W1 covariance is (theta3+theta4+theta5+theta6) I") {
    LmmParams theta = reference_theta();
    theta.theta3 = 1.0;
    theta.theta4 = 0.5;
    theta.theta5 = 0.5;
    theta.theta6 = 1.0;
    CHECK(w1_variance(theta) == doctest::Approx(3.0));
}

TEST_CASE("W2 covariance corners") {
    SplitRng rng(9);
    for (int trial = 0; trial < 5; ++trial) {
        const LmmParams theta = random_interior_theta(rng);
        const Eigen::MatrixXd c2 = w2_covariance(theta);
        CHECK(c2(3, 4) == 0.0);
        CHECK(c2(0, 1) == doctest::Approx(theta.theta4 + theta.theta5 +
                                          theta.theta6 * theta.theta7));
        CHECK(c2(0, 2) == doctest::Approx(theta.theta4 + theta.theta5 +
                                          theta.theta6 * theta.theta7 * theta.theta7));
        CHECK(c2(1, 3) == doctest::Approx(theta.theta4));
        CHECK(c2(2, 4) == doctest::Approx(theta.theta5));
        CHECK((c2 - c2.transpose()).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("subcollection ratio is zero at theta0") {
    const LmmParams theta = reference_theta();
    const LmmDataset data = simulate_lmm(theta, 4, 4, 8);
    for (Subcollection which : {Subcollection::W1, Subcollection::W2}) {
        const LmmSubcollection sub = extract_subcollection(data, which);
        CHECK(subcollection_loglik_ratio(theta, theta, sub, data.T) == 0.0);
        CHECK(std::abs(subcollection_expected_ratio(theta, theta, which, data.T)) < 1e-12);
    }
}

TEST_CASE("mean-shift expected ratio is -1/3 per W1 block") {
    const LmmParams theta0 = reference_theta();
    LmmParams theta = theta0;
    theta.theta1 = 2.0;  // mean shift of 1 in both components, C1 = 3 I
    CHECK(subcollection_expected_ratio(theta, theta0, Subcollection::W1, 4) ==
          doctest::Approx(-1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("expected ratio is strictly negative off theta0 for W2") {
    const LmmParams theta0 = reference_theta();
    SplitRng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        LmmParams theta = random_interior_theta(rng);
        theta.theta1 = theta0.theta1;
        theta.theta2 = theta0.theta2;
        const double value = subcollection_expected_ratio(theta, theta0, Subcollection::W2, 4);
        CHECK(value < 0.0);
    }
}

TEST_CASE("expected ratio agrees with the Monte Carlo mean of Lambda_1") {
    SplitRng rng(23);
    const int reps = 3000;
    for (int pair = 0; pair < 5; ++pair) {
        const LmmParams theta0 = random_interior_theta(rng);
        LmmParams theta = theta0;
        theta.theta1 += 0.3 * rng.normal();
        theta.theta4 *= 1.0 + 0.2 * rng.uniform();
        theta.theta7 = 0.5 * theta.theta7;
        for (Subcollection which : {Subcollection::W1, Subcollection::W2}) {
            std::vector<double> per_block(reps);
            for (int r = 0; r < reps; ++r) {
                const LmmDataset data = simulate_lmm(theta0, 2, 6, 700000 + 1000 * pair + r);
                const LmmSubcollection sub = extract_subcollection(data, which);
                per_block[r] = subcollection_loglik_ratio(theta, theta0, sub, data.T);
            }
            const MeanSe mc = mean_and_se(per_block);
            const double closed = subcollection_expected_ratio(theta, theta0, which, 6);
            CHECK(std::abs(mc.mean - closed) < 3.0 * mc.se);
        }
    }
}

TEST_CASE("W2 extraction needs T >= 3") {
    LmmDataset data;
    data.N = 2;
    data.T = 2;
    data.y = Eigen::VectorXd::Zero(8);
    CHECK_NOTHROW(extract_subcollection(data, Subcollection::W1));
    CHECK_THROWS_AS(extract_subcollection(data, Subcollection::W2), ConfigError);
}

// ---------------------------------------------------------------------------
// Toy model
// ---------------------------------------------------------------------------

TEST_CASE("constant toy data recovers the constant") {
    const Eigen::MatrixXd data = Eigen::MatrixXd::Constant(5, 5, 2.5);
    CHECK(fit_toy(data) == doctest::Approx(2.5));
}

TEST_CASE("toy estimator variance matches the closed form") {
    CHECK(toy_estimator_variance(100) == doctest::Approx(0.0201));
    CHECK(std::sqrt(toy_estimator_variance(100)) == doctest::Approx(0.1418).epsilon(1e-3));

    const int N = 30, reps = 4000;
    std::vector<double> sq(reps);
    const double truth = 0.7;
    for (int r = 0; r < reps; ++r) {
        const double est = fit_toy(simulate_toy(truth, N, 321 + r));
        sq[r] = (est - truth) * (est - truth);
    }
    const MeanSe mse = mean_and_se(sq);
    CHECK(std::abs(mse.mean - toy_estimator_variance(N)) < 3.0 * mse.se);
}

TEST_CASE("toy rate: exact-formula slope of log RMSE vs log n is about -1/4") {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const int sizes[] = {16, 32, 64, 128};
    for (int N : sizes) {
        const double x = std::log(static_cast<double>(N) * N);
        const double y = 0.5 * std::log(toy_estimator_variance(N));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double n = 4.0;
    const double slope = (sxy - sx * sy / n) / (sxx - sx * sx / n);
    CHECK(slope > -0.32);
    CHECK(slope < -0.18);
}

TEST_CASE("toy score vanishes at the grand mean") {
    const Eigen::MatrixXd data = simulate_toy(1.2, 12, 5);
    const double mean = fit_toy(data);
    CHECK(std::abs(toy_score(mean, data)) < 1e-10);
    CHECK(toy_score(mean - 0.1, data) > 0.0);
    CHECK(toy_score(mean + 0.1, data) < 0.0);
}
