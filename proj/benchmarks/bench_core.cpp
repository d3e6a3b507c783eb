#include <benchmark/benchmark.h>

#include <Eigen/Dense>

#include "subsetmle/estimation.hpp"
#include "subsetmle/lmm.hpp"
#include "subsetmle/mglmm.hpp"
#include "subsetmle/sphere.hpp"

using namespace subsetmle;

namespace {

LmmParams lmm_theta() {
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

MglmmParams mglmm_theta() {
    MglmmParams theta;
    theta.beta1 = Eigen::Vector2d(1.0, -0.5);
    theta.beta2 = Eigen::Vector2d(0.5, 1.0);
    theta.theta_d = 0.75;
    return theta;
}

void StructuredLoglik(benchmark::State& state) {
    const int N = static_cast<int>(state.range(0));
    const LmmDataset data = simulate_lmm(lmm_theta(), N, 4, 7);
    for (auto _ : state) {
        benchmark::DoNotOptimize(lmm_loglik(lmm_theta(), data));
    }
    state.SetComplexityN(data.n());
}
BENCHMARK(StructuredLoglik)->RangeMultiplier(2)->Range(4, 64)->Complexity();

void DenseLoglik(benchmark::State& state) {
    const int N = static_cast<int>(state.range(0));
    const LmmDataset data = simulate_lmm(lmm_theta(), N, 4, 7);
    Eigen::VectorXd residual = data.y;
    for (int t = 0; t < data.T; ++t) {
        const double mean = lmm_mean_at(lmm_theta(), data.T, t);
        for (int i = 0; i < N; ++i) {
            for (int j = 0; j < N; ++j) residual[data.index(i, j, t)] -= mean;
        }
    }
    const Eigen::MatrixXd cov = build_lmm_covariance(lmm_theta(), N, data.T).dense();
    for (auto _ : state) {
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        benchmark::DoNotOptimize(residual.dot(llt.solve(residual)));
    }
    state.SetComplexityN(data.n());
}
BENCHMARK(DenseLoglik)->RangeMultiplier(2)->Range(4, 16)->Complexity();

void LmmScore(benchmark::State& state) {
    const int N = static_cast<int>(state.range(0));
    const LmmDataset data = simulate_lmm(lmm_theta(), N, 4, 7);
    for (auto _ : state) {
        benchmark::DoNotOptimize(lmm_score(lmm_theta(), data));
    }
}
BENCHMARK(LmmScore)->RangeMultiplier(2)->Range(4, 64);

void ImportanceLoglik(benchmark::State& state) {
    const int N = static_cast<int>(state.range(0));
    const MglmmDesign design = random_design(N, 2, 3);
    const MglmmDataset data = simulate_mglmm(mglmm_theta(), design, 5);
    ApproxConfig cfg;
    cfg.samples = 1024;
    cfg.seed = 11;
    for (auto _ : state) {
        benchmark::DoNotOptimize(full_loglik_mglmm(mglmm_theta(), data, cfg).estimate);
    }
}
BENCHMARK(ImportanceLoglik)->DenseRange(2, 8, 2);

void MarginalSuccessProb(benchmark::State& state) {
    double eta = -3.0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(marginal_success_prob(eta, 0.75, 64));
        eta = eta < 3.0 ? eta + 0.1 : -3.0;
    }
}
BENCHMARK(MarginalSuccessProb);

void SphereGridBuild(benchmark::State& state) {
    Eigen::VectorXd theta0 = lmm_theta().to_vector();
    const double delta = 0.5 / static_cast<double>(state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(sphere_grid(Model::Lmm, theta0, 0.5, delta).size());
    }
}
BENCHMARK(SphereGridBuild)->Arg(1)->Arg(2);

void LmmFit(benchmark::State& state) {
    const LmmDataset data = simulate_lmm(lmm_theta(), static_cast<int>(state.range(0)), 4, 9);
    FitConfig cfg;
    cfg.starts = 2;
    cfg.seed = 13;
    for (auto _ : state) {
        benchmark::DoNotOptimize(fit_mle(data, cfg).loglik);
    }
}
BENCHMARK(LmmFit)->Arg(4)->Arg(8);

}  // namespace

BENCHMARK_MAIN();
