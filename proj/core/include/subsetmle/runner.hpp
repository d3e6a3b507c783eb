#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "subsetmle/io.hpp"
#include "subsetmle/verify.hpp"

namespace subsetmle {

/**
 * One flat JSON config per experiment. Unknown keys are rejected; the seed
 * can be overridden by the SUBSET_MLE_SEED environment variable. Reference
 * configs for all acceptance checks live under configs/ in the repository.
 */
struct ExperimentConfig {
    Model model = Model::Lmm;
    Eigen::VectorXd theta0;
    std::vector<int> sizes;
    int T = 4;
    int p = 2;
    int reps = 100;
    double epsilon = 0.5;
    double delta = 0.25;
    double zeta = 0.0;  // 0 -> epsilon/4
    std::vector<double> epsilon_list = {0.25, 0.5};
    std::vector<std::string> checks;
    std::optional<Subcollection> which;
    std::optional<SubsetKind> subset;
    std::uint64_t seed = 20240817;
    std::filesystem::path output_dir = "out";
    int workers = 0;

    // verification knobs
    int is_samples = 1024;
    int quad_points = 64;
    int kl_reference_N = 32;
    std::uint64_t design_seed = 1863;
    double tol_margin = 1e-6;
    double grid_exponent = 0.0;  // 0 -> d-1
    int ball_points = 200;
    int inequality_N = 4;
    std::vector<std::pair<Eigen::VectorXd, double>> inequality_pairs;  // (theta, c)
    int unit_mean_thetas = 3;
    double unit_mean_radius = 0.2;
    int unit_mean_N = 4;
    int toy_reference_N = 100;
    std::vector<double> growth_deltas;

    // fitting knobs
    int starts = 8;
    double grad_tol = 1e-6;
    int max_iter = 200;
    double start_dispersion = 0.5;
    int mcml_rounds = 4;
    int fit_is_samples = 4096;

    [[nodiscard]] VerifyOptions verify_options() const;
    [[nodiscard]] FitConfig fit_config() const;
    [[nodiscard]] int dim() const { return static_cast<int>(theta0.size()); }
};

/// Strict parse; throws ConfigError naming the offending field.
ExperimentConfig parse_experiment_config(const Json& json);

/// Parse from file and apply the SUBSET_MLE_SEED override if present.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Names understood in ExperimentConfig::checks.
const std::vector<std::string>& known_checks();

struct CheckOutcome {
    std::string name;
    bool passed = false;
    Json report;    // full machine-readable result
    CsvTable rows;  // one row per (size, metric)
};

struct RunResult {
    std::vector<CheckOutcome> outcomes;
    bool all_passed = true;
    Json summary;
};

/// Execute the configured checks in order. Results of prerequisite checks
/// (identification_rate, lipschitz_order) are cached and reused by
/// rate_conditions within the same run.
RunResult run_checks(const ExperimentConfig& cfg);

/// Write per-check JSON, the combined CSV table and summary.{json,csv} under
/// cfg.output_dir. Outputs are byte-stable given (config, seed).
void write_run_outputs(const RunResult& result, const ExperimentConfig& cfg);

}  // namespace subsetmle
