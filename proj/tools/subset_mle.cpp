// subset-mle: simulation, maximum-likelihood fitting and consistency
// diagnostics for the two crossed-random-effects mixed models (longitudinal
// LMM with AR(1) time dependence; bivariate logit-normal model), plus the toy
// crossed-means model.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "subsetmle/errors.hpp"
#include "subsetmle/io.hpp"
#include "subsetmle/rng.hpp"
#include "subsetmle/runner.hpp"

namespace {

using namespace subsetmle;

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitBadInput = 2;

Eigen::VectorXd parse_theta(const std::string& csv) {
    std::vector<double> values;
    std::istringstream stream(csv);
    std::string cell;
    while (std::getline(stream, cell, ',')) values.push_back(std::stod(cell));
    Eigen::VectorXd v(values.size());
    for (std::size_t k = 0; k < values.size(); ++k) v[static_cast<Eigen::Index>(k)] = values[k];
    return v;
}

std::uint64_t effective_seed(std::uint64_t seed) {
    if (const char* env = std::getenv("SUBSET_MLE_SEED")) {
        return std::strtoull(env, nullptr, 10);
    }
    return seed;
}

int cmd_simulate(const std::string& model_name_arg, int N, int T, int p, std::uint64_t seed,
                 std::uint64_t design_seed, const std::string& theta_csv,
                 const std::string& out_prefix) {
    const Model model = model_from_name(model_name_arg);
    const std::uint64_t used_seed = effective_seed(seed);
    if (model == Model::Lmm) {
        Eigen::VectorXd theta0(7);
        theta0 << 1.0, 0.5, 1.0, 0.5, 0.5, 1.0, 0.3;
        if (!theta_csv.empty()) theta0 = parse_theta(theta_csv);
        const LmmParams theta = LmmParams::from_vector(theta0);
        const LmmDataset data = simulate_lmm(theta, N, T, used_seed);
        write_dataset(out_prefix, data, theta);
    } else if (model == Model::Mglmm) {
        Eigen::VectorXd theta0(2 * p + 1);
        theta0.setZero();
        theta0[0] = 1.0;
        theta0[p - 1] = -0.5;
        theta0[p] = 0.5;
        theta0[2 * p - 1] = 1.0;
        theta0[2 * p] = 0.75;
        if (!theta_csv.empty()) theta0 = parse_theta(theta_csv);
        const MglmmParams theta = MglmmParams::from_vector(theta0);
        const MglmmDesign design = random_design(N, theta.p(), design_seed);
        const MglmmDataset data = simulate_mglmm(theta, design, used_seed);
        write_dataset(out_prefix, data, theta);
    } else {
        double theta = 1.0;
        if (!theta_csv.empty()) theta = parse_theta(theta_csv)[0];
        write_toy_dataset(out_prefix, simulate_toy(theta, N, used_seed), theta, used_seed);
    }
    std::cout << out_prefix << ".csv\n" << out_prefix << ".json\n";
    return kExitOk;
}

int cmd_fit(const std::string& data_path, int starts, std::uint64_t seed, double grad_tol,
            int is_samples, const std::string& out_path, bool verbose) {
    FitConfig cfg;
    cfg.starts = starts;
    cfg.seed = effective_seed(seed);
    cfg.grad_tol = grad_tol;
    cfg.approx.samples = is_samples;
    cfg.approx.seed = SplitRng(cfg.seed).split(1).key();

    const Model model = dataset_model(data_path);
    FitResult fit;
    if (model == Model::Lmm) {
        fit = fit_mle(read_lmm_dataset(data_path), cfg);
    } else if (model == Model::Mglmm) {
        fit = fit_mle(read_mglmm_dataset(data_path), cfg);
    } else {
        fit = fit_mle_toy(read_toy_dataset(data_path), cfg);
    }
    const std::string payload = to_json(fit, verbose).dump(2) + "\n";
    if (out_path.empty()) {
        std::cout << payload;
    } else {
        write_file(out_path, payload);
        std::cout << out_path << "\n";
    }
    return kExitOk;
}

int run_and_report(const ExperimentConfig& cfg) {
    const RunResult result = run_checks(cfg);
    write_run_outputs(result, cfg);
    for (const auto& outcome : result.outcomes) {
        std::cout << (outcome.passed ? "PASS" : "FAIL") << "  " << outcome.name << "\n";
    }
    if (!result.all_passed) {
        std::cout << "failed checks:";
        for (const auto& outcome : result.outcomes) {
            if (!outcome.passed) std::cout << " " << outcome.name;
        }
        std::cout << "\n";
    }
    return result.all_passed ? kExitOk : kExitCheckFailed;
}

int cmd_report(const std::string& dir) {
    namespace fs = std::filesystem;
    CsvTable table;
    table.header = {"check", "model", "passed"};
    std::vector<fs::path> files;
    if (!fs::is_directory(dir)) {
        std::cerr << "report: '" << dir << "' is not a directory\n";
        return kExitBadInput;
    }
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".json" &&
            entry.path().filename() != "summary.json") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    bool all_passed = true;
    for (const auto& file : files) {
        Json report;
        try {
            report = Json::parse(read_file(file));
        } catch (...) {
            continue;
        }
        if (!report.contains("check") || !report.contains("passed")) continue;
        const bool passed = report.at("passed").get<bool>();
        all_passed = all_passed && passed;
        table.rows.push_back({report.at("check").get<std::string>(),
                              report.value("model", std::string("")), passed ? "1" : "0"});
    }
    if (table.rows.empty()) {
        std::cerr << "report: no check reports found in '" << dir << "'\n";
        return kExitBadInput;
    }
    const std::string csv = to_csv(table);
    write_file(fs::path(dir) / "report.csv", csv);
    std::cout << csv;
    return all_passed ? kExitOk : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"subset-mle: mixed-model estimation and consistency diagnostics"};
    app.require_subcommand(1);

    // simulate
    auto* simulate = app.add_subcommand("simulate", "draw a dataset and write CSV + sidecar");
    std::string sim_model = "lmm", sim_theta, sim_out = "dataset";
    int sim_N = 8, sim_T = 4, sim_p = 2;
    std::uint64_t sim_seed = 1, sim_design_seed = 1863;
    simulate->add_option("--model", sim_model, "lmm | mglmm | toy")->required();
    simulate->add_option("--N", sim_N, "subjects per factor")->required();
    simulate->add_option("--T", sim_T, "time points (lmm)");
    simulate->add_option("--p", sim_p, "predictor dimension (mglmm)");
    simulate->add_option("--seed", sim_seed, "simulation seed");
    simulate->add_option("--design-seed", sim_design_seed, "predictor design seed (mglmm)");
    simulate->add_option("--theta", sim_theta, "comma-separated parameter vector");
    simulate->add_option("--out", sim_out, "output prefix");

    // fit
    auto* fit = app.add_subcommand("fit", "maximum-likelihood fit of a dataset");
    std::string fit_data, fit_out;
    int fit_starts = 8, fit_is_samples = 4096;
    std::uint64_t fit_seed = 1;
    double fit_grad_tol = 1e-6;
    bool fit_verbose = false;
    fit->add_option("--data", fit_data, "dataset CSV (sidecar JSON alongside)")->required();
    fit->add_option("--starts", fit_starts, "multistart count");
    fit->add_option("--seed", fit_seed, "optimizer seed");
    fit->add_option("--grad-tol", fit_grad_tol, "gradient tolerance");
    fit->add_option("--is-samples", fit_is_samples, "importance samples (mglmm)");
    fit->add_option("--out", fit_out, "result JSON path (stdout when omitted)");
    fit->add_flag("--verbose", fit_verbose, "include per-start records");

    // verify
    auto* verify = app.add_subcommand("verify", "run a named consistency check");
    std::string verify_check, verify_model = "lmm", verify_which, verify_subset,
                verify_config, verify_out = "out";
    std::optional<int> verify_reps;
    std::optional<double> verify_epsilon, verify_delta;
    std::optional<std::uint64_t> verify_seed;
    std::optional<int> verify_workers;
    verify->add_option("--check", verify_check, "check name")->required();
    verify->add_option("--model", verify_model, "lmm | mglmm | toy");
    verify->add_option("--which", verify_which, "subcollection W1 | W2");
    verify->add_option("--subset", verify_subset, "subset A1 | A2");
    verify->add_option("--config", verify_config, "experiment config JSON");
    verify->add_option("--out", verify_out, "output directory");
    verify->add_option("--reps", verify_reps, "replications");
    verify->add_option("--epsilon", verify_epsilon, "sphere radius");
    verify->add_option("--delta", verify_delta, "grid mesh");
    verify->add_option("--seed", verify_seed, "root seed");
    verify->add_option("--workers", verify_workers, "worker pool size (0 = hardware)");

    // run
    auto* run = app.add_subcommand("run", "run every check in an experiment config");
    std::string run_config;
    std::optional<int> run_workers;
    run->add_option("config", run_config, "experiment config JSON")->required();
    run->add_option("--workers", run_workers, "worker pool size override");

    // report
    auto* report = app.add_subcommand("report", "collate check outputs into one table");
    std::string report_dir = "out";
    report->add_option("--dir", report_dir, "directory with check reports");

    CLI11_PARSE(app, argc, argv);

    try {
        if (simulate->parsed()) {
            return cmd_simulate(sim_model, sim_N, sim_T, sim_p, sim_seed, sim_design_seed,
                                sim_theta, sim_out);
        }
        if (fit->parsed()) {
            return cmd_fit(fit_data, fit_starts, fit_seed, fit_grad_tol, fit_is_samples,
                           fit_out, fit_verbose);
        }
        if (verify->parsed()) {
            ExperimentConfig cfg;
            if (!verify_config.empty()) {
                cfg = load_experiment_config(verify_config);
            } else {
                Json defaults;
                defaults["model"] = verify_model;
                cfg = parse_experiment_config(defaults);
                cfg.seed = effective_seed(cfg.seed);
            }
            cfg.checks = {verify_check};
            if (!verify_which.empty()) cfg.which = subcollection_from_name(verify_which);
            if (!verify_subset.empty()) cfg.subset = subset_from_name(verify_subset);
            if (verify_reps) cfg.reps = *verify_reps;
            if (verify_epsilon) cfg.epsilon = *verify_epsilon;
            if (verify_delta) cfg.delta = *verify_delta;
            if (verify_seed) cfg.seed = *verify_seed;
            if (verify_workers) cfg.workers = *verify_workers;
            cfg.output_dir = verify_out;
            if (std::find(known_checks().begin(), known_checks().end(), verify_check) ==
                known_checks().end()) {
                std::cerr << "unknown check '" << verify_check << "'\n";
                return kExitBadInput;
            }
            return run_and_report(cfg);
        }
        if (run->parsed()) {
            ExperimentConfig cfg = load_experiment_config(run_config);
            if (run_workers) cfg.workers = *run_workers;
            return run_and_report(cfg);
        }
        if (report->parsed()) return cmd_report(report_dir);
    } catch (const ConfigError& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return kExitBadInput;
    } catch (const ContractError& err) {
        std::cerr << "input error: " << err.what() << "\n";
        return kExitBadInput;
    } catch (const FitError& err) {
        std::cerr << "fit failed: " << err.what() << "\n";
        return kExitCheckFailed;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitCheckFailed;
    }
    return kExitBadInput;
}
