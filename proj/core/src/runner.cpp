#include "subsetmle/runner.hpp"

#include <algorithm>
#include <cstdlib>
#include <sstream>

#include "subsetmle/errors.hpp"
#include "subsetmle/rng.hpp"

namespace subsetmle {

VerifyOptions ExperimentConfig::verify_options() const {
    VerifyOptions opts;
    opts.workers = workers;
    opts.T = T;
    opts.p = p;
    opts.is_samples = is_samples;
    opts.quad_points = quad_points;
    opts.kl_reference_N = kl_reference_N;
    opts.design_seed = design_seed;
    return opts;
}

FitConfig ExperimentConfig::fit_config() const {
    FitConfig cfg;
    cfg.starts = starts;
    cfg.grad_tol = grad_tol;
    cfg.max_iter = max_iter;
    cfg.start_dispersion = start_dispersion;
    cfg.seed = seed;
    cfg.mcml_rounds = mcml_rounds;
    cfg.approx.samples = fit_is_samples;
    return cfg;
}

const std::vector<std::string>& known_checks() {
    static const std::vector<std::string> names = {
        "dense_oracle",   "gradient_check", "toy_rate",        "subset_inequality",
        "identification_rate", "kl_sup",    "ulln",            "lipschitz_order",
        "rate_conditions", "consistency",   "unit_mean",       "sphere_growth"};
    return names;
}

namespace {

const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> keys = {
        "schema_version", "model",         "theta0",          "sizes",
        "T",              "p",             "reps",            "epsilon",
        "delta",          "zeta",          "epsilon_list",    "checks",
        "which",          "subset",        "seed",            "output_dir",
        "workers",        "is_samples",    "quad_points",     "kl_reference_N",
        "design_seed",    "tol_margin",    "grid_exponent",   "ball_points",
        "inequality_N",   "inequality_pairs", "unit_mean_thetas", "unit_mean_radius",
        "unit_mean_N",    "toy_reference_N", "growth_deltas", "starts",
        "grad_tol",       "max_iter",      "start_dispersion", "mcml_rounds",
        "fit_is_samples"};
    return keys;
}

void require_even_sizes(const ExperimentConfig& cfg) {
    if (cfg.model != Model::Lmm) return;
    for (int n : cfg.sizes) {
        if (n % 2 != 0 || n < 2) {
            throw ConfigError("sizes: LMM requires even N >= 2, got " + std::to_string(n));
        }
    }
    if (cfg.T < 4 || cfg.T % 2 != 0) {
        throw ConfigError("T: LMM requires even T >= 4, got " + std::to_string(cfg.T));
    }
    if (cfg.inequality_N % 2 != 0) {
        throw ConfigError("inequality_N: LMM requires an even value, got " +
                          std::to_string(cfg.inequality_N));
    }
    if (cfg.unit_mean_N % 2 != 0) {
        throw ConfigError("unit_mean_N: LMM requires an even value, got " +
                          std::to_string(cfg.unit_mean_N));
    }
}

}  // namespace

ExperimentConfig parse_experiment_config(const Json& json) {
    if (!json.is_object()) throw ConfigError("config: expected a JSON object");
    for (const auto& [key, value] : json.items()) {
        (void)value;
        if (std::find(known_keys().begin(), known_keys().end(), key) == known_keys().end()) {
            throw ConfigError("config: unknown key '" + key + "'");
        }
    }
    ExperimentConfig cfg;
    if (json.contains("schema_version") && json.at("schema_version").get<int>() != kSchemaVersion) {
        throw ConfigError("schema_version: expected " + std::to_string(kSchemaVersion));
    }
    if (!json.contains("model")) throw ConfigError("config: missing 'model'");
    cfg.model = model_from_name(json.at("model").get<std::string>());

    const auto get = [&json](const char* key, auto fallback) {
        using T = decltype(fallback);
        return json.contains(key) ? json.at(key).get<T>() : fallback;
    };
    cfg.T = get("T", cfg.T);
    cfg.p = get("p", cfg.p);
    cfg.reps = get("reps", cfg.reps);
    cfg.epsilon = get("epsilon", cfg.epsilon);
    cfg.delta = get("delta", cfg.delta);
    cfg.zeta = get("zeta", cfg.zeta);
    cfg.seed = get("seed", cfg.seed);
    cfg.workers = get("workers", cfg.workers);
    cfg.is_samples = get("is_samples", cfg.is_samples);
    cfg.quad_points = get("quad_points", cfg.quad_points);
    cfg.kl_reference_N = get("kl_reference_N", cfg.kl_reference_N);
    cfg.design_seed = get("design_seed", cfg.design_seed);
    cfg.tol_margin = get("tol_margin", cfg.tol_margin);
    cfg.grid_exponent = get("grid_exponent", cfg.grid_exponent);
    cfg.ball_points = get("ball_points", cfg.ball_points);
    cfg.inequality_N = get("inequality_N", cfg.inequality_N);
    cfg.unit_mean_thetas = get("unit_mean_thetas", cfg.unit_mean_thetas);
    cfg.unit_mean_radius = get("unit_mean_radius", cfg.unit_mean_radius);
    cfg.unit_mean_N = get("unit_mean_N", cfg.unit_mean_N);
    cfg.toy_reference_N = get("toy_reference_N", cfg.toy_reference_N);
    cfg.starts = get("starts", cfg.starts);
    cfg.grad_tol = get("grad_tol", cfg.grad_tol);
    cfg.max_iter = get("max_iter", cfg.max_iter);
    cfg.start_dispersion = get("start_dispersion", cfg.start_dispersion);
    cfg.mcml_rounds = get("mcml_rounds", cfg.mcml_rounds);
    cfg.fit_is_samples = get("fit_is_samples", cfg.fit_is_samples);

    if (json.contains("output_dir")) {
        cfg.output_dir = json.at("output_dir").get<std::string>();
    }
    if (json.contains("theta0")) {
        cfg.theta0 = vector_from_json(json.at("theta0"));
    } else {
        // reference parameter points
        if (cfg.model == Model::Lmm) {
            cfg.theta0.resize(7);
            cfg.theta0 << 1.0, 0.5, 1.0, 0.5, 0.5, 1.0, 0.3;
        } else if (cfg.model == Model::Mglmm) {
            cfg.theta0.resize(2 * cfg.p + 1);
            cfg.theta0.setZero();
            cfg.theta0[0] = 1.0;
            cfg.theta0[cfg.p - 1] = -0.5;
            cfg.theta0[cfg.p] = 0.5;
            cfg.theta0[2 * cfg.p - 1] = 1.0;
            cfg.theta0[2 * cfg.p] = 0.75;
        } else {
            cfg.theta0 = Eigen::VectorXd::Constant(1, 1.0);
        }
    }
    try {
        validate_interior_vector(cfg.model, cfg.theta0);
    } catch (const std::exception& err) {
        throw ConfigError(std::string("theta0: ") + err.what());
    }
    if (cfg.model == Model::Mglmm && cfg.theta0.size() != 2 * cfg.p + 1) {
        throw ConfigError("theta0: length must equal 2p+1 = " + std::to_string(2 * cfg.p + 1));
    }

    if (json.contains("sizes")) {
        cfg.sizes = json.at("sizes").get<std::vector<int>>();
    } else {
        cfg.sizes = {8, 16, 32, 64};
    }
    if (json.contains("epsilon_list")) {
        cfg.epsilon_list = json.at("epsilon_list").get<std::vector<double>>();
    }
    if (json.contains("growth_deltas")) {
        cfg.growth_deltas = json.at("growth_deltas").get<std::vector<double>>();
    }
    if (json.contains("checks")) {
        cfg.checks = json.at("checks").get<std::vector<std::string>>();
        for (const auto& name : cfg.checks) {
            if (std::find(known_checks().begin(), known_checks().end(), name) ==
                known_checks().end()) {
                throw ConfigError("checks: unknown check '" + name + "'");
            }
        }
    }
    if (json.contains("which")) {
        cfg.which = subcollection_from_name(json.at("which").get<std::string>());
    }
    if (json.contains("subset")) {
        cfg.subset = subset_from_name(json.at("subset").get<std::string>());
    }
    if (json.contains("inequality_pairs")) {
        for (const auto& pair : json.at("inequality_pairs")) {
            if (!pair.contains("theta") || !pair.contains("c")) {
                throw ConfigError("inequality_pairs: entries need 'theta' and 'c'");
            }
            cfg.inequality_pairs.emplace_back(vector_from_json(pair.at("theta")),
                                              pair.at("c").get<double>());
        }
    }
    require_even_sizes(cfg);
    if (cfg.reps < 2) throw ConfigError("reps: need at least 2 replications");
    return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    Json json;
    try {
        json = Json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& err) {
        throw ConfigError("config '" + path.string() + "': " + err.what());
    }
    ExperimentConfig cfg = parse_experiment_config(json);
    if (const char* env = std::getenv("SUBSET_MLE_SEED")) {
        cfg.seed = std::strtoull(env, nullptr, 10);
    }
    return cfg;
}

// ---------------------------------------------------------------------------

namespace {

std::string fmt(double v) { return format_double(v); }

// Default (theta, c) probes for the conditional-bound check: one coordinate
// shift per block of the parameter plus the degenerate theta0 case.
std::vector<std::pair<Eigen::VectorXd, double>> default_inequality_pairs(
    const ExperimentConfig& cfg) {
    std::vector<std::pair<Eigen::VectorXd, double>> pairs;
    const Eigen::VectorXd base = cfg.theta0;
    const auto shifted = [&base](int coord, double amount) {
        Eigen::VectorXd theta = base;
        theta[coord] += amount;
        return theta;
    };
    if (cfg.model == Model::Lmm) {
        pairs.emplace_back(shifted(0, 1.0), 1.0);
        pairs.emplace_back(shifted(1, -0.75), 2.0);
        pairs.emplace_back(shifted(2, 0.5), 1.0);
        pairs.emplace_back(shifted(5, 0.75), 0.5);
        Eigen::VectorXd mixed = shifted(0, 0.5);
        mixed[6] = 0.6;
        pairs.emplace_back(mixed, 1.0);
        pairs.emplace_back(base, 1.0);
    } else {
        const int p = cfg.p;
        pairs.emplace_back(shifted(0, 0.75), 1.0);
        pairs.emplace_back(shifted(p - 1, -0.5), 2.0);
        pairs.emplace_back(shifted(p, 0.75), 1.0);
        pairs.emplace_back(shifted(2 * p, 0.5), 0.5);
        Eigen::VectorXd mixed = shifted(0, 0.4);
        mixed[p] -= 0.4;
        pairs.emplace_back(mixed, 1.0);
        pairs.emplace_back(base, 1.0);
    }
    return pairs;
}

struct CheckRunner {
    const ExperimentConfig& cfg;
    VerifyOptions opts;
    // caches for rate_conditions
    std::map<std::string, IdentificationReport> ident_cache;
    std::map<std::string, LipschitzReport> lipschitz_cache;
    std::map<std::string, SphereGrid> grid_cache;

    explicit CheckRunner(const ExperimentConfig& config)
        : cfg(config), opts(config.verify_options()) {}

    const SphereGrid& grid(double epsilon, double delta) {
        const std::string key = fmt(epsilon) + "/" + fmt(delta);
        auto it = grid_cache.find(key);
        if (it == grid_cache.end()) {
            it = grid_cache.emplace(key, sphere_grid(cfg.model, cfg.theta0, epsilon, delta))
                     .first;
        }
        return it->second;
    }

    std::vector<std::pair<Subcollection, SubsetKind>> subcollection_pairs() const {
        if (cfg.which) {
            const SubsetKind kind = cfg.subset ? *cfg.subset
                                    : (*cfg.which == Subcollection::W1 ? SubsetKind::A1
                                                                       : SubsetKind::A2);
            return {{*cfg.which, kind}};
        }
        return {{Subcollection::W1, SubsetKind::A1}, {Subcollection::W2, SubsetKind::A2}};
    }

    CheckOutcome run(const std::string& name);
};

CheckOutcome CheckRunner::run(const std::string& name) {
    CheckOutcome outcome;
    outcome.name = name;
    outcome.rows.header = {"check", "model", "which", "subset", "size", "metric", "value",
                           "se",    "passed"};
    const std::string model = model_name(cfg.model);
    const auto add_row = [&](const std::string& which, const std::string& subset,
                             const std::string& size, const std::string& metric, double value,
                             double se, bool passed) {
        outcome.rows.rows.push_back({name, model, which, subset, size, metric, fmt(value),
                                     fmt(se), passed ? "1" : "0"});
    };

    if (name == "dense_oracle") {
        const auto report = dense_oracle_check(
            cfg.model == Model::Lmm ? cfg.theta0 : parse_experiment_config(Json{{"model", "lmm"}}).theta0,
            cfg.seed, opts);
        outcome.passed = report.passed;
        outcome.report = to_json(report);
        add_row("", "", "", "max_rel_err", report.max_rel_err, 0.0, report.passed);
    } else if (name == "gradient_check") {
        const ExperimentConfig lmm_defaults = parse_experiment_config(Json{{"model", "lmm"}});
        const ExperimentConfig mglmm_defaults =
            parse_experiment_config(Json{{"model", "mglmm"}});
        const Eigen::VectorXd lmm_theta =
            cfg.model == Model::Lmm ? cfg.theta0 : lmm_defaults.theta0;
        const Eigen::VectorXd mglmm_theta =
            cfg.model == Model::Mglmm ? cfg.theta0 : mglmm_defaults.theta0;
        const auto report =
            gradient_check_report(lmm_theta, mglmm_theta, 20, 3, cfg.seed, opts);
        outcome.passed = report.passed;
        outcome.report = to_json(report);
        add_row("", "", "", "lmm_worst_rel_err", report.lmm_worst, 0.0,
                report.lmm_worst <= 1e-5);
        add_row("", "", "", "mglmm_worst_rel_err", report.mglmm_worst, 0.0,
                report.mglmm_worst <= 1e-4);
    } else if (name == "toy_rate") {
        const double theta = cfg.model == Model::Toy ? cfg.theta0[0] : 1.0;
        const auto report = toy_rate_check(theta, cfg.sizes, cfg.reps, cfg.seed, opts);
        outcome.passed = report.passed;
        outcome.report = to_json(report);
        for (std::size_t k = 0; k < report.sizes.size(); ++k) {
            add_row("", "", std::to_string(report.sizes[k]), "rmse", report.rmse[k],
                    report.rmse_se[k], true);
        }
        add_row("", "", "", "slope", report.fit.slope, report.fit.slope_se, report.passed);
        add_row("", "", std::to_string(report.reference_size), "reference_rmse",
                report.reference_rmse, report.reference_rmse_se, report.passed);
    } else if (name == "subset_inequality") {
        auto pairs = cfg.inequality_pairs.empty() ? default_inequality_pairs(cfg)
                                                  : cfg.inequality_pairs;
        outcome.passed = true;
        Json entries = Json::array();
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            const auto report =
                subset_inequality_check(cfg.model, pairs[k].first, cfg.theta0, pairs[k].second,
                                        cfg.inequality_N, cfg.reps,
                                        SplitRng(cfg.seed).split(k).key(), opts);
            outcome.passed = outcome.passed && report.passed;
            Json entry = to_json(report);
            entry["theta"] = vector_to_json(pairs[k].first);
            entries.push_back(std::move(entry));
            add_row("", "", std::to_string(cfg.inequality_N),
                    "lhs_minus_rhs_w1(c=" + fmt(pairs[k].second) + ")",
                    report.lhs - report.rhs_w1, report.rhs_w1_se, report.passed);
        }
        outcome.report = Json{{"pairs", std::move(entries)}, {"passed", outcome.passed}};
    } else if (name == "identification_rate") {
        outcome.passed = true;
        Json entries = Json::object();
        for (const auto& [which, kind] : subcollection_pairs()) {
            const SubsetSpec spec{cfg.model, kind, cfg.epsilon, cfg.zeta};
            const auto report =
                identification_rate(cfg.model, which, spec, grid(cfg.epsilon, cfg.delta),
                                    cfg.sizes, cfg.reps, cfg.seed, opts);
            ident_cache.emplace(subcollection_name(which), report);
            outcome.passed = outcome.passed && report.passed;
            entries[subcollection_name(which)] = to_json(report);
            for (std::size_t k = 0; k < report.sizes.size(); ++k) {
                add_row(subcollection_name(which), subset_name(kind),
                        std::to_string(report.sizes[k]), "sup_lambda_mean",
                        report.sup_mean[k], report.sup_se[k], report.passed);
            }
            add_row(subcollection_name(which), subset_name(kind), "", "slope",
                    report.fit.slope, report.fit.slope_se, report.passed);
        }
        entries["passed"] = outcome.passed;
        outcome.report = std::move(entries);
    } else if (name == "kl_sup") {
        outcome.passed = true;
        Json entries = Json::object();
        const double mesh_ratio = cfg.delta / cfg.epsilon;
        for (double eps : cfg.epsilon_list) {
            const std::vector<double> zetas =
                cfg.model == Model::Mglmm ? std::vector<double>{eps / 8.0, eps / 4.0}
                                          : std::vector<double>{0.0};
            for (const auto& [which, kind] : subcollection_pairs()) {
                for (double zeta : zetas) {
                    const SubsetSpec spec{cfg.model, kind, eps, zeta};
                    const auto report = kl_sup_check(cfg.model, spec,
                                                     grid(eps, eps * mesh_ratio), opts,
                                                     cfg.tol_margin);
                    outcome.passed = outcome.passed && report.passed;
                    std::string label = subset_name(kind) + "/eps=" + fmt(eps);
                    if (cfg.model == Model::Mglmm) label += "/zeta=" + fmt(zeta);
                    entries[label] = to_json(report);
                    add_row(subcollection_name(which), label, "", "sup_normalized_E_lambda",
                            report.sup, 0.0, report.passed);
                }
            }
        }
        entries["passed"] = outcome.passed;
        outcome.report = std::move(entries);
    } else if (name == "ulln") {
        outcome.passed = true;
        Json entries = Json::object();
        for (const auto& [which, kind] : subcollection_pairs()) {
            const SubsetSpec spec{cfg.model, kind, cfg.epsilon, cfg.zeta};
            const auto report = ulln_check(cfg.model, which, spec, grid(cfg.epsilon, cfg.delta),
                                           cfg.sizes, cfg.reps, cfg.seed, opts);
            outcome.passed = outcome.passed && report.passed;
            entries[subcollection_name(which)] = to_json(report);
            for (std::size_t k = 0; k < report.sizes.size(); ++k) {
                add_row(subcollection_name(which), subset_name(kind),
                        std::to_string(report.sizes[k]), "sup_deviation", report.sup_mean[k],
                        report.sup_se[k], report.passed);
            }
        }
        entries["passed"] = outcome.passed;
        outcome.report = std::move(entries);
    } else if (name == "lipschitz_order") {
        const auto report = lipschitz_order(cfg.model, cfg.theta0, cfg.epsilon, cfg.sizes,
                                            cfg.reps, cfg.ball_points, cfg.seed, opts);
        lipschitz_cache.emplace("", report);
        outcome.passed = report.passed;
        outcome.report = to_json(report);
        for (std::size_t k = 0; k < report.sizes.size(); ++k) {
            add_row("", "", std::to_string(report.sizes[k]), "sup_grad_median",
                    report.sup_median[k], report.sup_se[k], report.passed);
        }
        add_row("", "", "", "b_hat", report.b_hat, report.fit.slope_se, report.passed);
    } else if (name == "rate_conditions") {
        if (lipschitz_cache.empty()) run("lipschitz_order");
        if (ident_cache.empty()) run("identification_rate");
        const double grid_exponent =
            cfg.grid_exponent > 0.0 ? cfg.grid_exponent : static_cast<double>(cfg.dim() - 1);
        outcome.passed = true;
        Json entries = Json::object();
        const auto& lipschitz = lipschitz_cache.begin()->second;
        for (const auto& [label, ident] : ident_cache) {
            const auto report =
                rate_condition_check(cfg.model, lipschitz, ident, grid_exponent, opts);
            outcome.passed = outcome.passed && report.passed;
            entries[label] = to_json(report);
            add_row(label, "", "", "condition1", report.condition1 ? 1.0 : 0.0, 0.0,
                    report.condition1);
            add_row(label, "", "", "condition2", report.condition2 ? 1.0 : 0.0, 0.0,
                    report.condition2);
        }
        entries["passed"] = outcome.passed;
        outcome.report = std::move(entries);
    } else if (name == "consistency") {
        const auto report = consistency_experiment(cfg.model, cfg.theta0, cfg.sizes, cfg.reps,
                                                   cfg.epsilon_list, cfg.fit_config(), cfg.seed,
                                                   opts);
        outcome.passed = report.passed;
        outcome.report = to_json(report);
        for (const auto& size : report.per_size) {
            add_row("", "", std::to_string(size.size), "median_error", size.median_error,
                    size.median_error_se, report.median_trend.passed);
            for (std::size_t e = 0; e < cfg.epsilon_list.size(); ++e) {
                add_row("", "", std::to_string(size.size),
                        "coverage(eps=" + fmt(cfg.epsilon_list[e]) + ")", size.coverage[e],
                        0.0, report.coverage_trends[e].passed);
            }
        }
    } else if (name == "unit_mean") {
        const auto report =
            unit_mean_check(cfg.model, cfg.theta0, cfg.unit_mean_radius, cfg.unit_mean_thetas,
                            cfg.unit_mean_N, cfg.reps, cfg.seed, opts);
        outcome.passed = report.passed;
        outcome.report = to_json(report);
        for (std::size_t k = 0; k < report.entries.size(); ++k) {
            add_row(report.entries[k].subcollection, "", std::to_string(cfg.unit_mean_N),
                    "mean_L(theta_" + std::to_string(k / 2) + ")", report.entries[k].mean,
                    report.entries[k].se, report.entries[k].passed);
        }
    } else if (name == "sphere_growth") {
        const std::vector<double> deltas =
            cfg.growth_deltas.empty()
                ? std::vector<double>{0.6 * cfg.epsilon, 0.4 * cfg.epsilon, 0.3 * cfg.epsilon,
                                      0.22 * cfg.epsilon}
                : cfg.growth_deltas;
        const auto report = sphere_growth_check(cfg.model, cfg.theta0, cfg.epsilon, deltas);
        outcome.passed = report.passed;
        outcome.report = to_json(report);
        add_row("", "", "", "growth_exponent", report.exponent, 0.0, report.passed);
    } else {
        throw ConfigError("unknown check '" + name + "'");
    }
    return outcome;
}

}  // namespace

RunResult run_checks(const ExperimentConfig& cfg) {
    if (cfg.checks.empty()) throw ConfigError("config: 'checks' is empty");
    RunResult result;
    CheckRunner runner(cfg);
    for (const auto& name : cfg.checks) {
        CheckOutcome outcome = runner.run(name);
        result.all_passed = result.all_passed && outcome.passed;
        result.outcomes.push_back(std::move(outcome));
    }
    Json summary;
    summary["schema_version"] = kSchemaVersion;
    summary["model"] = model_name(cfg.model);
    summary["seed"] = cfg.seed;
    Json checks = Json::array();
    for (const auto& outcome : result.outcomes) {
        checks.push_back(Json{{"check", outcome.name}, {"passed", outcome.passed}});
    }
    summary["checks"] = std::move(checks);
    summary["all_passed"] = result.all_passed;
    result.summary = std::move(summary);
    return result;
}

void write_run_outputs(const RunResult& result, const ExperimentConfig& cfg) {
    const std::string model = model_name(cfg.model);
    CsvTable combined;
    for (const auto& outcome : result.outcomes) {
        Json report;
        report["schema_version"] = kSchemaVersion;
        report["check"] = outcome.name;
        report["model"] = model;
        report["seed"] = cfg.seed;
        report["passed"] = outcome.passed;
        report["result"] = outcome.report;
        write_file(cfg.output_dir / (outcome.name + "_" + model + ".json"),
                   report.dump(2) + "\n");
        if (combined.header.empty()) combined.header = outcome.rows.header;
        for (const auto& row : outcome.rows.rows) combined.rows.push_back(row);
    }
    write_file(cfg.output_dir / ("tables_" + model + ".csv"), to_csv(combined));
    write_file(cfg.output_dir / "summary.json", result.summary.dump(2) + "\n");

    CsvTable summary_table;
    summary_table.header = {"check", "model", "passed"};
    for (const auto& outcome : result.outcomes) {
        summary_table.rows.push_back({outcome.name, model, outcome.passed ? "1" : "0"});
    }
    write_file(cfg.output_dir / "summary.csv", to_csv(summary_table));
}

}  // namespace subsetmle
