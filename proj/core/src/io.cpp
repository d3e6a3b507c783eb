#include "subsetmle/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "subsetmle/errors.hpp"

namespace subsetmle {

std::string format_double(double value) {
    char buffer[32];
    const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
    return std::string(buffer, result.ptr);
}

namespace {

std::string csv_cell(const std::string& raw) {
    if (raw.find_first_of(",\"\r\n") == std::string::npos) return raw;
    std::string quoted = "\"";
    for (char c : raw) {
        if (c == '"') quoted += '"';
        quoted += c;
    }
    quoted += '"';
    return quoted;
}

}  // namespace

std::string to_csv(const CsvTable& table) {
    std::string out;
    const auto append_row = [&out](const std::vector<std::string>& row) {
        for (std::size_t k = 0; k < row.size(); ++k) {
            if (k > 0) out += ',';
            out += csv_cell(row[k]);
        }
        out += "\r\n";
    };
    append_row(table.header);
    for (const auto& row : table.rows) append_row(row);
    return out;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream stream(path, std::ios::binary);
    if (!stream) throw ConfigError("cannot open '" + path.string() + "' for writing");
    stream << content;
    if (!stream) throw ConfigError("failed writing '" + path.string() + "'");
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream stream(path, std::ios::binary);
    if (!stream) throw ConfigError("cannot open '" + path.string() + "'");
    std::ostringstream buffer;
    buffer << stream.rdbuf();
    return buffer.str();
}

Json vector_to_json(const Eigen::VectorXd& v) {
    Json out = Json::array();
    for (Eigen::Index k = 0; k < v.size(); ++k) out.push_back(v[k]);
    return out;
}

Eigen::VectorXd vector_from_json(const Json& j) {
    if (!j.is_array()) throw ConfigError("expected a JSON array of numbers");
    Eigen::VectorXd v(j.size());
    for (std::size_t k = 0; k < j.size(); ++k) v[static_cast<Eigen::Index>(k)] = j[k].get<double>();
    return v;
}

// --- datasets ---------------------------------------------------------------

namespace {

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    std::filesystem::path p = path;
    if (p.extension() == ".csv" || p.extension() == ".json") p.replace_extension();
    p += ".json";
    return p;
}

std::filesystem::path csv_path(const std::filesystem::path& path) {
    std::filesystem::path p = path;
    if (p.extension() == ".csv" || p.extension() == ".json") p.replace_extension();
    p += ".csv";
    return p;
}

Json load_sidecar(const std::filesystem::path& path) {
    const Json sidecar = Json::parse(read_file(sidecar_path(path)));
    if (!sidecar.contains("schema_version") || !sidecar.contains("model")) {
        throw ConfigError("dataset sidecar '" + sidecar_path(path).string() +
                          "' lacks schema_version/model");
    }
    return sidecar;
}

std::vector<std::vector<double>> parse_csv_numbers(const std::string& text,
                                                   std::size_t columns) {
    std::vector<std::vector<double>> rows;
    std::istringstream stream(text);
    std::string line;
    bool first = true;
    while (std::getline(stream, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (first) {  // header
            first = false;
            continue;
        }
        std::vector<double> row;
        std::istringstream cells(line);
        std::string cell;
        while (std::getline(cells, cell, ',')) row.push_back(std::stod(cell));
        if (row.size() != columns) {
            throw ConfigError("dataset row has " + std::to_string(row.size()) +
                              " columns, expected " + std::to_string(columns));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

void write_dataset(const std::filesystem::path& prefix, const LmmDataset& data,
                   const LmmParams& theta) {
    CsvTable table;
    table.header = {"i", "j", "t", "y"};
    table.rows.reserve(data.n());
    for (int i = 0; i < data.N; ++i) {
        for (int j = 0; j < data.N; ++j) {
            for (int t = 0; t < data.T; ++t) {
                table.rows.push_back({std::to_string(i + 1), std::to_string(j + 1),
                                      std::to_string(t + 1),
                                      format_double(data.at(i, j, t))});
            }
        }
    }
    write_file(csv_path(prefix), to_csv(table));

    Json sidecar;
    sidecar["schema_version"] = kSchemaVersion;
    sidecar["model"] = "lmm";
    sidecar["N"] = data.N;
    sidecar["T"] = data.T;
    sidecar["seed"] = data.seed;
    sidecar["theta"] = vector_to_json(theta.to_vector());
    write_file(sidecar_path(prefix), sidecar.dump(2) + "\n");
}

void write_dataset(const std::filesystem::path& prefix, const MglmmDataset& data,
                   const MglmmParams& theta) {
    CsvTable table;
    table.header = {"i", "j", "y1", "y2"};
    const int N = data.N();
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < N; ++j) {
            table.rows.push_back({std::to_string(i + 1), std::to_string(j + 1),
                                  format_double(data.y1(i, j)),
                                  format_double(data.y2(i, j))});
        }
    }
    write_file(csv_path(prefix), to_csv(table));

    Json sidecar;
    sidecar["schema_version"] = kSchemaVersion;
    sidecar["model"] = "mglmm";
    sidecar["N"] = N;
    sidecar["p"] = data.design.p;
    sidecar["seed"] = data.seed;
    sidecar["theta"] = vector_to_json(theta.to_vector());
    Json x = Json::array();  // row index i*N + j
    for (Eigen::Index r = 0; r < data.design.x.rows(); ++r) {
        x.push_back(vector_to_json(data.design.x.row(r).transpose()));
    }
    sidecar["x"] = std::move(x);
    write_file(sidecar_path(prefix), sidecar.dump(2) + "\n");
}

void write_toy_dataset(const std::filesystem::path& prefix, const Eigen::MatrixXd& data,
                       double theta, std::uint64_t seed) {
    CsvTable table;
    table.header = {"i", "j", "y"};
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
        for (Eigen::Index j = 0; j < data.cols(); ++j) {
            table.rows.push_back({std::to_string(i + 1), std::to_string(j + 1),
                                  format_double(data(i, j))});
        }
    }
    write_file(csv_path(prefix), to_csv(table));

    Json sidecar;
    sidecar["schema_version"] = kSchemaVersion;
    sidecar["model"] = "toy";
    sidecar["N"] = static_cast<int>(data.rows());
    sidecar["seed"] = seed;
    sidecar["theta"] = Json::array({theta});
    write_file(sidecar_path(prefix), sidecar.dump(2) + "\n");
}

Model dataset_model(const std::filesystem::path& path) {
    return model_from_name(load_sidecar(path).at("model").get<std::string>());
}

LmmDataset read_lmm_dataset(const std::filesystem::path& path) {
    const Json sidecar = load_sidecar(path);
    if (sidecar.at("model") != "lmm") throw ConfigError("dataset is not an lmm dataset");
    LmmDataset data;
    data.N = sidecar.at("N").get<int>();
    data.T = sidecar.at("T").get<int>();
    data.seed = sidecar.at("seed").get<std::uint64_t>();
    data.y.resize(data.n());
    const auto rows = parse_csv_numbers(read_file(csv_path(path)), 4);
    if (rows.size() != static_cast<std::size_t>(data.n())) {
        throw ConfigError("lmm dataset has " + std::to_string(rows.size()) + " rows, expected " +
                          std::to_string(data.n()));
    }
    for (const auto& row : rows) {
        const int i = static_cast<int>(row[0]) - 1;
        const int j = static_cast<int>(row[1]) - 1;
        const int t = static_cast<int>(row[2]) - 1;
        data.y[data.index(i, j, t)] = row[3];
    }
    return data;
}

MglmmDataset read_mglmm_dataset(const std::filesystem::path& path) {
    const Json sidecar = load_sidecar(path);
    if (sidecar.at("model") != "mglmm") throw ConfigError("dataset is not an mglmm dataset");
    MglmmDataset data;
    data.design.N = sidecar.at("N").get<int>();
    data.design.p = sidecar.at("p").get<int>();
    data.seed = sidecar.at("seed").get<std::uint64_t>();
    const Json& x = sidecar.at("x");
    data.design.x.resize(static_cast<Eigen::Index>(data.design.N) * data.design.N,
                         data.design.p);
    if (x.size() != static_cast<std::size_t>(data.design.x.rows())) {
        throw ConfigError("mglmm sidecar x has wrong row count");
    }
    for (std::size_t r = 0; r < x.size(); ++r) {
        data.design.x.row(static_cast<Eigen::Index>(r)) =
            vector_from_json(x[r]).transpose();
    }
    const int N = data.design.N;
    data.y1.resize(N, N);
    data.y2.resize(N, N);
    const auto rows = parse_csv_numbers(read_file(csv_path(path)), 4);
    if (rows.size() != static_cast<std::size_t>(N) * N) {
        throw ConfigError("mglmm dataset has wrong row count");
    }
    for (const auto& row : rows) {
        const int i = static_cast<int>(row[0]) - 1;
        const int j = static_cast<int>(row[1]) - 1;
        data.y1(i, j) = row[2];
        data.y2(i, j) = row[3];
    }
    return data;
}

Eigen::MatrixXd read_toy_dataset(const std::filesystem::path& path) {
    const Json sidecar = load_sidecar(path);
    if (sidecar.at("model") != "toy") throw ConfigError("dataset is not a toy dataset");
    const int N = sidecar.at("N").get<int>();
    Eigen::MatrixXd data(N, N);
    const auto rows = parse_csv_numbers(read_file(csv_path(path)), 3);
    if (rows.size() != static_cast<std::size_t>(N) * N) {
        throw ConfigError("toy dataset has wrong row count");
    }
    for (const auto& row : rows) {
        data(static_cast<int>(row[0]) - 1, static_cast<int>(row[1]) - 1) = row[2];
    }
    return data;
}

// --- reports ----------------------------------------------------------------

Json to_json(const RateFit& fit) {
    Json j;
    j["x_axis"] = fit.x_axis;
    j["y_axis"] = fit.y_axis;
    j["xs"] = fit.xs;
    j["ys"] = fit.ys;
    j["y_se"] = fit.y_se;
    j["slope"] = fit.slope;
    j["intercept"] = fit.intercept;
    j["slope_se"] = fit.slope_se;
    j["slope_ci"] = Json::array({fit.slope_lo, fit.slope_hi});
    return j;
}

Json to_json(const TrendCheck& trend) {
    Json j;
    j["passed"] = trend.passed;
    j["inversions"] = trend.inversions;
    j["detail"] = trend.detail;
    return j;
}

Json to_json(const SubsetInequalityReport& report) {
    Json j;
    j["c"] = report.c;
    j["reps"] = report.reps;
    j["lhs"] = report.lhs;
    j["lhs_se"] = report.lhs_se;
    j["rhs_w1"] = report.rhs_w1;
    j["rhs_w1_se"] = report.rhs_w1_se;
    j["rhs_w2"] = report.rhs_w2;
    j["rhs_w2_se"] = report.rhs_w2_se;
    j["ambiguous_fraction"] = report.ambiguous_fraction;
    j["passed"] = report.passed;
    return j;
}

Json to_json(const IdentificationReport& report) {
    Json j;
    j["sizes"] = report.sizes;
    j["m"] = report.ms;
    j["sup_mean"] = report.sup_mean;
    j["sup_se"] = report.sup_se;
    j["fit"] = to_json(report.fit);
    j["grid_points_used"] = report.grid_points_used;
    j["passed"] = report.passed;
    return j;
}

Json to_json(const KlSupReport& report) {
    Json j;
    j["sup"] = report.sup;
    j["argmax"] = vector_to_json(report.argmax);
    j["tol_margin"] = report.tol_margin;
    j["grid_points_used"] = report.grid_points_used;
    j["passed"] = report.passed;
    return j;
}

Json to_json(const UllnReport& report) {
    Json j;
    j["sizes"] = report.sizes;
    j["sup_mean"] = report.sup_mean;
    j["sup_se"] = report.sup_se;
    j["fit"] = to_json(report.fit);
    j["trend"] = to_json(report.trend);
    j["passed"] = report.passed;
    return j;
}

Json to_json(const LipschitzReport& report) {
    Json j;
    j["sizes"] = report.sizes;
    j["n"] = report.ns;
    j["sup_median"] = report.sup_median;
    j["sup_se"] = report.sup_se;
    j["center_norm_median"] = report.center_norm_median;
    j["fit"] = to_json(report.fit);
    j["b_hat"] = report.b_hat;
    j["b_bound"] = report.b_bound;
    j["center_norm_growing"] = report.center_norm_growing;
    j["passed"] = report.passed;
    return j;
}

Json to_json(const RateConditionReport& report) {
    Json j;
    j["b_hat"] = report.b_hat;
    j["b_used"] = report.b_used;
    j["ident_slope"] = report.ident_slope;
    j["ident_slope_hi"] = report.ident_slope_hi;
    j["grid_exponent"] = report.grid_exponent;
    j["condition1"] = report.condition1;
    j["condition2"] = report.condition2;
    j["explanation"] = report.explanation;
    j["n"] = report.ns;
    j["log_mn_an"] = report.log_mn_an;
    j["passed"] = report.passed;
    return j;
}

Json to_json(const ConsistencyReport& report) {
    Json j;
    j["epsilon_list"] = report.epsilon_list;
    Json sizes = Json::array();
    for (const auto& s : report.per_size) {
        Json row;
        row["size"] = s.size;
        row["median_error"] = s.median_error;
        row["median_error_se"] = s.median_error_se;
        row["rmse"] = vector_to_json(s.rmse);
        row["coverage"] = s.coverage;
        row["failures"] = s.failures;
        sizes.push_back(std::move(row));
    }
    j["per_size"] = std::move(sizes);
    j["median_trend"] = to_json(report.median_trend);
    Json trends = Json::array();
    for (const auto& t : report.coverage_trends) trends.push_back(to_json(t));
    j["coverage_trends"] = std::move(trends);
    j["passed"] = report.passed;
    return j;
}

Json to_json(const UnitMeanReport& report) {
    Json j;
    Json entries = Json::array();
    for (const auto& e : report.entries) {
        Json row;
        row["theta"] = vector_to_json(e.theta);
        row["subcollection"] = e.subcollection;
        row["mean"] = e.mean;
        row["se"] = e.se;
        row["passed"] = e.passed;
        entries.push_back(std::move(row));
    }
    j["entries"] = std::move(entries);
    j["passed"] = report.passed;
    return j;
}

Json to_json(const ToyRateReport& report) {
    Json j;
    j["sizes"] = report.sizes;
    j["rmse"] = report.rmse;
    j["rmse_se"] = report.rmse_se;
    j["fit"] = to_json(report.fit);
    j["slope_bounds"] = Json::array({report.slope_lo_bound, report.slope_hi_bound});
    j["reference_size"] = report.reference_size;
    j["reference_rmse"] = report.reference_rmse;
    j["reference_rmse_se"] = report.reference_rmse_se;
    j["reference_exact"] = report.reference_exact;
    j["passed"] = report.passed;
    return j;
}

Json to_json(const DenseOracleReport& report) {
    Json j;
    j["max_rel_err"] = report.max_rel_err;
    j["cases"] = report.cases;
    j["passed"] = report.passed;
    return j;
}

Json to_json(const GradientCheckReport& report) {
    Json j;
    j["lmm_worst"] = report.lmm_worst;
    j["mglmm_worst"] = report.mglmm_worst;
    j["passed"] = report.passed;
    return j;
}

Json to_json(const SphereGrowthReport& report) {
    Json j;
    j["deltas"] = report.deltas;
    j["counts"] = report.counts;
    j["exponent"] = report.exponent;
    j["exponent_bound"] = report.exponent_bound;
    j["passed"] = report.passed;
    return j;
}

Json to_json(const FitResult& fit, bool verbose_starts) {
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["model"] = model_name(fit.model);
    j["theta_hat"] = vector_to_json(fit.theta_hat);
    j["loglik"] = fit.loglik;
    j["grad_norm"] = fit.grad_norm;
    j["converged"] = fit.converged;
    if (verbose_starts) {
        Json starts = Json::array();
        for (const auto& s : fit.starts) {
            Json row;
            row["index"] = s.index;
            row["theta_start"] = vector_to_json(s.theta_start);
            row["loglik"] = s.loglik;
            row["grad_norm"] = s.grad_norm;
            row["iterations"] = s.iterations;
            row["converged"] = s.converged;
            starts.push_back(std::move(row));
        }
        j["starts"] = std::move(starts);
    }
    return j;
}

}  // namespace subsetmle
