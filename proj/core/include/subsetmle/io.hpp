#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>

#include "subsetmle/estimation.hpp"
#include "subsetmle/lmm.hpp"
#include "subsetmle/mglmm.hpp"
#include "subsetmle/verify.hpp"

namespace subsetmle {

/// All emitted JSON uses insertion-ordered keys so reruns are byte-identical.
using Json = nlohmann::ordered_json;

constexpr int kSchemaVersion = 1;

/// Locale-independent shortest-roundtrip double formatting for CSV cells.
std::string format_double(double value);

/// Minimal RFC-4180 table: CRLF line endings, quoting only when needed.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

std::string to_csv(const CsvTable& table);
void write_file(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

// --- datasets --------------------------------------------------------------
// Every dataset is a CSV of observations plus a JSON sidecar carrying the
// dimensions, the seed and the generating parameter vector. `prefix` names
// both files: <prefix>.csv and <prefix>.json.

void write_dataset(const std::filesystem::path& prefix, const LmmDataset& data,
                   const LmmParams& theta);
void write_dataset(const std::filesystem::path& prefix, const MglmmDataset& data,
                   const MglmmParams& theta);
void write_toy_dataset(const std::filesystem::path& prefix, const Eigen::MatrixXd& data,
                       double theta, std::uint64_t seed);

/// Model recorded in a dataset sidecar ("<prefix>.json" or the sidecar of a
/// "<x>.csv" path).
Model dataset_model(const std::filesystem::path& path);

LmmDataset read_lmm_dataset(const std::filesystem::path& path);
MglmmDataset read_mglmm_dataset(const std::filesystem::path& path);
Eigen::MatrixXd read_toy_dataset(const std::filesystem::path& path);

// --- report serialization ---------------------------------------------------

Json to_json(const RateFit& fit);
Json to_json(const TrendCheck& trend);
Json to_json(const SubsetInequalityReport& report);
Json to_json(const IdentificationReport& report);
Json to_json(const KlSupReport& report);
Json to_json(const UllnReport& report);
Json to_json(const LipschitzReport& report);
Json to_json(const RateConditionReport& report);
Json to_json(const ConsistencyReport& report);
Json to_json(const UnitMeanReport& report);
Json to_json(const ToyRateReport& report);
Json to_json(const DenseOracleReport& report);
Json to_json(const GradientCheckReport& report);
Json to_json(const SphereGrowthReport& report);
Json to_json(const FitResult& fit, bool verbose_starts);

Json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const Json& j);

}  // namespace subsetmle
