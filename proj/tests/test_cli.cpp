#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace {

namespace fs = std::filesystem;

struct CliResult {
    int exit_code;
    std::string output;
};

CliResult run_cli(const std::string& args) {
    const std::string command = std::string(SUBSETMLE_CLI_PATH) + " " + args + " 2>&1";
    std::array<char, 4096> buffer{};
    std::string output;
    FILE* pipe = popen(command.c_str(), "r");
    REQUIRE(pipe != nullptr);
    while (fgets(buffer.data(), buffer.size(), pipe) != nullptr) output += buffer.data();
    const int status = pclose(pipe);
    return {WEXITSTATUS(status), output};
}

std::string slurp(const fs::path& path) {
    std::ifstream stream(path, std::ios::binary);
    REQUIRE(stream.good());
    std::ostringstream buffer;
    buffer << stream.rdbuf();
    return buffer.str();
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "subsetmle_cli" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_config(const fs::path& path, const std::string& body) {
    std::ofstream stream(path);
    stream << body;
}

}  // namespace

TEST_CASE("simulate writes CSV plus sidecar, deterministically") {
    const fs::path dir = fresh_dir("simulate");
    const std::string prefix = (dir / "ds").string();
    const CliResult first =
        run_cli("simulate --model lmm --N 8 --T 4 --seed 7 --out " + prefix);
    CHECK(first.exit_code == 0);
    CHECK(fs::exists(prefix + ".csv"));
    CHECK(fs::exists(prefix + ".json"));
    const std::string csv = slurp(prefix + ".csv");
    CHECK(csv.substr(0, 9) == "i,j,t,y\r\n");

    const std::string prefix2 = (dir / "ds2").string();
    run_cli("simulate --model lmm --N 8 --T 4 --seed 7 --out " + prefix2);
    CHECK(slurp(prefix2 + ".csv") == csv);
    CHECK(run_cli("simulate --model toy --N 6 --seed 2 --out " + (dir / "toy").string())
              .exit_code == 0);
}

TEST_CASE("simulate then fit recovers a sensible estimate") {
    const fs::path dir = fresh_dir("fit");
    const std::string prefix = (dir / "ds").string();
    REQUIRE(run_cli("simulate --model lmm --N 8 --T 4 --seed 11 --out " + prefix).exit_code ==
            0);
    const std::string out = (dir / "fit.json").string();
    const CliResult fit =
        run_cli("fit --data " + prefix + ".csv --starts 4 --seed 5 --out " + out);
    CHECK(fit.exit_code == 0);
    const std::string payload = slurp(out);
    CHECK(payload.find("\"converged\": true") != std::string::npos);
    CHECK(payload.find("\"theta_hat\"") != std::string::npos);
}

TEST_CASE("mglmm fit via files") {
    const fs::path dir = fresh_dir("fit_mglmm");
    const std::string prefix = (dir / "dm").string();
    REQUIRE(run_cli("simulate --model mglmm --N 4 --seed 3 --out " + prefix).exit_code == 0);
    const CliResult fit = run_cli("fit --data " + prefix + ".csv --starts 2 --is-samples 512");
    CHECK(fit.exit_code == 0);
    CHECK(fit.output.find("mglmm") != std::string::npos);
}

TEST_CASE("run executes a config and reruns byte-identically") {
    const fs::path dir = fresh_dir("run");
    const fs::path config = dir / "toy.json";
    write_config(config, R"({
  "schema_version": 1,
  "model": "toy",
  "theta0": [1.0],
  "sizes": [16, 32, 64, 128],
  "reps": 120,
  "checks": ["toy_rate", "consistency"],
  "epsilon_list": [0.3],
  "seed": 99,
  "output_dir": ")" + (dir / "out").string() + R"("
})");
    const CliResult first = run_cli("run " + config.string());
    CHECK(first.exit_code == 0);
    CHECK(first.output.find("PASS") != std::string::npos);
    CHECK(fs::exists(dir / "out" / "summary.json"));
    CHECK(fs::exists(dir / "out" / "summary.csv"));
    CHECK(fs::exists(dir / "out" / "toy_rate_toy.json"));

    const std::string summary = slurp(dir / "out" / "summary.json");
    const std::string tables = slurp(dir / "out" / "tables_toy.csv");
    const CliResult second = run_cli("run " + config.string() + " --workers 1");
    CHECK(second.exit_code == 0);
    CHECK(slurp(dir / "out" / "summary.json") == summary);
    CHECK(slurp(dir / "out" / "tables_toy.csv") == tables);

    const CliResult report = run_cli("report --dir " + (dir / "out").string());
    CHECK(report.exit_code == 0);
    CHECK(report.output.find("toy_rate") != std::string::npos);
}

TEST_CASE("invalid configs exit with code 2 and name the field") {
    const fs::path dir = fresh_dir("invalid");
    const fs::path odd = dir / "odd.json";
    write_config(odd, R"({"model": "lmm", "sizes": [3, 4], "checks": ["kl_sup"]})");
    const CliResult odd_result = run_cli("run " + odd.string());
    CHECK(odd_result.exit_code == 2);
    CHECK(odd_result.output.find("sizes") != std::string::npos);

    const fs::path unknown = dir / "unknown.json";
    write_config(unknown, R"({"model": "lmm", "cheks": ["kl_sup"]})");
    const CliResult unknown_result = run_cli("run " + unknown.string());
    CHECK(unknown_result.exit_code == 2);
    CHECK(unknown_result.output.find("cheks") != std::string::npos);

    const fs::path boundary = dir / "boundary.json";
    write_config(boundary,
                 R"({"model": "lmm", "theta0": [1, 0.5, 0, 0.5, 0.5, 1, 0.3],
                     "checks": ["kl_sup"]})");
    const CliResult boundary_result = run_cli("run " + boundary.string());
    CHECK(boundary_result.exit_code == 2);
    CHECK(boundary_result.output.find("theta0") != std::string::npos);

    CHECK(run_cli("run " + (dir / "missing.json").string()).exit_code == 2);
    CHECK(run_cli("verify --check made_up --model lmm").exit_code == 2);
}

TEST_CASE("verify subcommand runs a single named check") {
    const fs::path dir = fresh_dir("verify");
    const CliResult result =
        run_cli("verify --check kl_sup --model lmm --epsilon 0.4 --delta 0.2 --out " +
                (dir / "out").string());
    CHECK(result.exit_code == 0);
    CHECK(result.output.find("PASS  kl_sup") != std::string::npos);
    CHECK(fs::exists(dir / "out" / "kl_sup_lmm.json"));
}

TEST_CASE("SUBSET_MLE_SEED overrides the config seed") {
    const fs::path dir = fresh_dir("envseed");
    const fs::path config = dir / "toy.json";
    write_config(config, R"({
  "model": "toy", "theta0": [0.5], "sizes": [16, 32], "reps": 30,
  "checks": ["toy_rate"], "seed": 4,
  "output_dir": ")" + (dir / "out").string() + R"("
})");
    REQUIRE(run_cli("run " + config.string()).exit_code == 0);
    const std::string base = slurp(dir / "out" / "toy_rate_toy.json");
    const std::string env_cmd = "SUBSET_MLE_SEED=12345 " + std::string(SUBSETMLE_CLI_PATH) +
                                " run " + config.string() + " >/dev/null 2>&1";
    REQUIRE(std::system(env_cmd.c_str()) == 0);
    const std::string overridden = slurp(dir / "out" / "toy_rate_toy.json");
    CHECK(overridden != base);
    CHECK(overridden.find("\"seed\": 12345") != std::string::npos);
}
