#pragma once

// Subcommands of the `lmp` tool. Each command is a plain function so tests can
// drive it without a process boundary; `run` parses argv with CLI11.
//
// Exit codes: 0 success, 1 verification or training failure, 2 malformed input
// data, 3 invalid parameters.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace lmp::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kMalformedInput = 2,
  kInvalidParameters = 3,
};

/// $LMP_OUTPUT_DIR if set and non-empty, else the working directory.
std::filesystem::path default_output_dir();

struct SolveOptions {
  std::filesystem::path losses;
  std::string p = "1.3";
  std::string m = "25%";
  std::optional<std::filesystem::path> out;  // default: <output dir>/solve.json
};

struct WeightCurvesOptions {
  int n = 100;
  std::uint64_t seed = 1;
  std::string distribution = "uniform";  // uniform | lognormal
  std::vector<std::string> p_list{"1", "1.2", "1.4", "1.7", "2", "3", "4", "10", "inf"};
  std::vector<std::string> m_list{"1/3"};
  std::optional<std::filesystem::path> out;  // default: <output dir>/weight_curves.csv
};

struct AuditOptions {
  int instances = 500;
  std::uint64_t seed = 1;
  double tolerance = 1e-4;  // relative gap to either oracle
  double dual_tolerance = 1e-6;
  double kkt_tolerance = 1e-6;
  double eta_tolerance = 1e-7;
  double constraint_tolerance = 1e-9;
  int threads = 1;
  std::optional<std::filesystem::path> out;  // JSON report, written only when given
};

/// Every field is optional so that flags override the JSON config only when
/// they were actually passed.
struct TrainDemoOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::vector<std::string>> modes;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<std::string> p;
  std::optional<std::string> m;
  std::optional<int> iterations;
  std::optional<double> lr0;
  std::optional<double> noise;
  std::optional<std::size_t> images;
  std::optional<double> sampler_blend;  // enables the complementary sampler
  std::optional<std::filesystem::path> out;  // default: <output dir>/train_demo
};

int cmd_solve(const SolveOptions& options, std::ostream& out, std::ostream& err);
int cmd_weight_curves(const WeightCurvesOptions& options, std::ostream& out, std::ostream& err);
int cmd_oracle_audit(const AuditOptions& options, std::ostream& out, std::ostream& err);
int cmd_train_demo(const TrainDemoOptions& options, std::ostream& out, std::ostream& err);

/// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lmp::cli
