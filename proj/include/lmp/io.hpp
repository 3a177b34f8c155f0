#pragma once

// File formats shared by the CLI and the python bindings. Schemas are
// documented in docs/formats.md.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lmp/sampler.hpp"
#include "lmp/solver.hpp"
#include "lmp/trainer.hpp"

namespace lmp::io {

using Json = nlohmann::json;

/// "inf" (any case) or a real >= 1.
double parse_p(std::string_view text);

/// "25%" and "1/4" are fractions of the valid entries, "25" an absolute count.
PoolingSize parse_m(std::string_view text);
std::string format_m(const PoolingSize& m);
std::string format_p(double p);

/// Losses as CSV (one real per line, optional header line) or a JSON array.
/// Throws InvalidInput on malformed text; values are validated like solve_pool.
std::vector<double> parse_losses(std::string_view text);
std::vector<double> read_losses_file(const std::filesystem::path& path);

/// Shortest decimal that round-trips (at most 17 significant digits).
std::string format_exact(double v);
/// Human output: `digits` significant digits, fixed notation when reasonable.
std::string format_human(double v, int digits = 9);

Json outcome_to_json(const SolveOutcome& outcome);

Json spec_to_json(const SyntheticDatasetSpec& spec);
/// Unknown keys and type errors throw InvalidParameter naming the key.
SyntheticDatasetSpec spec_from_json(const Json& j);

Json config_to_json(const TrainConfig& config);
TrainConfig config_from_json(const Json& j, TrainConfig base = {});

Json stats_to_json(const ClassStats& stats);
Json report_to_json(const TrainReport& report);
Json dataset_to_json(const Dataset& dataset);
Dataset dataset_from_json(const Json& j);

/// FNV-1a over the compact JSON dump.
std::uint64_t config_hash(const Json& j);

/// "LMPMODEL", u64 LE header length, JSON header, then weights (row-major)
/// followed by bias as little-endian float64.
void write_model(const std::filesystem::path& path, const LinearModel& model,
                 const TrainConfig& config);
LinearModel read_model(const std::filesystem::path& path, Json* header = nullptr);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace lmp::io
