#pragma once

// Regret, cross-seed aggregation, and CSV / JSON export.

#include "sombrl/runner.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace sombrl {

struct RegretSeries {
  std::vector<double> oracle_value;
  std::vector<double> achieved_value;
  std::vector<double> instantaneous;  // oracle - achieved, not clipped
  std::vector<double> cumulative;     // prefix sums of `instantaneous`
};

/// Regret against an oracle estimate; r_n may be negative when the agent
/// beats the (noisy) estimate.
RegretSeries cumulative_regret(const ExperimentLog& log, double oracle);
RegretSeries cumulative_regret(const std::vector<double>& returns, double oracle);

/// Per-episode statistics across seeds. Columns other than `std_return` are
/// medians across seeds; the standard deviation uses the population (ddof 0)
/// convention.
struct SeedSummary {
  std::vector<int> episode;
  std::vector<double> median_return;
  std::vector<double> std_return;
  std::vector<double> cum_regret;
  std::vector<double> info_gain;
  std::vector<double> lambda;

  int seeds = 0;
  /// Some seed ended early and was padded with its last value.
  bool padded = false;

  std::size_t size() const { return episode.size(); }
  bool operator==(const SeedSummary& other) const = default;
};

SeedSummary summarize_seeds(const std::vector<ExperimentLog>& logs, double oracle);

/// Descriptive fields written alongside the summary in JSON.
struct ResultsMeta {
  std::string env;
  std::string mode;
  std::string regime;
  double oracle_estimate = 0.0;
  std::vector<std::uint64_t> seeds;
};

enum class ExportFormat { CSV, JSON };

/// CSV: header `episode,median_return,std_return,cum_regret,info_gain,lambda`
/// then one row per episode, floats at 17 significant digits.
void export_csv(const SeedSummary& summary, const std::filesystem::path& path);
SeedSummary read_csv(const std::filesystem::path& path);

/// JSON mirror of the summary plus per-seed episode logs and nonepisodic
/// step traces; validates against schema/results.schema.json.
void export_json(const SeedSummary& summary, const ResultsMeta& meta, const std::vector<ExperimentLog>& logs,
                 const std::filesystem::path& path);
SeedSummary read_json(const std::filesystem::path& path);

void export_results(const SeedSummary& summary, const std::filesystem::path& path, ExportFormat format,
                    const ResultsMeta& meta = {}, const std::vector<ExperimentLog>& logs = {});

/// %.17g, the formatting used for every float in CSV output.
std::string format_double(double v);

}  // namespace sombrl
