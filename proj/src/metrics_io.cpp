#include "sombrl/metrics_io.hpp"

#include "sombrl/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace sombrl {

namespace {

using nlohmann::json;

constexpr const char* kCsvHeader = "episode,median_return,std_return,cum_regret,info_gain,lambda";

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double population_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

void finish_write(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::ifstream open_for_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return in;
}

double parse_double(const std::string& s, const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError("'" + path.string() + "': bad number '" + s + "'");
  }
}

json episode_json(const EpisodeRecord& e) {
  return {{"episode", e.episode},       {"return", e.episode_return}, {"intrinsic_return", e.intrinsic_return},
          {"length", e.length},         {"lambda", e.lambda},         {"info_gain", e.info_gain},
          {"beta", e.beta},             {"model_points", e.model_points}};
}

json step_json(const StepRecord& s) {
  return {{"step", s.step},
          {"reward", s.reward},
          {"variance", std::vector<double>(s.variance.data(), s.variance.data() + s.variance.size())},
          {"info_sum", s.info_sum},
          {"trigger", s.trigger},
          {"update_index", s.update_index}};
}

}  // namespace

RegretSeries cumulative_regret(const std::vector<double>& returns, double oracle) {
  if (returns.empty()) throw InputError("cumulative_regret: empty log");
  RegretSeries r;
  double acc = 0.0;
  for (double g : returns) {
    r.oracle_value.push_back(oracle);
    r.achieved_value.push_back(g);
    r.instantaneous.push_back(oracle - g);
    acc += oracle - g;
    r.cumulative.push_back(acc);
  }
  return r;
}

RegretSeries cumulative_regret(const ExperimentLog& log, double oracle) {
  std::vector<double> returns;
  returns.reserve(log.episodes.size());
  for (const EpisodeRecord& e : log.episodes) returns.push_back(e.episode_return);
  return cumulative_regret(returns, oracle);
}

SeedSummary summarize_seeds(const std::vector<ExperimentLog>& logs, double oracle) {
  if (logs.empty()) throw InputError("summarize_seeds: no logs");
  SeedSummary s;
  s.seeds = static_cast<int>(logs.size());
  std::size_t longest = 0;
  for (const ExperimentLog& l : logs) longest = std::max(longest, l.episodes.size());

  // Padded per-seed columns.
  std::vector<const ExperimentLog*> usable;
  for (const ExperimentLog& l : logs) {
    if (l.episodes.size() != longest) s.padded = true;
    if (!l.episodes.empty()) usable.push_back(&l);
  }
  std::vector<double> cum(usable.size(), 0.0);
  for (std::size_t k = 0; k < longest; ++k) {
    std::vector<double> ret, info, lam;
    for (std::size_t i = 0; i < usable.size(); ++i) {
      const auto& eps = usable[i]->episodes;
      const EpisodeRecord& e = eps[std::min(k, eps.size() - 1)];
      ret.push_back(e.episode_return);
      info.push_back(e.info_gain);
      lam.push_back(e.lambda);
      cum[i] += oracle - e.episode_return;
    }
    s.episode.push_back(static_cast<int>(k));
    s.median_return.push_back(median_of(ret));
    s.std_return.push_back(population_std(ret));
    s.cum_regret.push_back(median_of(cum));
    s.info_gain.push_back(median_of(info));
    s.lambda.push_back(median_of(lam));
  }
  return s;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void export_csv(const SeedSummary& s, const std::filesystem::path& path) {
  std::ofstream out = open_for_write(path);
  out << kCsvHeader << '\n';
  for (std::size_t k = 0; k < s.size(); ++k) {
    out << s.episode[k] << ',' << format_double(s.median_return[k]) << ',' << format_double(s.std_return[k]) << ','
        << format_double(s.cum_regret[k]) << ',' << format_double(s.info_gain[k]) << ','
        << format_double(s.lambda[k]) << '\n';
  }
  finish_write(out, path);
}

SeedSummary read_csv(const std::filesystem::path& path) {
  std::ifstream in = open_for_read(path);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw IoError("'" + path.string() + "': missing or unexpected CSV header");
  }
  SeedSummary s;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw IoError("'" + path.string() + "': expected 6 columns in '" + line + "'");
    s.episode.push_back(static_cast<int>(parse_double(cells[0], path)));
    s.median_return.push_back(parse_double(cells[1], path));
    s.std_return.push_back(parse_double(cells[2], path));
    s.cum_regret.push_back(parse_double(cells[3], path));
    s.info_gain.push_back(parse_double(cells[4], path));
    s.lambda.push_back(parse_double(cells[5], path));
  }
  return s;
}

void export_json(const SeedSummary& s, const ResultsMeta& meta, const std::vector<ExperimentLog>& logs,
                 const std::filesystem::path& path) {
  json summary = json::array();
  for (std::size_t k = 0; k < s.size(); ++k) {
    summary.push_back({{"episode", s.episode[k]},
                       {"median_return", s.median_return[k]},
                       {"std_return", s.std_return[k]},
                       {"cum_regret", s.cum_regret[k]},
                       {"info_gain", s.info_gain[k]},
                       {"lambda", s.lambda[k]}});
  }
  json runs = json::array();
  for (const ExperimentLog& l : logs) {
    json eps = json::array();
    for (const EpisodeRecord& e : l.episodes) eps.push_back(episode_json(e));
    json steps = json::array();
    for (const StepRecord& st : l.steps) steps.push_back(step_json(st));
    runs.push_back({{"seed", l.seed},
                    {"failed", l.failed},
                    {"error", l.error},
                    {"resets", l.resets},
                    {"model_updates", l.model_updates},
                    {"trigger_steps", l.trigger_steps},
                    {"episodes", eps},
                    {"steps", steps}});
  }
  const json doc = {{"env", meta.env},
                    {"mode", meta.mode},
                    {"regime", meta.regime},
                    {"oracle_estimate", meta.oracle_estimate},
                    {"oracle_note", "oracle estimate: iCEM on the true dynamics, not the true optimum"},
                    {"seeds", meta.seeds},
                    {"seed_count", s.seeds},
                    {"padded", s.padded},
                    {"summary", summary},
                    {"runs", runs}};
  std::ofstream out = open_for_write(path);
  out << doc.dump(2) << '\n';
  finish_write(out, path);
}

SeedSummary read_json(const std::filesystem::path& path) {
  std::ifstream in = open_for_read(path);
  json doc;
  try {
    doc = json::parse(in);
    SeedSummary s;
    s.seeds = doc.at("seed_count").get<int>();
    s.padded = doc.at("padded").get<bool>();
    for (const json& row : doc.at("summary")) {
      s.episode.push_back(row.at("episode").get<int>());
      s.median_return.push_back(row.at("median_return").get<double>());
      s.std_return.push_back(row.at("std_return").get<double>());
      s.cum_regret.push_back(row.at("cum_regret").get<double>());
      s.info_gain.push_back(row.at("info_gain").get<double>());
      s.lambda.push_back(row.at("lambda").get<double>());
    }
    return s;
  } catch (const json::exception& e) {
    throw IoError("'" + path.string() + "': " + e.what());
  }
}

void export_results(const SeedSummary& summary, const std::filesystem::path& path, ExportFormat format,
                    const ResultsMeta& meta, const std::vector<ExperimentLog>& logs) {
  if (format == ExportFormat::CSV) {
    export_csv(summary, path);
  } else {
    export_json(summary, meta, logs, path);
  }
}

}  // namespace sombrl
