#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mmfuse::expcli {

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Per-epoch scores of one task on one split of one run.
struct ScoreSeries {
  std::string run;
  std::string split;  // "train", "dev" or "test"
  std::string dataset;
  std::string task;
  std::vector<double> scores;  // index e holds epoch e + 1
};

// Reads metrics.jsonl of a run directory. Throws ReportError when an epoch
// is missing from a series.
std::vector<ScoreSeries> read_score_series(const std::filesystem::path& run_dir, const std::string& run_id);

struct RunScores {
  std::string id;
  std::vector<ScoreSeries> series;
};

// Loads every run, throwing one ReportError that lists all runs that are
// missing or still marked INCOMPLETE.
std::vector<RunScores> load_complete_runs(const std::vector<std::pair<std::string, std::filesystem::path>>& runs);

// Rows are {Test, Dev, Train} x tasks, columns are runs; a cell is the max
// over epochs, empty when the run never scored that split.
struct RoundTable {
  std::vector<std::string> columns;
  std::vector<std::pair<std::string, std::string>> rows;  // (split label, task)
  std::vector<std::vector<std::optional<double>>> cells;  // [row][column]

  std::string text() const;
  // One JSON line per row: {"split", "task", "values": {run: value | null}}.
  std::string jsonl() const;
};

RoundTable render_round_table(const std::vector<RunScores>& runs, const std::string& dataset = "MAMI",
                              const std::vector<std::string>& tasks = {"Task_A", "Task_B"});

// Box summary and the 95% Student-t interval of the mean.
struct SeriesStats {
  std::size_t n = 0;
  double mean = 0;
  double sd = 0;  // sample standard deviation, 0 when n < 2
  std::optional<double> ci_low;
  std::optional<double> ci_high;
  double min = 0;
  double q1 = 0;
  double median = 0;
  double q3 = 0;
  double max = 0;
  std::vector<std::string> warnings;
};

inline constexpr double kConfidence = 0.95;

// Quartiles are Tukey hinges: the medians of the lower and upper halves,
// each half including the median when n is odd. [1..5] -> (2, 3, 4).
SeriesStats series_stats(std::span<const double> values);

nlohmann::json stats_to_json(const ScoreSeries& series, const SeriesStats& stats);

}  // namespace mmfuse::expcli
