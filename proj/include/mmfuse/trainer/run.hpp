#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmfuse/features/container.hpp"
#include "mmfuse/trainer/checkpoint.hpp"
#include "mmfuse/trainer/schedule.hpp"

namespace mmfuse::trainer {

class RunError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One dataset with its split. `test` may be empty.
struct DataSplits {
  features::FeatureSet data;
  std::vector<std::uint64_t> train;
  std::vector<std::uint64_t> dev;
  std::vector<std::uint64_t> test;
};

struct TaskScore {
  std::string dataset;
  std::string task;
  std::string metric;  // "scoreA" for single-label tasks, "scoreB" otherwise
  double value = 0.0;
};

// scoreA or scoreB of every task of dataset `d` over `ids`.
template <typename T>
std::vector<TaskScore> evaluate(const Model<T>& model, std::size_t d, const features::FeatureSet& data,
                                const std::vector<std::uint64_t>& ids);

struct RunOptions {
  bool resume = false;
  // Stop after this epoch, leaving the run incomplete (resume tests).
  std::optional<std::size_t> stop_after_epoch;
  std::function<void(const std::string&)> log;
};

struct RunSummary {
  std::size_t epochs_completed = 0;
  std::size_t optimizer_steps = 0;
  std::size_t total_steps = 0;
  std::size_t warmup_steps = 0;
  bool complete = false;
  // Running maximum per "split/dataset/task".
  std::map<std::string, double> max_scores;
  // Final-epoch scores per "split/dataset/task".
  std::map<std::string, double> last_scores;
  double best_selection = -1.0;
  std::size_t best_epoch = 0;
};

// Run directory contents.
inline constexpr const char* kConfigFile = "config.json";
inline constexpr const char* kTraceFile = "trace.jsonl";
inline constexpr const char* kMetricsFile = "metrics.jsonl";
inline constexpr const char* kBestCheckpoint = "best.ckpt";
inline constexpr const char* kLastCheckpoint = "last.ckpt";
inline constexpr const char* kIncompleteMarker = "INCOMPLETE";
inline constexpr const char* kLockFile = "run.lock";

// Optimizer steps for the whole run and the warmup length (a tenth, floored).
struct StepPlan {
  std::size_t batches_per_epoch = 0;
  std::size_t total = 0;
  std::size_t warmup = 0;
};
StepPlan plan_steps(const std::vector<std::size_t>& train_sizes, const TrainConfig& train);

// Trains on every dataset in `data` (the first one is the primary dataset),
// evaluating all tasks on each split after every epoch.
RunSummary run(const RunConfig& config, const std::vector<DataSplits>& data, const std::filesystem::path& out,
               const RunOptions& options = {});

}  // namespace mmfuse::trainer
