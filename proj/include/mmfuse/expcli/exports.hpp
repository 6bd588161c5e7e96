#pragma once

#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmfuse/features/container.hpp"
#include "mmfuse/trainer/checkpoint.hpp"

namespace mmfuse::expcli {

class ExportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A trained model rebuilt from a run directory.
struct LoadedRun {
  trainer::CheckpointMeta meta;
  trainer::RunConfig config;
  std::unique_ptr<trainer::Model<float>> model;

  // Index of the model dataset whose spec equals `spec`.
  std::size_t dataset_index(const features::DatasetSpec& spec) const;
};

// `which` is "best" or "last".
LoadedRun load_run(const std::filesystem::path& run_dir, const std::string& which = "best");

// Head-averaged decoder attention of one task, averaged over instances.
struct AttentionSummary {
  std::string task;
  std::vector<std::string> labels;  // C, declaration order
  std::vector<std::string> tracks;  // K, source tracks in roster order
  std::size_t instances = 0;
  std::vector<std::vector<double>> self;   // per layer, C x C row-major
  std::vector<std::vector<double>> cross;  // per layer, C x K; source weights summed per track

  nlohmann::json to_json() const;
};

// Streams over `data` (sums and counts only). Throws ExportError for models
// without a decoder.
template <typename T>
std::vector<AttentionSummary> attention_summary(const trainer::Model<T>& model, std::size_t dataset,
                                                const features::FeatureSet& data);

struct EmbeddingRow {
  std::string task;
  std::string label;
  std::uint64_t id = 0;
  std::uint8_t target = 0;
  std::vector<double> output;  // decoder output row
};

struct QueryRow {
  std::string label;
  std::vector<double> query;  // class query table row
};

struct EmbeddingExport {
  std::vector<EmbeddingRow> rows;  // instances x classes
  std::vector<QueryRow> queries;   // labels of the dataset's tasks

  // {"kind": "query", ...} lines first, then {"kind": "output", ...} lines.
  std::string jsonl() const;
};

template <typename T>
EmbeddingExport embedding_export(const trainer::Model<T>& model, std::size_t dataset,
                                 const features::FeatureSet& data);

// Mean cosine between a class query and the decoder outputs of positive and
// of negative instances.
struct QueryAlignment {
  std::string task;
  std::string label;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  double positive_cosine = 0;
  double negative_cosine = 0;
};

std::vector<QueryAlignment> query_alignment(const EmbeddingExport& e);

}  // namespace mmfuse::expcli
