#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmfuse/features/types.hpp"
#include "mmfuse/trainer/config.hpp"

namespace mmfuse::trainer {

namespace nd = mmfuse::ndgrad;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A task bound to its dataset. `labels` follow global declaration order and
// `label_index` points into the dataset's label vector.
template <typename T>
struct TaskBinding {
  std::size_t dataset = 0;
  std::string name;
  std::vector<std::string> labels;
  std::vector<std::size_t> label_index;
  heads::TaskHead<T> head;

  bool single_label() const { return labels.size() == 1; }
};

template <typename T>
struct TaskOutput {
  heads::HeadOutput<T> head;
  nd::Tensor<T> probs;                // [C]
  std::vector<std::uint8_t> labels;   // [C]
  nd::Tensor<T> class_outputs;        // C x hidden, decoder mode only
};

template <typename T>
struct InstanceOutput {
  std::vector<TaskOutput<T>> tasks;   // parallel to Model::dataset_tasks(d)
  std::vector<objectives::AlignTrack<T>> align;
};

// Attention bookkeeping for the exporters.
struct InstanceRecord {
  std::vector<features::TrackKind> source_kind;  // per decoder source row
  std::vector<heads::DecoderRecord> decoder;     // per task
};

template <typename T>
struct BatchLoss {
  std::vector<objectives::LossBreakdown<T>> tasks;
  nd::Tensor<T> total;  // mean over the dataset's tasks
};

// Fusion encoder, shared class queries and decoder, and one head per task of
// every dataset.
template <typename T>
class Model {
 public:
  Model(const RunConfig& config, const std::vector<features::DatasetSpec>& datasets,
        std::uint64_t init_seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const RunConfig& config() const { return config_; }
  const std::vector<features::DatasetSpec>& datasets() const { return datasets_; }
  nd::ParamStore<T>& store() { return *store_; }
  const nd::ParamStore<T>& store() const { return *store_; }
  const fusion::FusionModel<T>& fusion() const { return *fusion_; }
  const heads::ClassQueryTable<T>& queries() const { return queries_; }
  const std::vector<TaskBinding<T>>& tasks() const { return tasks_; }
  // Indices into tasks() for dataset d, in the dataset's task order.
  const std::vector<std::size_t>& dataset_tasks(std::size_t d) const { return by_dataset_.at(d); }

  InstanceOutput<T> forward(const features::FeatureRecord& record, std::size_t dataset,
                            const fusion::ForwardContext& ctx, InstanceRecord* rec = nullptr) const;

  BatchLoss<T> batch_loss(std::span<const features::FeatureRecord* const> records, std::size_t dataset,
                          const fusion::ForwardContext& ctx) const;

  // Probabilities per task of dataset d, without recording a graph.
  std::vector<std::vector<double>> predict(const features::FeatureRecord& record, std::size_t dataset) const;

 private:
  RunConfig config_;
  std::vector<features::DatasetSpec> datasets_;
  std::unique_ptr<nd::ParamStore<T>> store_;
  std::unique_ptr<fusion::FusionModel<T>> fusion_;
  heads::ClassQueryTable<T> queries_;
  heads::DecoderStack<T> decoder_;
  std::vector<TaskBinding<T>> tasks_;
  std::vector<std::vector<std::size_t>> by_dataset_;
};

// Global label declaration order: each dataset's labels in turn, first
// occurrence wins.
std::vector<std::string> global_labels(const std::vector<features::DatasetSpec>& datasets);

}  // namespace mmfuse::trainer
