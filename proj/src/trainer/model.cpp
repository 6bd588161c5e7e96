#include "mmfuse/trainer/model.hpp"

#include <algorithm>

namespace mmfuse::trainer {

using features::DatasetSpec;
using features::FeatureRecord;
using fusion::ConfigError;
using nd::Tensor;

std::vector<std::string> global_labels(const std::vector<DatasetSpec>& datasets) {
  std::vector<std::string> out;
  for (const auto& d : datasets)
    for (const auto& l : d.label_names)
      if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
  return out;
}

template <typename T>
Model<T>::Model(const RunConfig& config, const std::vector<DatasetSpec>& datasets, std::uint64_t init_seed)
    : config_(config), datasets_(datasets), store_(std::make_unique<nd::ParamStore<T>>(init_seed)) {
  config_.validate();
  if (datasets_.empty()) throw ConfigError("model needs at least one dataset");
  const auto& first = datasets_[0];
  for (const auto& d : datasets_) {
    d.validate();
    for (const auto& track : first.tracks) {
      if (!config_.fusion.uses(track.kind)) continue;
      const std::size_t t = d.find_track(track.kind);
      if (t == d.tracks.size() || d.tracks[t].dim != track.dim || d.tracks[t].max_len != track.max_len) {
        throw ConfigError("dataset " + d.name + " does not share the " +
                          std::string(features::to_string(track.kind)) + " track layout of " + first.name);
      }
    }
  }
  const std::size_t H = config_.fusion.hidden_dim;
  fusion_ = std::make_unique<fusion::FusionModel<T>>(*store_, config_.fusion, first.tracks);
  const auto all_labels = global_labels(datasets_);
  if (config_.uses_decoder()) {
    queries_ = heads::ClassQueryTable<T>(*store_, all_labels, H);
    decoder_ = heads::DecoderStack<T>(*store_, "heads.decoder", H, config_.heads.decoder.layers,
                                      config_.heads.decoder.heads, config_.fusion.ff_multiplier * H);
  }
  by_dataset_.resize(datasets_.size());
  for (std::size_t d = 0; d < datasets_.size(); ++d) {
    for (const auto& task : datasets_[d].tasks) {
      TaskBinding<T> b;
      b.dataset = d;
      b.name = task.name;
      for (const auto& l : all_labels)
        if (std::find(task.labels.begin(), task.labels.end(), l) != task.labels.end()) b.labels.push_back(l);
      for (const auto& l : b.labels) b.label_index.push_back(datasets_[d].label_index(l));
      const bool clash = std::any_of(tasks_.begin(), tasks_.end(),
                                     [&](const TaskBinding<T>& o) { return o.name == task.name; });
      if (clash) throw ConfigError("task name '" + task.name + "' is used by two datasets");
      b.head = heads::TaskHead<T>(*store_, task.name, config_.head_mode(), b.labels.size(), H,
                                  config_.heads.mlp_hidden);
      by_dataset_[d].push_back(tasks_.size());
      tasks_.push_back(std::move(b));
    }
  }
}

template <typename T>
InstanceOutput<T> Model<T>::forward(const FeatureRecord& record, std::size_t dataset,
                                    const fusion::ForwardContext& ctx, InstanceRecord* rec) const {
  const DatasetSpec& spec = datasets_.at(dataset);
  const auto inputs = fusion::prepare_tracks<T>(spec, record, config_.fusion);
  const auto seq = fusion_->assemble(inputs);
  const Tensor<T> encoded = fusion_->encode(seq, ctx);
  const auto pooled = fusion_->pool(encoded, seq);
  if (rec) rec->source_kind = pooled.source_kind;

  InstanceOutput<T> out;
  for (std::size_t t : by_dataset_[dataset]) {
    const TaskBinding<T>& task = tasks_[t];
    TaskOutput<T> to;
    for (std::size_t idx : task.label_index) {
      if (idx >= record.labels.size()) {
        throw DataError("record " + std::to_string(record.id) + " lacks labels for task " + task.name);
      }
      to.labels.push_back(record.labels[idx]);
    }
    if (config_.uses_decoder()) {
      heads::DecoderRecord* dr = rec ? &rec->decoder.emplace_back() : nullptr;
      to.class_outputs = heads::decode_classes(pooled.sequence, pooled.mask, task.labels, queries_, decoder_,
                                               ctx, dr);
      to.head = heads::classify_shared(to.class_outputs, task.head);
    } else {
      to.head = heads::classify_pooled(pooled.sequence, task.head);
    }
    to.probs = heads::probabilities(to.head.logits);
    out.tasks.push_back(std::move(to));
  }
  if (config_.losses.align) {
    for (const auto& p : seq.projections) {
      out.align.push_back({nd::masked_mean_rows(p.raw, p.mask), nd::masked_mean_rows(p.projected, p.mask)});
    }
  }
  return out;
}

template <typename T>
BatchLoss<T> Model<T>::batch_loss(std::span<const FeatureRecord* const> records, std::size_t dataset,
                                  const fusion::ForwardContext& ctx) const {
  if (records.empty()) throw DataError("empty batch");
  std::vector<InstanceOutput<T>> outs;
  for (const FeatureRecord* r : records) outs.push_back(forward(*r, dataset, ctx));

  std::vector<Tensor<T>> align;
  if (config_.losses.align && outs.size() > 1) {
    std::vector<std::vector<objectives::AlignTrack<T>>> tracks;
    for (const auto& o : outs) tracks.push_back(o.align);
    align = objectives::align_pairs(tracks);
  }

  BatchLoss<T> out;
  std::vector<Tensor<T>> totals;
  const auto& task_ids = by_dataset_[dataset];
  for (std::size_t k = 0; k < task_ids.size(); ++k) {
    std::vector<objectives::TaskInstance<T>> batch;
    for (const auto& o : outs) batch.push_back({o.tasks[k].probs, o.tasks[k].head, o.tasks[k].labels});
    out.tasks.push_back(objectives::task_loss(batch, align, config_.losses));
    totals.push_back(out.tasks.back().total);
  }
  out.total = objectives::dataset_loss(totals);
  return out;
}

template <typename T>
std::vector<std::vector<double>> Model<T>::predict(const FeatureRecord& record, std::size_t dataset) const {
  nd::NoGradGuard no_grad;
  const auto out = forward(record, dataset, {});
  std::vector<std::vector<double>> probs;
  for (const auto& t : out.tasks) {
    const auto d = t.probs.data();
    probs.emplace_back(d.begin(), d.end());
  }
  return probs;
}

template class Model<float>;
template class Model<double>;

}  // namespace mmfuse::trainer
