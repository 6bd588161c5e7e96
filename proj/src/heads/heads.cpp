#include "mmfuse/heads/heads.hpp"

#include <algorithm>

namespace mmfuse::heads {

using nd::ParamGroup;
using nd::Tensor;

std::string_view to_string(HeadMode m) {
  return m == HeadMode::MultiHead ? "multi_head" : "shared_single";
}

template <typename T>
ClassQueryTable<T>::ClassQueryTable(nd::ParamStore<T>& store, std::vector<std::string> labels_,
                                    std::size_t hidden)
    : labels(std::move(labels_)) {
  if (labels.empty()) throw ConfigError("class query table needs at least one label");
  table = store.normal("heads.queries", {labels.size(), hidden}, 0.02, ParamGroup::Embedding);
}

template <typename T>
std::size_t ClassQueryTable<T>::index(const std::string& label) const {
  auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) throw ConfigError("no class query for label '" + label + "'");
  return static_cast<std::size_t>(it - labels.begin());
}

template <typename T>
std::vector<std::size_t> ClassQueryTable<T>::indices(const std::vector<std::string>& task_labels) const {
  std::vector<std::size_t> idx;
  for (const auto& l : task_labels) idx.push_back(index(l));
  std::sort(idx.begin(), idx.end());
  return idx;
}

template <typename T>
DecoderLayer<T>::DecoderLayer(nd::ParamStore<T>& store, const std::string& name, std::size_t dim,
                              std::size_t heads, std::size_t ff_width)
    : self_attn(store, name + ".self", dim, heads),
      norm1(store, name + ".norm1", dim),
      cross_attn(store, name + ".cross", dim, heads),
      norm2(store, name + ".norm2", dim),
      ff(store, name + ".ff", dim, ff_width),
      norm3(store, name + ".norm3", dim) {}

template <typename T>
DecoderStack<T>::DecoderStack(nd::ParamStore<T>& store, const std::string& name, std::size_t dim,
                              std::size_t n_layers, std::size_t heads, std::size_t ff_width) {
  if (n_layers == 0) throw ConfigError("decoder needs >= 1 layer");
  for (std::size_t l = 0; l < n_layers; ++l) {
    layers.emplace_back(store, name + ".l" + std::to_string(l), dim, heads, ff_width);
  }
}

template <typename T>
Tensor<T> decode_classes(const Tensor<T>& source, std::span<const std::uint8_t> source_mask,
                         const std::vector<std::string>& task_labels,
                         const ClassQueryTable<T>& queries, const DecoderStack<T>& decoder,
                         const ForwardContext& ctx, DecoderRecord* record) {
  if (task_labels.empty()) throw ConfigError("decode_classes: task has no labels");
  if (source_mask.size() != source.rows()) {
    throw nd::DimensionError("decode_classes: source mask length differs from source rows");
  }
  if (std::none_of(source_mask.begin(), source_mask.end(), [](std::uint8_t m) { return m != 0; })) {
    throw nd::DimensionError("decode_classes: source has no valid token");
  }
  const std::vector<std::size_t> idx = queries.indices(task_labels);
  Tensor<T> t = nd::gather_rows(queries.table, std::span<const std::size_t>(idx));
  for (std::size_t l = 0; l < decoder.layers.size(); ++l) {
    const DecoderLayer<T>& layer = decoder.layers[l];
    AttentionMap* self_rec = record ? &record->self.emplace_back() : nullptr;
    AttentionMap* cross_rec = record ? &record->cross.emplace_back() : nullptr;
    try {
      t = layer.norm1(nd::add(t, fusion::apply_dropout(layer.self_attn(t, t, {}, ctx, self_rec), ctx)));
      t = layer.norm2(nd::add(
          t, fusion::apply_dropout(layer.cross_attn(t, source, source_mask, ctx, cross_rec), ctx)));
      t = layer.norm3(nd::add(t, fusion::apply_dropout(layer.ff(t, ctx), ctx)));
    } catch (const nd::NumericError& e) {
      throw nd::NumericError("decoder layer " + std::to_string(l) + ": " + e.what());
    }
  }
  return t;
}

template <typename T>
TaskHead<T>::TaskHead(nd::ParamStore<T>& store, const std::string& task_, HeadMode mode_,
                      std::size_t labels_, std::size_t input_dim, std::size_t mlp_hidden)
    : task(task_), mode(mode_), labels(labels_) {
  if (labels == 0) throw ConfigError("task '" + task + "' has no labels");
  const std::string name = "heads.task." + task;
  hidden = fusion::Linear<T>(store, name + ".hidden", input_dim, mlp_hidden);
  out = fusion::Linear<T>(store, name + ".out", mlp_hidden, mode == HeadMode::MultiHead ? labels : 1);
}

template <typename T>
Tensor<T> HeadOutput<T>::layer_input(std::size_t l, std::size_t c) const {
  const Tensor<T>& h = layer_inputs.at(l);
  return nd::row(h, h.rows() == 1 ? 0 : c);
}

template <typename T>
HeadOutput<T> classify_pooled(const Tensor<T>& pooled, const TaskHead<T>& head) {
  if (head.mode != HeadMode::MultiHead) {
    throw ConfigError("classify_pooled: head '" + head.task + "' is not a multi-head classifier");
  }
  const Tensor<T> h0 = pooled.rank() == 1 ? nd::reshape(pooled, {1, pooled.numel()}) : pooled;
  if (h0.rows() != 1) throw nd::DimensionError("classify_pooled: expected one pooled vector");
  const Tensor<T> h1 = nd::gelu(head.hidden(h0));
  HeadOutput<T> out;
  out.logits = nd::reshape(head.out(h1), {head.labels});
  out.layer_inputs = {h0, h1};
  return out;
}

template <typename T>
HeadOutput<T> classify_shared(const Tensor<T>& class_outputs, const TaskHead<T>& head) {
  if (head.mode != HeadMode::SharedSingle) {
    throw ConfigError("classify_shared: head '" + head.task + "' is not a shared single-logit classifier");
  }
  if (class_outputs.rank() != 2 || class_outputs.rows() != head.labels) {
    throw nd::DimensionError("classify_shared: expected " + std::to_string(head.labels) +
                             " class rows, got " + nd::shape_str(class_outputs.shape()));
  }
  const Tensor<T> h1 = nd::gelu(head.hidden(class_outputs));
  HeadOutput<T> out;
  out.logits = nd::reshape(head.out(h1), {head.labels});
  out.layer_inputs = {class_outputs, h1};
  return out;
}

template <typename T>
Tensor<T> probabilities(const Tensor<T>& logits) {
  return nd::clamp(nd::sigmoid(logits), T(kProbabilityFloor), T(1.0 - kProbabilityFloor));
}

#define MMFUSE_INSTANTIATE(T)                                                                      \
  template struct ClassQueryTable<T>;                                                              \
  template struct DecoderLayer<T>;                                                                 \
  template struct DecoderStack<T>;                                                                 \
  template struct TaskHead<T>;                                                                     \
  template struct HeadOutput<T>;                                                                   \
  template Tensor<T> decode_classes<T>(const Tensor<T>&, std::span<const std::uint8_t>,            \
                                       const std::vector<std::string>&, const ClassQueryTable<T>&, \
                                       const DecoderStack<T>&, const ForwardContext&,              \
                                       DecoderRecord*);                                            \
  template HeadOutput<T> classify_pooled<T>(const Tensor<T>&, const TaskHead<T>&);                 \
  template HeadOutput<T> classify_shared<T>(const Tensor<T>&, const TaskHead<T>&);                 \
  template Tensor<T> probabilities<T>(const Tensor<T>&);

MMFUSE_INSTANTIATE(float)
MMFUSE_INSTANTIATE(double)
#undef MMFUSE_INSTANTIATE

}  // namespace mmfuse::heads
