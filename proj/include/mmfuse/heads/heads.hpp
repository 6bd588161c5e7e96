#pragma once

#include <string>
#include <vector>

#include "mmfuse/fusion/layers.hpp"

namespace mmfuse::heads {

namespace nd = mmfuse::ndgrad;
using fusion::AttentionMap;
using fusion::ConfigError;
using fusion::ForwardContext;

enum class HeadMode { MultiHead, SharedSingle };

std::string_view to_string(HeadMode m);

inline constexpr double kProbabilityFloor = 1e-7;

// One trainable query per global label, in declaration order.
template <typename T>
struct ClassQueryTable {
  std::vector<std::string> labels;
  nd::Tensor<T> table;  // labels.size() x hidden

  ClassQueryTable() = default;
  ClassQueryTable(nd::ParamStore<T>& store, std::vector<std::string> labels, std::size_t hidden);
  std::size_t index(const std::string& label) const;
  // Indices of `task_labels`, reordered to declaration order.
  std::vector<std::size_t> indices(const std::vector<std::string>& task_labels) const;
};

// Post-norm decoder layer without a causal mask:
// t = LN(t + SA(t)); t = LN(t + CA(t, src)); t = LN(t + FF(t)).
template <typename T>
struct DecoderLayer {
  fusion::MultiHeadAttention<T> self_attn;
  fusion::LayerNorm<T> norm1;
  fusion::MultiHeadAttention<T> cross_attn;
  fusion::LayerNorm<T> norm2;
  fusion::FeedForward<T> ff;
  fusion::LayerNorm<T> norm3;

  DecoderLayer() = default;
  DecoderLayer(nd::ParamStore<T>& store, const std::string& name, std::size_t dim,
               std::size_t heads, std::size_t ff_width);
};

// Head-averaged weights per decoder layer.
struct DecoderRecord {
  std::vector<AttentionMap> self;   // C x C
  std::vector<AttentionMap> cross;  // C x L'
};

template <typename T>
struct DecoderStack {
  std::vector<DecoderLayer<T>> layers;

  DecoderStack() = default;
  DecoderStack(nd::ParamStore<T>& store, const std::string& name, std::size_t dim,
               std::size_t layers, std::size_t heads, std::size_t ff_width);
};

// Decoder outputs, one row per task label (declaration order).
template <typename T>
nd::Tensor<T> decode_classes(const nd::Tensor<T>& source, std::span<const std::uint8_t> source_mask,
                             const std::vector<std::string>& task_labels,
                             const ClassQueryTable<T>& queries, const DecoderStack<T>& decoder,
                             const ForwardContext& ctx, DecoderRecord* record = nullptr);

// Two affine layers with GELU between. MultiHead emits one logit per task
// label; SharedSingle emits one logit and is applied per class row.
template <typename T>
struct TaskHead {
  std::string task;
  HeadMode mode = HeadMode::SharedSingle;
  std::size_t labels = 1;
  fusion::Linear<T> hidden;
  fusion::Linear<T> out;

  TaskHead() = default;
  TaskHead(nd::ParamStore<T>& store, const std::string& task, HeadMode mode, std::size_t labels,
           std::size_t input_dim, std::size_t mlp_hidden);
};

// Logits plus the input of each MLP layer (h0: MLP input, h1: post-GELU
// hidden). In MultiHead mode each h has one row shared by every class;
// in SharedSingle mode row c belongs to class c.
template <typename T>
struct HeadOutput {
  nd::Tensor<T> logits;  // [C]
  std::vector<nd::Tensor<T>> layer_inputs;

  // Layer-l input used for class c.
  nd::Tensor<T> layer_input(std::size_t l, std::size_t c) const;
};

template <typename T>
HeadOutput<T> classify_pooled(const nd::Tensor<T>& pooled, const TaskHead<T>& head);

template <typename T>
HeadOutput<T> classify_shared(const nd::Tensor<T>& class_outputs, const TaskHead<T>& head);

// Sigmoid clamped to [1e-7, 1 - 1e-7].
template <typename T>
nd::Tensor<T> probabilities(const nd::Tensor<T>& logits);

}  // namespace mmfuse::heads
