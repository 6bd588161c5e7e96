#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mmfuse/features/types.hpp"
#include "mmfuse/fusion/layers.hpp"

namespace mmfuse::fusion {

using features::TrackKind;

enum class EncoderVariant { Shared, Multi };
enum class Pooling { Cls, None, TxtCls };

std::string_view to_string(EncoderVariant v);
std::string_view to_string(Pooling p);
EncoderVariant encoder_variant_from_string(std::string_view s);
Pooling pooling_from_string(std::string_view s);

struct StackShape {
  std::size_t layers = 6;
  std::size_t heads = 8;
  bool operator==(const StackShape&) const = default;
};

struct FusionConfig {
  std::size_t hidden_dim = 768;
  EncoderVariant variant = EncoderVariant::Multi;
  Pooling pooling = Pooling::None;
  StackShape shared{12, 12};
  StackShape image_patch{6, 8};
  StackShape object{6, 8};
  StackShape text{12, 12};
  std::size_t ff_multiplier = 4;
  double dropout = 0.1;
  bool use_image_patch = true;
  bool use_object = true;

  // Throws ConfigError on incompatible pooling/variant or head counts.
  void validate() const;
  bool uses(TrackKind kind) const;
  const StackShape& stack_for(TrackKind kind) const;
  bool operator==(const FusionConfig&) const = default;
};

// One track of one instance, ready for the model. mask is the effective
// validity (stored mask, and for OBJECT also the no-object mask).
template <typename T>
struct TrackInput {
  TrackKind kind = TrackKind::Text;
  nd::Tensor<T> tokens;  // n x dim
  nd::Mask mask;
};

// Converts the tracks the config uses, in IMAGE_PATCH, OBJECT, TEXT order.
template <typename T>
std::vector<TrackInput<T>> prepare_tracks(const features::DatasetSpec& spec,
                                          const features::FeatureRecord& record,
                                          const FusionConfig& config);

struct Segment {
  TrackKind kind = TrackKind::Text;
  std::size_t start = 0;
  std::size_t length = 0;
};

template <typename T>
struct ProjectedTrack {
  TrackKind kind = TrackKind::ImagePatch;
  nd::Tensor<T> raw;        // n x dim, pre-projection
  nd::Tensor<T> projected;  // n x hidden_dim
  nd::Mask mask;
};

template <typename T>
struct AssembledSequence {
  nd::Tensor<T> tokens;  // L x hidden_dim, layer-normalized embedding sum
  nd::Mask mask;
  std::vector<TrackKind> type_ids;      // per position
  std::vector<Segment> segments;        // content tokens only
  std::vector<Segment> spans;           // per track including its specials
  std::optional<std::size_t> cls_position;
  std::vector<ProjectedTrack<T>> projections;

  std::size_t length() const { return mask.size(); }
};

template <typename T>
struct Pooled {
  bool is_vector = false;
  nd::Tensor<T> sequence;  // 1 x hidden_dim when is_vector
  nd::Mask mask;
  std::vector<TrackKind> source_kind;  // track owning each row
};

// Learned embedding parameters. Positional tables of all tracks live in one
// matrix; `pos_offset[k]` is the first row of track k.
template <typename T>
struct EmbeddingTables {
  std::vector<TrackKind> kinds;  // tracks in use, fixed order
  nd::Tensor<T> type_embedding;  // kinds.size() x hidden
  nd::Tensor<T> positional;      // sum of per-track table sizes x hidden
  std::vector<std::size_t> pos_offset;
  std::vector<std::size_t> pos_size;
  nd::Tensor<T> cls;  // 1 x hidden
  nd::Tensor<T> sep;  // 1 x hidden
  std::vector<Linear<T>> projection;  // per kind; empty Linear for TEXT
  LayerNorm<T> norm;

  std::size_t slot(TrackKind kind) const;
};

template <typename T>
class FusionModel {
 public:
  // `tracks` supplies dims and max lengths; tracks the config leaves out are
  // ignored. TEXT must be present with dim == hidden_dim.
  FusionModel(nd::ParamStore<T>& store, const FusionConfig& config,
              const std::vector<features::TrackSpec>& tracks);

  const FusionConfig& config() const { return config_; }
  const EmbeddingTables<T>& tables() const { return tables_; }
  const std::vector<TrackKind>& kinds() const { return tables_.kinds; }

  // Affine map of IMAGE_PATCH or OBJECT tokens into hidden space.
  nd::Tensor<T> project_track(TrackKind kind, const nd::Tensor<T>& tokens) const;
  AssembledSequence<T> assemble(const std::vector<TrackInput<T>>& tracks) const;
  // `records`, when given, receives one AttentionMap per encoder layer run
  // (MULTI: per track in span order).
  nd::Tensor<T> encode(const AssembledSequence<T>& seq, const ForwardContext& ctx,
                       std::vector<AttentionMap>* records = nullptr) const;
  Pooled<T> pool(const nd::Tensor<T>& encoded, const AssembledSequence<T>& seq) const;

  const EncoderStack<T>& shared_encoder() const { return shared_; }
  const EncoderStack<T>& track_encoder(TrackKind kind) const;

 private:
  FusionConfig config_;
  std::vector<std::size_t> max_len_;  // per slot
  EmbeddingTables<T> tables_;
  EncoderStack<T> shared_;
  std::vector<EncoderStack<T>> per_track_;  // per slot, MULTI only
};

}  // namespace mmfuse::fusion
