#include "mmfuse/fusion/fusion.hpp"

#include <algorithm>

#include "mmfuse/features/detr_mask.hpp"

namespace mmfuse::fusion {

using nd::ParamGroup;
using nd::Tensor;

namespace {

constexpr TrackKind kTrackOrder[] = {TrackKind::ImagePatch, TrackKind::Object, TrackKind::Text};

std::string param_name(TrackKind kind) {
  switch (kind) {
    case TrackKind::ImagePatch: return "image_patch";
    case TrackKind::Object: return "object";
    case TrackKind::Text: return "text";
  }
  return "unknown";
}

bool any_set(std::span<const std::uint8_t> mask) {
  return std::any_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; });
}

}  // namespace

std::string_view to_string(EncoderVariant v) { return v == EncoderVariant::Shared ? "Shared" : "Multi"; }

std::string_view to_string(Pooling p) {
  switch (p) {
    case Pooling::Cls: return "CLS";
    case Pooling::None: return "No";
    case Pooling::TxtCls: return "txt-CLS";
  }
  return "unknown";
}

EncoderVariant encoder_variant_from_string(std::string_view s) {
  if (s == "Shared" || s == "SHARED") return EncoderVariant::Shared;
  if (s == "Multi" || s == "MULTI") return EncoderVariant::Multi;
  throw ConfigError("unknown encoder variant '" + std::string(s) + "'");
}

Pooling pooling_from_string(std::string_view s) {
  if (s == "CLS") return Pooling::Cls;
  if (s == "No" || s == "NONE") return Pooling::None;
  if (s == "txt-CLS" || s == "TXT_CLS") return Pooling::TxtCls;
  throw ConfigError("unknown pooling '" + std::string(s) + "'");
}

void FusionConfig::validate() const {
  if (hidden_dim == 0) throw ConfigError("hidden_dim must be >= 1");
  if (pooling == Pooling::Cls && variant != EncoderVariant::Shared) {
    throw ConfigError("CLS pooling requires the Shared encoder variant");
  }
  if (pooling == Pooling::TxtCls && variant != EncoderVariant::Multi) {
    throw ConfigError("txt-CLS pooling requires the Multi encoder variant");
  }
  if (ff_multiplier == 0) throw ConfigError("ff_multiplier must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  auto check = [&](const StackShape& s, const char* what) {
    if (s.layers == 0) throw ConfigError(std::string(what) + " encoder needs >= 1 layer");
    if (s.heads == 0 || hidden_dim % s.heads != 0) {
      throw ConfigError(std::string(what) + " encoder: hidden_dim " + std::to_string(hidden_dim) +
                        " is not divisible by " + std::to_string(s.heads) + " heads");
    }
  };
  if (variant == EncoderVariant::Shared) {
    check(shared, "shared");
  } else {
    if (use_image_patch) check(image_patch, "image_patch");
    if (use_object) check(object, "object");
    check(text, "text");
  }
}

bool FusionConfig::uses(TrackKind kind) const {
  switch (kind) {
    case TrackKind::ImagePatch: return use_image_patch;
    case TrackKind::Object: return use_object;
    case TrackKind::Text: return true;
  }
  return false;
}

const StackShape& FusionConfig::stack_for(TrackKind kind) const {
  switch (kind) {
    case TrackKind::ImagePatch: return image_patch;
    case TrackKind::Object: return object;
    case TrackKind::Text: return text;
  }
  return text;
}

template <typename T>
std::vector<TrackInput<T>> prepare_tracks(const features::DatasetSpec& spec,
                                          const features::FeatureRecord& record,
                                          const FusionConfig& config) {
  std::vector<TrackInput<T>> out;
  for (TrackKind kind : kTrackOrder) {
    if (!config.uses(kind)) continue;
    const std::size_t t = spec.find_track(kind);
    if (t == spec.tracks.size()) {
      throw ConfigError(spec.name + " has no " + std::string(features::to_string(kind)) + " track");
    }
    const features::TrackSpec& ts = spec.tracks[t];
    const features::TrackData& td = record.tracks.at(t);
    TrackInput<T> in;
    in.kind = kind;
    in.tokens = Tensor<T>({td.seq_len, ts.dim}, std::vector<T>(td.tokens.begin(), td.tokens.end()));
    in.mask = td.mask;
    if (ts.has_logits) {
      in.mask = features::detr_object_mask(td.logits, td.seq_len, ts.logit_classes,
                                           ts.no_object_index, td.mask);
    }
    out.push_back(std::move(in));
  }
  return out;
}

template <typename T>
std::size_t EmbeddingTables<T>::slot(TrackKind kind) const {
  for (std::size_t s = 0; s < kinds.size(); ++s)
    if (kinds[s] == kind) return s;
  throw ConfigError("track " + std::string(features::to_string(kind)) + " is not in use");
}

template <typename T>
FusionModel<T>::FusionModel(nd::ParamStore<T>& store, const FusionConfig& config,
                            const std::vector<features::TrackSpec>& tracks)
    : config_(config) {
  config_.validate();
  const std::size_t H = config_.hidden_dim;
  const bool shared = config_.variant == EncoderVariant::Shared;

  std::vector<const features::TrackSpec*> specs;
  for (TrackKind kind : kTrackOrder) {
    if (!config_.uses(kind)) continue;
    auto it = std::find_if(tracks.begin(), tracks.end(),
                           [&](const features::TrackSpec& t) { return t.kind == kind; });
    if (it == tracks.end()) {
      throw ConfigError("no " + std::string(features::to_string(kind)) + " track available");
    }
    specs.push_back(&*it);
    tables_.kinds.push_back(kind);
  }
  const features::TrackSpec& text = *specs.back();
  if (text.dim != H) {
    throw ConfigError("TEXT features are not projected, so their dim " + std::to_string(text.dim) +
                      " must equal hidden_dim " + std::to_string(H));
  }

  std::size_t rows = 0;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const TrackKind kind = specs[s]->kind;
    std::size_t specials = 0;
    if (shared) {
      specials = s == 0 ? 2 : 1;  // global [CLS] rides on the first track
    } else if (kind == TrackKind::Text) {
      specials = 2;
    }
    max_len_.push_back(specs[s]->max_len);
    tables_.pos_offset.push_back(rows);
    tables_.pos_size.push_back(specs[s]->max_len + specials);
    rows += specs[s]->max_len + specials;
  }

  for (std::size_t s = 0; s < specs.size(); ++s) {
    const TrackKind kind = specs[s]->kind;
    if (kind == TrackKind::Text) {
      tables_.projection.emplace_back();
    } else {
      tables_.projection.emplace_back(store, "fusion.proj." + param_name(kind), specs[s]->dim, H);
    }
  }
  tables_.type_embedding =
      store.normal("fusion.emb.type", {specs.size(), H}, 0.02, ParamGroup::Embedding);
  tables_.positional = store.normal("fusion.emb.pos", {rows, H}, 0.02, ParamGroup::Embedding);
  tables_.cls = store.normal("fusion.emb.cls", {1, H}, 0.02, ParamGroup::Embedding);
  tables_.sep = store.normal("fusion.emb.sep", {1, H}, 0.02, ParamGroup::Embedding);
  tables_.norm = LayerNorm<T>(store, "fusion.emb.norm", H);

  const std::size_t ff = config_.ff_multiplier * H;
  if (shared) {
    shared_ = EncoderStack<T>(store, "fusion.enc.shared", H, config_.shared.layers,
                              config_.shared.heads, ff);
  } else {
    for (TrackKind kind : tables_.kinds) {
      const StackShape& st = config_.stack_for(kind);
      per_track_.emplace_back(store, "fusion.enc." + param_name(kind), H, st.layers, st.heads, ff);
    }
  }
}

template <typename T>
const EncoderStack<T>& FusionModel<T>::track_encoder(TrackKind kind) const {
  if (per_track_.empty()) throw ConfigError("the Shared variant has no per-track encoders");
  return per_track_[tables_.slot(kind)];
}

template <typename T>
Tensor<T> FusionModel<T>::project_track(TrackKind kind, const Tensor<T>& tokens) const {
  if (kind == TrackKind::Text) throw ConfigError("TEXT tokens are never projected");
  const Linear<T>& proj = tables_.projection[tables_.slot(kind)];
  if (tokens.rank() != 2 || tokens.cols() != proj.in_features()) {
    throw nd::DimensionError("project_track: expected n x " + std::to_string(proj.in_features()) +
                             ", got " + nd::shape_str(tokens.shape()));
  }
  if (tokens.rows() == 0) return Tensor<T>(nd::Shape{0, config_.hidden_dim});
  return proj(tokens);
}

template <typename T>
AssembledSequence<T> FusionModel<T>::assemble(const std::vector<TrackInput<T>>& tracks) const {
  const bool shared = config_.variant == EncoderVariant::Shared;
  if (tracks.size() != tables_.kinds.size()) {
    throw ConfigError("assemble: expected " + std::to_string(tables_.kinds.size()) + " tracks, got " +
                      std::to_string(tracks.size()));
  }
  AssembledSequence<T> seq;
  std::vector<Tensor<T>> pieces;
  std::vector<std::size_t> type_rows, pos_rows;

  auto push = [&](const Tensor<T>& piece, std::size_t slot, std::size_t first_pos,
                  std::span<const std::uint8_t> mask) {
    const std::size_t n = piece.rows();
    if (n == 0) return;
    pieces.push_back(piece);
    for (std::size_t i = 0; i < n; ++i) {
      type_rows.push_back(slot);
      pos_rows.push_back(tables_.pos_offset[slot] + first_pos + i);
      seq.type_ids.push_back(tables_.kinds[slot]);
      seq.mask.push_back(mask.empty() ? 1 : mask[i]);
    }
  };

  for (std::size_t s = 0; s < tracks.size(); ++s) {
    const TrackInput<T>& in = tracks[s];
    const TrackKind kind = tables_.kinds[s];
    if (in.kind != kind) {
      throw ConfigError("assemble: track " + std::to_string(s) + " should be " +
                        std::string(features::to_string(kind)));
    }
    const std::size_t n = in.tokens.rows();
    if (n > max_len_[s]) {
      throw ConfigError("assemble: " + std::string(features::to_string(kind)) + " has " +
                        std::to_string(n) + " tokens, more than " + std::to_string(max_len_[s]));
    }
    if (in.mask.size() != n) throw ConfigError("assemble: mask length differs from token count");

    Tensor<T> content = in.tokens;
    if (kind != TrackKind::Text) {
      content = project_track(kind, in.tokens);
      seq.projections.push_back({kind, in.tokens, content, in.mask});
    } else if (in.tokens.cols() != config_.hidden_dim) {
      throw nd::DimensionError("assemble: TEXT tokens must have hidden_dim columns");
    }

    const std::size_t span_start = seq.length();
    std::size_t pos = 0;
    const bool leading = shared ? s == 0 : kind == TrackKind::Text;
    const bool trailing = shared || kind == TrackKind::Text;
    if (leading) {
      if (shared) seq.cls_position = seq.length();
      push(tables_.cls, s, pos++, {});
    }
    seq.segments.push_back({kind, seq.length(), n});
    push(content, s, pos, in.mask);
    pos += n;
    if (trailing) push(tables_.sep, s, pos, {});
    seq.spans.push_back({kind, span_start, seq.length() - span_start});
  }

  const Tensor<T> content = nd::concat_rows(pieces);
  const Tensor<T> types = nd::gather_rows(tables_.type_embedding, std::span<const std::size_t>(type_rows));
  const Tensor<T> positions = nd::gather_rows(tables_.positional, std::span<const std::size_t>(pos_rows));
  seq.tokens = tables_.norm(nd::add_n<T>({content, types, positions}));
  return seq;
}

template <typename T>
Tensor<T> FusionModel<T>::encode(const AssembledSequence<T>& seq, const ForwardContext& ctx,
                                 std::vector<AttentionMap>* records) const {
  if (config_.variant == EncoderVariant::Shared) return shared_(seq.tokens, seq.mask, ctx, records);

  std::vector<Tensor<T>> outputs;
  for (std::size_t s = 0; s < seq.spans.size(); ++s) {
    const Segment& span = seq.spans[s];
    if (span.length == 0) continue;
    Tensor<T> part = nd::slice_rows(seq.tokens, span.start, span.length);
    std::span<const std::uint8_t> mask(seq.mask.data() + span.start, span.length);
    // A segment with no valid token has nothing to attend to; its rows stay
    // masked downstream, so the embedding passes through unchanged.
    if (any_set(mask)) part = per_track_[tables_.slot(span.kind)](part, mask, ctx, records);
    outputs.push_back(part);
  }
  return nd::concat_rows(outputs);
}

template <typename T>
Pooled<T> FusionModel<T>::pool(const Tensor<T>& encoded, const AssembledSequence<T>& seq) const {
  if (encoded.rows() != seq.length()) {
    throw nd::DimensionError("pool: encoded length differs from the assembled sequence");
  }
  Pooled<T> out;
  switch (config_.pooling) {
    case Pooling::Cls: {
      if (!seq.cls_position) throw ConfigError("CLS pooling needs the Shared variant's [CLS] token");
      out.is_vector = true;
      out.sequence = nd::slice_rows(encoded, *seq.cls_position, 1);
      out.mask = {1};
      out.source_kind = {seq.type_ids[*seq.cls_position]};
      break;
    }
    case Pooling::None: {
      out.sequence = encoded;
      out.mask = seq.mask;
      out.source_kind = seq.type_ids;
      break;
    }
    case Pooling::TxtCls: {
      std::vector<Tensor<T>> parts;
      for (const Segment& span : seq.spans) {
        if (span.kind == TrackKind::Text) {
          parts.push_back(nd::slice_rows(encoded, span.start, 1));
          out.mask.push_back(1);
          out.source_kind.push_back(TrackKind::Text);
        } else if (span.length > 0) {
          parts.push_back(nd::slice_rows(encoded, span.start, span.length));
          for (std::size_t i = 0; i < span.length; ++i) {
            out.mask.push_back(seq.mask[span.start + i]);
            out.source_kind.push_back(span.kind);
          }
        }
      }
      out.sequence = nd::concat_rows(parts);
      break;
    }
  }
  return out;
}

#define MMFUSE_INSTANTIATE(T)                                                              \
  template std::vector<TrackInput<T>> prepare_tracks<T>(                                   \
      const features::DatasetSpec&, const features::FeatureRecord&, const FusionConfig&); \
  template struct EmbeddingTables<T>;                                                      \
  template class FusionModel<T>;

MMFUSE_INSTANTIATE(float)
MMFUSE_INSTANTIATE(double)
#undef MMFUSE_INSTANTIATE

}  // namespace mmfuse::fusion
