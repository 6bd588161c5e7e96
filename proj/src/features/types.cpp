#include "mmfuse/features/types.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace mmfuse::features {

std::string_view to_string(TrackKind kind) {
  switch (kind) {
    case TrackKind::ImagePatch: return "IMAGE_PATCH";
    case TrackKind::Object: return "OBJECT";
    case TrackKind::Text: return "TEXT";
  }
  return "UNKNOWN";
}

TrackKind track_kind_from_string(std::string_view name) {
  if (name == "IMAGE_PATCH") return TrackKind::ImagePatch;
  if (name == "OBJECT") return TrackKind::Object;
  if (name == "TEXT") return TrackKind::Text;
  throw FeatureStoreError(ErrorCode::Config, "unknown track kind '" + std::string(name) + "'");
}

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic: return "bad_magic";
    case ErrorCode::BadVersion: return "bad_version";
    case ErrorCode::Truncated: return "truncated";
    case ErrorCode::Inconsistent: return "inconsistent";
    case ErrorCode::ChecksumMismatch: return "checksum_mismatch";
    case ErrorCode::Io: return "io";
    case ErrorCode::Config: return "config";
  }
  return "unknown";
}

void TrackSpec::validate() const {
  auto fail = [&](const std::string& why) {
    throw FeatureStoreError(ErrorCode::Config, "track '" + name + "': " + why);
  };
  if (dim < 1) fail("dim must be >= 1");
  if (max_len < 1) fail("max_len must be >= 1");
  if (has_logits) {
    if (kind != TrackKind::Object) fail("only OBJECT tracks carry logits");
    if (no_object_index >= logit_classes) fail("no_object_index out of range");
  }
}

void DatasetSpec::validate() const {
  if (label_names.empty()) throw FeatureStoreError(ErrorCode::Config, name + ": no labels");
  std::set<std::string> labels(label_names.begin(), label_names.end());
  if (labels.size() != label_names.size()) {
    throw FeatureStoreError(ErrorCode::Config, name + ": duplicate label names");
  }
  std::set<std::string> task_names;
  for (const auto& task : tasks) {
    if (!task_names.insert(task.name).second) {
      throw FeatureStoreError(ErrorCode::Config, name + ": duplicate task '" + task.name + "'");
    }
    if (task.labels.empty()) {
      throw FeatureStoreError(ErrorCode::Config, name + ": task '" + task.name + "' has no labels");
    }
    std::set<std::string> seen;
    for (const auto& l : task.labels) {
      if (!labels.count(l)) {
        throw FeatureStoreError(ErrorCode::Config,
                                name + ": task '" + task.name + "' uses unknown label '" + l + "'");
      }
      if (!seen.insert(l).second) {
        throw FeatureStoreError(ErrorCode::Config,
                                name + ": task '" + task.name + "' repeats label '" + l + "'");
      }
    }
  }
  std::set<TrackKind> kinds;
  for (const auto& t : tracks) {
    t.validate();
    if (!kinds.insert(t.kind).second) {
      throw FeatureStoreError(ErrorCode::Config,
                              name + ": track kind " + std::string(to_string(t.kind)) + " repeated");
    }
  }
  if (!kinds.count(TrackKind::Text)) {
    throw FeatureStoreError(ErrorCode::Config, name + ": a TEXT track is required");
  }
}

std::size_t DatasetSpec::label_index(std::string_view label) const {
  auto it = std::find(label_names.begin(), label_names.end(), label);
  if (it == label_names.end()) {
    throw FeatureStoreError(ErrorCode::Config,
                            name + ": unknown label '" + std::string(label) + "'");
  }
  return static_cast<std::size_t>(it - label_names.begin());
}

std::size_t DatasetSpec::find_track(TrackKind kind) const {
  for (std::size_t i = 0; i < tracks.size(); ++i)
    if (tracks[i].kind == kind) return i;
  return tracks.size();
}

void validate_record(const DatasetSpec& spec, const FeatureRecord& record) {
  auto fail = [&](const std::string& why) {
    throw FeatureStoreError(ErrorCode::Inconsistent,
                            "record " + std::to_string(record.id) + ": " + why);
  };
  if (record.labels.size() != spec.label_names.size()) fail("label vector length mismatch");
  for (auto y : record.labels)
    if (y > 1) fail("labels must be binary");
  if (record.tracks.size() != spec.tracks.size()) fail("track count mismatch");
  for (std::size_t t = 0; t < spec.tracks.size(); ++t) {
    const TrackSpec& ts = spec.tracks[t];
    const TrackData& td = record.tracks[t];
    const std::string where = "track '" + ts.name + "': ";
    if (td.seq_len > ts.max_len) {
      fail(where + "seq_len " + std::to_string(td.seq_len) + " exceeds max_len " +
           std::to_string(ts.max_len));
    }
    if (td.tokens.size() != td.seq_len * ts.dim) fail(where + "token matrix size mismatch");
    if (td.mask.size() != td.seq_len) fail(where + "mask length mismatch");
    for (auto m : td.mask)
      if (m > 1) fail(where + "mask must be binary");
    const std::size_t expected_logits = ts.has_logits ? td.seq_len * ts.logit_classes : 0;
    if (td.logits.size() != expected_logits) fail(where + "logit matrix size mismatch");
    if (ts.kind != TrackKind::Object &&
        std::none_of(td.mask.begin(), td.mask.end(), [](std::uint8_t m) { return m != 0; })) {
      fail(where + "needs at least one valid token");
    }
    for (float v : td.tokens)
      if (!std::isfinite(v)) fail(where + "non-finite token value");
    for (float v : td.logits)
      if (!std::isfinite(v)) fail(where + "non-finite logit");
  }
}

namespace {

std::vector<TrackSpec> standard_tracks(std::size_t patch_dim, std::size_t object_dim,
                                       std::size_t text_dim) {
  return {
      {"clip", TrackKind::ImagePatch, patch_dim, kImagePatchTokens, false, 0, 0},
      {"detr", TrackKind::Object, object_dim, kObjectBoxes, true, kDetrClasses, kDetrClasses - 1},
      {"text", TrackKind::Text, text_dim, kTextTokens, false, 0, 0},
  };
}

}  // namespace

DatasetSpec mami_dataset_spec(std::size_t patch_dim, std::size_t object_dim, std::size_t text_dim) {
  DatasetSpec spec;
  spec.name = "MAMI";
  spec.label_names = {"misogynous", "shaming", "stereotype", "objectification", "violence"};
  spec.tasks = {
      {"MAMI", {"misogynous", "shaming", "stereotype", "objectification", "violence"}},
      {"Task_A", {"misogynous"}},
      {"Task_B", {"shaming", "stereotype", "objectification", "violence"}},
  };
  spec.tracks = standard_tracks(patch_dim, object_dim, text_dim);
  return spec;
}

DatasetSpec fbhm_dataset_spec(std::size_t patch_dim, std::size_t object_dim, std::size_t text_dim) {
  DatasetSpec spec;
  spec.name = "FBHM";
  spec.label_names = {"hateful"};
  spec.tasks = {{"Hateful", {"hateful"}}};
  spec.tracks = standard_tracks(patch_dim, object_dim, text_dim);
  return spec;
}

}  // namespace mmfuse::features
