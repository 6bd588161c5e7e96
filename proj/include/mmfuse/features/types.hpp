#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mmfuse::features {

enum class TrackKind : std::uint8_t { ImagePatch = 0, Object = 1, Text = 2 };

inline constexpr std::size_t kTrackKindCount = 3;
inline constexpr std::size_t kImagePatchTokens = 5;
inline constexpr std::size_t kObjectBoxes = 100;
inline constexpr std::size_t kTextTokens = 120;
inline constexpr std::size_t kDetrClasses = 92;

std::string_view to_string(TrackKind kind);
TrackKind track_kind_from_string(std::string_view name);

enum class ErrorCode {
  BadMagic,
  BadVersion,
  Truncated,
  Inconsistent,
  ChecksumMismatch,
  Io,
  Config,
};

std::string_view to_string(ErrorCode code);

class FeatureStoreError : public std::runtime_error {
 public:
  FeatureStoreError(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

struct TrackSpec {
  std::string name;
  TrackKind kind = TrackKind::Text;
  std::size_t dim = 0;
  std::size_t max_len = 0;
  bool has_logits = false;
  std::size_t logit_classes = 0;
  std::size_t no_object_index = 0;

  void validate() const;
  bool operator==(const TrackSpec&) const = default;
};

struct TaskSpec {
  std::string name;
  std::vector<std::string> labels;

  bool operator==(const TaskSpec&) const = default;
};

struct DatasetSpec {
  std::string name;
  std::vector<std::string> label_names;
  std::vector<TaskSpec> tasks;
  std::vector<TrackSpec> tracks;

  void validate() const;
  std::size_t label_index(std::string_view label) const;
  // Index into `tracks`, or tracks.size() when the kind is absent.
  std::size_t find_track(TrackKind kind) const;
  bool operator==(const DatasetSpec&) const = default;
};

// One track of one instance. tokens is seq_len x dim row-major; logits is
// seq_len x logit_classes when the track carries them.
struct TrackData {
  std::size_t seq_len = 0;
  std::vector<float> tokens;
  std::vector<std::uint8_t> mask;
  std::vector<float> logits;

  bool operator==(const TrackData&) const = default;
};

struct FeatureRecord {
  std::uint64_t id = 0;
  std::vector<std::uint8_t> labels;
  std::vector<TrackData> tracks;  // parallel to DatasetSpec::tracks

  bool operator==(const FeatureRecord&) const = default;
};

// Throws FeatureStoreError(Inconsistent) describing the first violation.
void validate_record(const DatasetSpec& spec, const FeatureRecord& record);

// Standard three-track rosters. Feature widths are parameters, never assumed.
DatasetSpec mami_dataset_spec(std::size_t patch_dim, std::size_t object_dim, std::size_t text_dim);
DatasetSpec fbhm_dataset_spec(std::size_t patch_dim, std::size_t object_dim, std::size_t text_dim);

}  // namespace mmfuse::features
