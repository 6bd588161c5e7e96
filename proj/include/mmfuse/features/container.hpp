#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmfuse/features/types.hpp"

namespace mmfuse::features {

// On-disk layout of a feature directory (little-endian throughout):
//
//   manifest.json  dataset, label_names, tasks, tracks, record_count,
//                  checksum (SHA-256 hex of records.bin)
//   records.bin    "MMFS", u16 version, then per record:
//                    u64 id, u8 x label_count labels,
//                    per track in manifest order:
//                      u16 seq_len, f32 x seq_len*dim tokens, u8 x seq_len mask,
//                      f32 x seq_len*logit_classes logits (only if has_logits)
inline constexpr char kContainerMagic[4] = {'M', 'M', 'F', 'S'};
inline constexpr std::uint16_t kContainerVersion = 1;
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kRecordsFile = "records.bin";

struct FeatureSet {
  DatasetSpec spec;
  std::vector<FeatureRecord> records;
};

nlohmann::json dataset_spec_to_json(const DatasetSpec& spec);
// Missing "tasks" defaults to one task named after the dataset over all labels.
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);

std::vector<std::uint8_t> encode_records(const DatasetSpec& spec,
                                         std::span<const FeatureRecord> records);
std::vector<FeatureRecord> decode_records(const DatasetSpec& spec,
                                          std::span<const std::uint8_t> bytes,
                                          std::size_t record_count);

void write_features(const std::filesystem::path& dir, const DatasetSpec& spec,
                    std::span<const FeatureRecord> records);
FeatureSet read_features(const std::filesystem::path& dir);

std::string sha256_hex(std::span<const std::uint8_t> bytes);

}  // namespace mmfuse::features
