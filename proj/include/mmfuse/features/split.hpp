#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mmfuse/features/types.hpp"

namespace mmfuse::features {

struct Split {
  std::vector<std::uint64_t> train;
  std::vector<std::uint64_t> dev;
};

// Stratifies on the full label vector. Each stratum of n records sends
// round(ratio * n) to train (a singleton stratum goes to train). Both lists
// are sorted by id.
Split stratified_split(std::span<const FeatureRecord> records, double ratio, std::uint64_t seed);

// split.json: {"ratio": r, "seed": s, "train": [...], "dev": [...]}
void write_split(const std::filesystem::path& file, const Split& split, double ratio,
                 std::uint64_t seed);
Split read_split(const std::filesystem::path& file);

}  // namespace mmfuse::features
