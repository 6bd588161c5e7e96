#include "mmfuse/features/split.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include <nlohmann/json.hpp>

namespace mmfuse::features {

Split stratified_split(std::span<const FeatureRecord> records, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw FeatureStoreError(ErrorCode::Config, "split ratio must lie strictly between 0 and 1");
  }
  std::map<std::vector<std::uint8_t>, std::vector<std::uint64_t>> strata;
  for (const auto& r : records) strata[r.labels].push_back(r.id);

  std::mt19937_64 rng(seed);
  Split split;
  for (auto& [key, ids] : strata) {
    std::sort(ids.begin(), ids.end());
    std::shuffle(ids.begin(), ids.end(), rng);
    const std::size_t n = ids.size();
    const std::size_t n_train =
        n == 1 ? 1 : static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
    split.train.insert(split.train.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.dev.insert(split.dev.end(), ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.dev.begin(), split.dev.end());
  return split;
}

void write_split(const std::filesystem::path& file, const Split& split, double ratio,
                 std::uint64_t seed) {
  nlohmann::json j = {{"ratio", ratio}, {"seed", seed}, {"train", split.train}, {"dev", split.dev}};
  std::ofstream out(file);
  if (!out) throw FeatureStoreError(ErrorCode::Io, "cannot write " + file.string());
  out << j.dump() << "\n";
}

Split read_split(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw FeatureStoreError(ErrorCode::Io, "cannot open " + file.string());
  try {
    auto j = nlohmann::json::parse(in);
    return {j.at("train").get<std::vector<std::uint64_t>>(), j.at("dev").get<std::vector<std::uint64_t>>()};
  } catch (const nlohmann::json::exception& e) {
    throw FeatureStoreError(ErrorCode::Inconsistent, file.string() + ": " + e.what());
  }
}

}  // namespace mmfuse::features
