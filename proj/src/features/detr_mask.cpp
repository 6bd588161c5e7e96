#include "mmfuse/features/detr_mask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmfuse/features/types.hpp"

namespace mmfuse::features {

namespace {

// Softmax of one row, optionally skipping one class, returning the arg/value
// of the maximum probability.
std::pair<std::size_t, double> max_probability(const float* row, std::size_t classes,
                                               std::size_t skip) {
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < classes; ++c)
    if (c != skip) peak = std::max(peak, static_cast<double>(row[c]));
  double total = 0.0;
  std::size_t best = classes;
  double best_p = -1.0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (c == skip) continue;
    total += std::exp(static_cast<double>(row[c]) - peak);
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (c == skip) continue;
    const double p = std::exp(static_cast<double>(row[c]) - peak) / total;
    if (p > best_p) {
      best_p = p;
      best = c;
    }
  }
  return {best, best_p};
}

}  // namespace

std::vector<std::uint8_t> detr_object_mask(std::span<const float> logits, std::size_t boxes,
                                           std::size_t classes, std::size_t no_object_index,
                                           std::span<const std::uint8_t> valid) {
  if (logits.size() != boxes * classes) {
    throw FeatureStoreError(ErrorCode::Inconsistent, "detr_object_mask: logit matrix size mismatch");
  }
  if (no_object_index >= classes || classes < 2) {
    throw FeatureStoreError(ErrorCode::Config, "detr_object_mask: bad no-object index");
  }
  if (!valid.empty() && valid.size() != boxes) {
    throw FeatureStoreError(ErrorCode::Inconsistent, "detr_object_mask: validity mask length");
  }
  for (float v : logits) {
    if (!std::isfinite(v)) {
      throw FeatureStoreError(ErrorCode::Inconsistent, "detr_object_mask: non-finite logit");
    }
  }
  auto usable = [&](std::size_t b) { return valid.empty() || valid[b] != 0; };

  std::vector<std::uint8_t> mask(boxes, 0);
  bool any_kept = false;
  for (std::size_t b = 0; b < boxes; ++b) {
    if (!usable(b)) continue;
    const auto [arg, p] = max_probability(logits.data() + b * classes, classes, classes);
    mask[b] = arg != no_object_index;
    any_kept = any_kept || mask[b];
  }
  if (any_kept) return mask;

  std::vector<std::size_t> candidates;
  std::vector<double> score(boxes, 0.0);
  for (std::size_t b = 0; b < boxes; ++b) {
    if (!usable(b)) continue;
    score[b] = max_probability(logits.data() + b * classes, classes, no_object_index).second;
    candidates.push_back(b);
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  const std::size_t keep = std::min(kFallbackBoxes, candidates.size());
  for (std::size_t i = 0; i < keep; ++i) mask[candidates[i]] = 1;
  return mask;
}

}  // namespace mmfuse::features
