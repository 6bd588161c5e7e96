#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace mmfuse::features {

// Boxes kept when every box would otherwise be masked.
inline constexpr std::size_t kFallbackBoxes = 4;

// No-object masking over a boxes x classes logit matrix.
//
// A box is masked out when its highest-probability class is the no-object
// class (ties go to the lowest class index). If that masks every candidate box,
// the no-object logit is dropped, each box's remaining logits are re-softmaxed
// and the kFallbackBoxes boxes with the highest maximum probability are kept
// (ties go to the lowest box index).
//
// `valid` (optional, one entry per box) excludes padding boxes from both
// rules; excluded boxes are always 0 in the result.
std::vector<std::uint8_t> detr_object_mask(std::span<const float> logits, std::size_t boxes,
                                           std::size_t classes, std::size_t no_object_index,
                                           std::span<const std::uint8_t> valid = {});

}  // namespace mmfuse::features
