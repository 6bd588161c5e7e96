#pragma once

#include <string>
#include <vector>

#include "mmfuse/trainer/config.hpp"

namespace mmfuse::expcli {

struct Experiment {
  std::string id;  // two-digit experiment number, e.g. "02"
  trainer::RunConfig config;
};

inline constexpr int kRounds = 4;

// The experiments of ablation round 1..4. Every axis is set explicitly; the
// remaining fields come from `base`.
//
//   1: 00 Shared+CLS, 01 Shared+No, 02 Multi+No, 03 Multi+txt-CLS
//   2: Multi+No with (align, contrastive) = 02 (No, No), 10 (Yes, No),
//      12 (No, Yes), 13 (Yes, Yes)
//   3: experiment 10 with backbones 10 both, 20 IMAGE_PATCH, 21 OBJECT
//   4: 10 single-task vs 30 multi-task (30 trains for twice the epochs)
std::vector<Experiment> ablation_round(int round, const trainer::RunConfig& base);

}  // namespace mmfuse::expcli
