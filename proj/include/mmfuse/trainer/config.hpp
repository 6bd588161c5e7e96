#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "mmfuse/fusion/fusion.hpp"
#include "mmfuse/heads/heads.hpp"
#include "mmfuse/objectives/objectives.hpp"

namespace mmfuse::trainer {

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 15;
  double lr = 2e-4;
  std::size_t accumulation_every = 20;
  double weight_decay = 5e-4;
  double clip_norm = 0.5;
  double momentum = 0.9;
  double eps = 1e-6;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct HeadConfig {
  std::size_t mlp_hidden = 768;
  fusion::StackShape decoder{6, 8};

  bool operator==(const HeadConfig&) const = default;
};

// Everything one training run needs besides data. Serialized as one flat JSON
// object; unknown keys are rejected.
struct RunConfig {
  fusion::FusionConfig fusion;
  HeadConfig heads;
  objectives::LossFlags losses;
  bool multi_task = false;
  TrainConfig train;

  void validate() const;
  // CLS pooling feeds the multi-head MLP; the other poolings feed the decoder.
  bool uses_decoder() const { return fusion.pooling != fusion::Pooling::Cls; }
  heads::HeadMode head_mode() const {
    return uses_decoder() ? heads::HeadMode::SharedSingle : heads::HeadMode::MultiHead;
  }
  bool operator==(const RunConfig& o) const {
    return fusion == o.fusion && heads == o.heads && losses.align == o.losses.align &&
           losses.contrastive == o.losses.contrastive && multi_task == o.multi_task && train == o.train;
  }
};

nlohmann::json to_json(const RunConfig& c);
// Missing keys keep their defaults. Throws ConfigError on unknown keys or
// bad values.
RunConfig run_config_from_json(const nlohmann::json& j);

}  // namespace mmfuse::trainer
