#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmfuse/features/container.hpp"
#include "mmfuse/features/types.hpp"

namespace mmfuse::features {

struct SynthTrack {
  TrackSpec spec;
  std::size_t min_len = 1;
  std::size_t max_len = 1;  // generated seq_len is uniform in [min_len, max_len]
};

// Desk-scale stand-in for real backbone outputs. Each label owns one random
// unit direction per track; a token carries the signal with probability
// `signal_token_fraction`, receiving strength * sum_c (2y_c - 1) * u_{c,track}
// on top of N(0, noise^2) noise.
struct SynthSpec {
  std::string name = "SYNTH";
  std::size_t record_count = 100;
  std::vector<std::string> label_names;
  std::vector<double> label_priors;
  std::vector<TaskSpec> tasks;
  std::vector<SynthTrack> tracks;
  double signal_strength = 3.0;
  double noise = 1.0;
  double signal_token_fraction = 0.5;
  double no_object_fraction = 0.3;       // per box
  double all_no_object_fraction = 0.05;  // per record: every box is no-object
  std::optional<std::string> parent_label;  // forced to OR of the other labels
  std::uint64_t first_id = 1;

  void validate() const;
  DatasetSpec dataset_spec() const;
};

SynthSpec synth_spec_from_json(const nlohmann::json& j);
nlohmann::json synth_spec_to_json(const SynthSpec& spec);

// MAMI-shaped (5 labels, three tasks, misogynous = OR of the others) and
// FBHM-shaped (1 label) presets.
SynthSpec mami_synth_spec(std::size_t records, std::size_t text_dim, std::size_t image_dim = 32,
                          std::size_t max_boxes = 24, std::size_t max_text = 24);
SynthSpec fbhm_synth_spec(std::size_t records, std::size_t text_dim, std::size_t image_dim = 32,
                          std::size_t max_boxes = 24, std::size_t max_text = 24);

FeatureSet synth_generate(const SynthSpec& spec, std::uint64_t seed);

}  // namespace mmfuse::features
