#pragma once

#include <filesystem>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mmfuse/trainer/model.hpp"
#include "mmfuse/trainer/optim.hpp"

namespace mmfuse::trainer {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File layout (little-endian):
//   "MMCK", u16 version, u32 header length, header JSON,
//   per parameter: raw values (f32 or f64 per header "dtype"),
//   u64 optimizer step count, per parameter: u8 initialized, then s, nu, x0 as f64,
//   64 hex chars: SHA-256 of everything before.
inline constexpr char kCheckpointMagic[4] = {'M', 'M', 'C', 'K'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct CheckpointMeta {
  nlohmann::json config;  // flat run config
  std::size_t epoch = 0;  // last completed epoch
  nlohmann::json state;   // trainer bookkeeping (running maxima, best score)
  nlohmann::json datasets = nlohmann::json::array();  // dataset specs
};

// Written to a temporary file, then renamed over `path`.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model, const Madgrad<T>& opt,
                     const CheckpointMeta& meta);

// Header only; enough to rebuild a matching model.
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

// Restores parameters by name (and the optimizer, when given). Throws
// CheckpointError on a bad file or any name or shape mismatch.
template <typename T>
CheckpointMeta load_checkpoint(const std::filesystem::path& path, Model<T>& model, Madgrad<T>* opt);

}  // namespace mmfuse::trainer
