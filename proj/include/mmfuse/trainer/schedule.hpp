#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace mmfuse::trainer {

// Independent RNG streams for one run: a stream per (seed, epoch, purpose).
enum class Stream : std::uint64_t { Init = 1, Schedule = 2, Dropout = 3, Interleave = 4 };

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t epoch, Stream purpose,
                         std::uint64_t index = 0);

struct DatasetIds {
  std::string name;
  std::vector<std::uint64_t> ids;
};

struct Batch {
  std::size_t dataset = 0;  // index into the build_schedule input
  std::vector<std::uint64_t> ids;
};

struct Schedule {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::vector<Batch> batches;
};

// Shuffles each dataset, cuts it into batches (the last one may be short) and
// interleaves all batches in a random order where each dataset keeps its
// batch count.
Schedule build_schedule(const std::vector<DatasetIds>& datasets, std::size_t batch_size,
                        std::uint64_t seed, std::uint64_t epoch);

std::size_t batch_count(std::size_t records, std::size_t batch_size);

// Optimizer steps in one epoch of `batches`: one per full accumulation window
// plus a flush step for any remainder.
std::size_t steps_per_epoch(std::size_t batches, std::size_t accumulation_every);

}  // namespace mmfuse::trainer
