#include "mmfuse/trainer/schedule.hpp"

#include <algorithm>
#include <stdexcept>

namespace mmfuse::trainer {

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t epoch, Stream purpose, std::uint64_t index) {
  auto lo = [](std::uint64_t v) { return std::uint32_t(v & 0xffffffffu); };
  auto hi = [](std::uint64_t v) { return std::uint32_t(v >> 32); };
  const auto p = std::uint64_t(purpose);
  std::seed_seq seq{lo(seed), hi(seed), lo(epoch), hi(epoch), lo(p), lo(index), hi(index)};
  return std::mt19937_64(seq);
}

// Fixed Fisher-Yates; std::shuffle differs between standard libraries.
template <typename V>
static void fisher_yates(std::vector<V>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = rng() % i;
    std::swap(v[i - 1], v[j]);
  }
}

std::size_t batch_count(std::size_t records, std::size_t batch_size) {
  return (records + batch_size - 1) / batch_size;
}

std::size_t steps_per_epoch(std::size_t batches, std::size_t accumulation_every) {
  return batches / accumulation_every + (batches % accumulation_every != 0 ? 1 : 0);
}

Schedule build_schedule(const std::vector<DatasetIds>& datasets, std::size_t batch_size,
                        std::uint64_t seed, std::uint64_t epoch) {
  if (datasets.empty()) throw std::invalid_argument("build_schedule: no datasets");
  if (batch_size == 0) throw std::invalid_argument("build_schedule: batch_size must be positive");
  std::vector<std::vector<Batch>> per_dataset;
  std::vector<std::size_t> slots;
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    if (datasets[d].ids.empty()) {
      throw std::invalid_argument("build_schedule: dataset '" + datasets[d].name + "' is empty");
    }
    std::vector<std::uint64_t> ids = datasets[d].ids;
    auto rng = make_rng(seed, epoch, Stream::Schedule, d);
    fisher_yates(ids, rng);
    std::vector<Batch> batches;
    for (std::size_t start = 0; start < ids.size(); start += batch_size) {
      const std::size_t end = std::min(ids.size(), start + batch_size);
      batches.push_back({d, std::vector<std::uint64_t>(ids.begin() + long(start), ids.begin() + long(end))});
    }
    slots.insert(slots.end(), batches.size(), d);
    per_dataset.push_back(std::move(batches));
  }
  auto rng = make_rng(seed, epoch, Stream::Interleave);
  fisher_yates(slots, rng);

  Schedule s{seed, epoch, {}};
  std::vector<std::size_t> next(datasets.size(), 0);
  for (std::size_t d : slots) s.batches.push_back(std::move(per_dataset[d][next[d]++]));
  return s;
}

}  // namespace mmfuse::trainer
