#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "mmfuse/heads/heads.hpp"

namespace mmfuse::objectives {

namespace nd = mmfuse::ndgrad;

class LossError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Elementwise -[y log p + (1 - y) log(1 - p)]; p must already be clamped.
template <typename T>
nd::Tensor<T> bce(const nd::Tensor<T>& p, std::span<const std::uint8_t> y);
double bce(double p, int y);

// One projected track of one instance: masked means of its raw and projected
// tokens.
template <typename T>
struct AlignTrack {
  nd::Tensor<T> raw_mean;   // [dim]
  nd::Tensor<T> proj_mean;  // [hidden]
};

// Mean over projected tracks of |cos(raw_i, raw_j) - cos(proj_i, proj_j)|.
template <typename T>
nd::Tensor<T> align_loss(const std::vector<AlignTrack<T>>& i, const std::vector<AlignTrack<T>>& j);

// (2 y_i - 1)(2 y_j - 1)
int label_similarity(int y_i, int y_j);

// 1/2 * sum over MLP layers of (1 - s * cos(h_i^l, h_j^l)).
template <typename T>
nd::Tensor<T> contrastive_loss(const std::vector<nd::Tensor<T>>& h_i,
                               const std::vector<nd::Tensor<T>>& h_j, int s);

struct LossFlags {
  bool align = false;
  bool contrastive = false;
};

// Everything task_loss needs for one instance of a batch.
template <typename T>
struct TaskInstance {
  nd::Tensor<T> probs;                 // [C], clamped
  heads::HeadOutput<T> head;           // h0 / h1 per class
  std::vector<std::uint8_t> labels;    // [C]
};

template <typename T>
struct LossBreakdown {
  nd::Tensor<T> main;
  nd::Tensor<T> align;
  nd::Tensor<T> contrastive;
  nd::Tensor<T> total;
  LossFlags flags;
};

// Per-batch task loss:
//   main        = sum_{i,c} L0 / (N C)
//   align       = sum_{i != j} L1 / (N (N - 1))
//   contrastive = sum_{i != j, c} L2 / (N (N - 1) C)
// Ordered-pair sums are twice the unordered ones. Pair terms are 0 when N = 1
// or when their flag is off. `align_pair` holds L1 for unordered pairs
// (i < j) in row-major order; it may be empty when the flag is off.
template <typename T>
LossBreakdown<T> task_loss(const std::vector<TaskInstance<T>>& batch,
                           const std::vector<nd::Tensor<T>>& align_pair, LossFlags flags);

// L1 for every unordered pair (i < j), row-major.
template <typename T>
std::vector<nd::Tensor<T>> align_pairs(const std::vector<std::vector<AlignTrack<T>>>& batch);

// Arithmetic mean of the task totals.
template <typename T>
nd::Tensor<T> dataset_loss(const std::vector<nd::Tensor<T>>& task_totals);

}  // namespace mmfuse::objectives
