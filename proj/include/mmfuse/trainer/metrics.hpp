#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace mmfuse::trainer {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr double kDecisionThreshold = 0.5;

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

Confusion confusion(std::span<const double> probs, std::span<const std::uint8_t> labels,
                    double threshold = kDecisionThreshold);

// 2tp / (2tp + fp + fn); 0 when the denominator is 0.
double f1(std::size_t tp, std::size_t fp, std::size_t fn);

// Mean of the positive-class and negative-class F1 of one binary label.
double score_a(std::span<const double> probs, std::span<const std::uint8_t> labels,
               double threshold = kDecisionThreshold);

// Per-label positive F1 weighted by the label's true-instance count.
// probs[i][c] and labels[i][c] for instance i, label c.
double score_b(const std::vector<std::vector<double>>& probs,
               const std::vector<std::vector<std::uint8_t>>& labels,
               double threshold = kDecisionThreshold);

}  // namespace mmfuse::trainer
