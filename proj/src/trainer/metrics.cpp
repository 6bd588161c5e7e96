#include "mmfuse/trainer/metrics.hpp"

#include <string>

namespace mmfuse::trainer {

Confusion confusion(std::span<const double> probs, std::span<const std::uint8_t> labels,
                    double threshold) {
  if (probs.size() != labels.size()) {
    throw MetricError("confusion: " + std::to_string(probs.size()) + " predictions vs " +
                      std::to_string(labels.size()) + " labels");
  }
  Confusion c;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool pred = probs[i] >= threshold;
    const bool truth = labels[i] != 0;
    if (pred && truth) ++c.tp;
    else if (pred) ++c.fp;
    else if (truth) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double f1(std::size_t tp, std::size_t fp, std::size_t fn) {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * double(tp) / double(denom);
}

double score_a(std::span<const double> probs, std::span<const std::uint8_t> labels, double threshold) {
  if (probs.empty()) throw MetricError("score_a: no predictions");
  const Confusion c = confusion(probs, labels, threshold);
  // The negative class scored as its own positive swaps tp/tn and fp/fn.
  return 0.5 * (f1(c.tp, c.fp, c.fn) + f1(c.tn, c.fn, c.fp));
}

double score_b(const std::vector<std::vector<double>>& probs,
               const std::vector<std::vector<std::uint8_t>>& labels, double threshold) {
  if (probs.empty() || probs.size() != labels.size()) {
    throw MetricError("score_b: need the same non-zero number of prediction and label rows");
  }
  const std::size_t c = labels[0].size();
  std::vector<double> col_p(probs.size());
  std::vector<std::uint8_t> col_y(probs.size());
  double weighted = 0.0;
  std::size_t support = 0;
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (probs[i].size() != c || labels[i].size() != c) {
        throw MetricError("score_b: row " + std::to_string(i) + " has the wrong label count");
      }
      col_p[i] = probs[i][k];
      col_y[i] = labels[i][k];
    }
    const Confusion m = confusion(col_p, col_y, threshold);
    const std::size_t s = m.tp + m.fn;
    weighted += double(s) * f1(m.tp, m.fp, m.fn);
    support += s;
  }
  if (support == 0) throw MetricError("score_b: no label has a true instance");
  return weighted / double(support);
}

}  // namespace mmfuse::trainer
