#include "mmfuse/objectives/objectives.hpp"

#include <cmath>
#include <string>

namespace mmfuse::objectives {

using nd::Tensor;

namespace {

constexpr std::size_t kMlpDepth = 2;

void check_binary(std::span<const std::uint8_t> y) {
  for (auto v : y)
    if (v > 1) throw LossError("labels must be 0 or 1, got " + std::to_string(v));
}

}  // namespace

template <typename T>
Tensor<T> bce(const Tensor<T>& p, std::span<const std::uint8_t> y) {
  if (p.numel() != y.size()) {
    throw nd::DimensionError("bce: " + std::to_string(p.numel()) + " probabilities vs " +
                             std::to_string(y.size()) + " labels");
  }
  check_binary(y);
  std::vector<T> pos(y.size()), neg(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    pos[i] = T(y[i]);
    neg[i] = T(1 - y[i]);
  }
  const Tensor<T> yp(p.shape(), std::move(pos));
  const Tensor<T> yn(p.shape(), std::move(neg));
  const Tensor<T> log_p = nd::log(p);
  const Tensor<T> log_q = nd::log(nd::add_scalar(nd::scale(p, T(-1)), T(1)));
  return nd::scale(nd::add(nd::mul(yp, log_p), nd::mul(yn, log_q)), T(-1));
}

double bce(double p, int y) {
  if (y != 0 && y != 1) throw LossError("labels must be 0 or 1, got " + std::to_string(y));
  return -(y * std::log(p) + (1 - y) * std::log(1.0 - p));
}

template <typename T>
Tensor<T> align_loss(const std::vector<AlignTrack<T>>& i, const std::vector<AlignTrack<T>>& j) {
  if (i.size() != j.size() || i.empty()) {
    throw LossError("align_loss needs the same non-zero number of projected tracks per instance");
  }
  std::vector<Tensor<T>> terms;
  for (std::size_t k = 0; k < i.size(); ++k) {
    const Tensor<T> raw = nd::cosine_sim(i[k].raw_mean, j[k].raw_mean);
    const Tensor<T> proj = nd::cosine_sim(i[k].proj_mean, j[k].proj_mean);
    terms.push_back(nd::abs(nd::sub(raw, proj)));
  }
  const Tensor<T> total = terms.size() == 1 ? terms[0] : nd::add_n(terms);
  return nd::scale(total, T(1) / T(terms.size()));
}

int label_similarity(int y_i, int y_j) { return (2 * y_i - 1) * (2 * y_j - 1); }

template <typename T>
Tensor<T> contrastive_loss(const std::vector<Tensor<T>>& h_i, const std::vector<Tensor<T>>& h_j, int s) {
  if (h_i.size() != kMlpDepth || h_j.size() != kMlpDepth) {
    throw LossError("contrastive_loss expects " + std::to_string(kMlpDepth) + " layer inputs, got " +
                    std::to_string(h_i.size()) + " and " + std::to_string(h_j.size()));
  }
  if (s != 1 && s != -1) throw LossError("label similarity must be +1 or -1");
  std::vector<Tensor<T>> terms;
  for (std::size_t l = 0; l < kMlpDepth; ++l) {
    terms.push_back(nd::add_scalar(nd::scale(nd::cosine_sim(h_i[l], h_j[l]), T(-s)), T(1)));
  }
  return nd::scale(nd::add_n(terms), T(0.5));
}

template <typename T>
std::vector<Tensor<T>> align_pairs(const std::vector<std::vector<AlignTrack<T>>>& batch) {
  std::vector<Tensor<T>> out;
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (std::size_t j = i + 1; j < batch.size(); ++j) out.push_back(align_loss(batch[i], batch[j]));
  return out;
}

template <typename T>
LossBreakdown<T> task_loss(const std::vector<TaskInstance<T>>& batch,
                           const std::vector<Tensor<T>>& align_pair, LossFlags flags) {
  const std::size_t n = batch.size();
  if (n == 0) throw LossError("task_loss: empty batch");
  const std::size_t c = batch[0].labels.size();
  if (c == 0) throw LossError("task_loss: task has no classes");
  for (const auto& inst : batch) {
    if (inst.labels.size() != c || inst.probs.numel() != c) {
      throw LossError("task_loss: every instance needs " + std::to_string(c) + " probabilities and labels");
    }
  }

  LossBreakdown<T> out;
  out.flags = flags;
  std::vector<Tensor<T>> main_terms;
  for (const auto& inst : batch) main_terms.push_back(nd::sum(bce(inst.probs, inst.labels)));
  out.main = nd::scale(nd::add_n(main_terms), T(1) / T(n * c));

  const bool pairs = n >= 2;
  const T pair_norm = pairs ? T(2) / T(n * (n - 1)) : T(0);

  if (flags.align && pairs) {
    if (align_pair.size() != n * (n - 1) / 2) {
      throw LossError("task_loss: expected " + std::to_string(n * (n - 1) / 2) + " alignment pairs, got " +
                      std::to_string(align_pair.size()));
    }
    out.align = nd::scale(nd::add_n(align_pair), pair_norm);
  } else {
    out.align = Tensor<T>::scalar(T(0));
  }

  if (flags.contrastive && pairs) {
    // rows[i][cls] holds the per-layer inputs of instance i for class cls.
    std::vector<std::vector<std::vector<Tensor<T>>>> rows(n, std::vector<std::vector<Tensor<T>>>(c));
    for (std::size_t i = 0; i < n; ++i) {
      const auto& h = batch[i].head.layer_inputs;
      if (h.size() != kMlpDepth) {
        throw LossError("contrastive loss expects " + std::to_string(kMlpDepth) + " MLP layer inputs");
      }
      for (std::size_t cls = 0; cls < c; ++cls) {
        for (std::size_t l = 0; l < kMlpDepth; ++l) {
          const bool shared_row = h[l].rows() == 1;
          if (shared_row && cls > 0) {
            rows[i][cls].push_back(rows[i][0][l]);
          } else {
            rows[i][cls].push_back(batch[i].head.layer_input(l, cls));
          }
        }
      }
    }
    std::vector<Tensor<T>> terms;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        for (std::size_t cls = 0; cls < c; ++cls) {
          const int s = label_similarity(batch[i].labels[cls], batch[j].labels[cls]);
          terms.push_back(contrastive_loss(rows[i][cls], rows[j][cls], s));
        }
      }
    }
    out.contrastive = nd::scale(nd::add_n(terms), pair_norm / T(c));
  } else {
    out.contrastive = Tensor<T>::scalar(T(0));
  }

  std::vector<Tensor<T>> parts = {out.main};
  if (flags.align && pairs) parts.push_back(out.align);
  if (flags.contrastive && pairs) parts.push_back(out.contrastive);
  out.total = parts.size() == 1 ? out.main : nd::add_n(parts);
  return out;
}

template <typename T>
Tensor<T> dataset_loss(const std::vector<Tensor<T>>& task_totals) {
  if (task_totals.empty()) throw LossError("dataset_loss: no tasks");
  if (task_totals.size() == 1) return task_totals[0];
  return nd::scale(nd::add_n(task_totals), T(1) / T(task_totals.size()));
}

#define MMFUSE_INSTANTIATE(T)                                                                      \
  template Tensor<T> bce<T>(const Tensor<T>&, std::span<const std::uint8_t>);                      \
  template Tensor<T> align_loss<T>(const std::vector<AlignTrack<T>>&, const std::vector<AlignTrack<T>>&); \
  template Tensor<T> contrastive_loss<T>(const std::vector<Tensor<T>>&, const std::vector<Tensor<T>>&, int); \
  template std::vector<Tensor<T>> align_pairs<T>(const std::vector<std::vector<AlignTrack<T>>>&);  \
  template LossBreakdown<T> task_loss<T>(const std::vector<TaskInstance<T>>&,                      \
                                         const std::vector<Tensor<T>>&, LossFlags);                \
  template Tensor<T> dataset_loss<T>(const std::vector<Tensor<T>>&);

MMFUSE_INSTANTIATE(float)
MMFUSE_INSTANTIATE(double)
#undef MMFUSE_INSTANTIATE

}  // namespace mmfuse::objectives
