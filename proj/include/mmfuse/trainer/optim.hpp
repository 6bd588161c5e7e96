#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mmfuse/ndgrad/params.hpp"

namespace mmfuse::trainer {

namespace nd = mmfuse::ndgrad;

// Linear warmup from 0 to base_lr over `warmup` steps, then linear decay to 0
// at `total`.
double lr_at(std::size_t step, std::size_t warmup, std::size_t total, double base_lr);

struct MadgradOptions {
  double momentum = 0.9;
  double eps = 1e-6;
};

// Per-parameter dual-averaging state. Empty vectors until the first update.
struct MadgradSlot {
  std::vector<double> s;   // sum of lambda_k * g
  std::vector<double> nu;  // sum of lambda_k * g^2
  std::vector<double> x0;  // parameter value at the first update
};

// One MADGRAD update of a flat parameter:
//   lambda = lr * sqrt(k + 1); s += lambda g; nu += lambda g^2
//   z = x0 - s / (cbrt(nu) + eps); x = m x + (1 - m) z
void madgrad_update(std::span<double> param, std::span<const double> grad, MadgradSlot& slot,
                    std::size_t k, double lr, const MadgradOptions& opt);

template <typename T>
class Madgrad {
 public:
  Madgrad(std::size_t param_count, MadgradOptions opt = {});

  // Adds weight_decay * param to the gradient of decaying groups, applies one
  // update to every parameter and zeroes all gradients.
  void step(nd::ParamStore<T>& store, double lr, double weight_decay);

  std::size_t steps() const { return k_; }
  const MadgradOptions& options() const { return opt_; }
  const std::vector<MadgradSlot>& slots() const { return slots_; }

  // Restores state captured by slots()/steps().
  void restore(std::vector<MadgradSlot> slots, std::size_t k);

 private:
  MadgradOptions opt_;
  std::vector<MadgradSlot> slots_;
  std::size_t k_ = 0;
};

// L2 norm over every gradient element of the store. Throws NumericError on a
// non-finite gradient.
template <typename T>
double global_grad_norm(const nd::ParamStore<T>& store);

// Scales all gradients by max_norm / norm when norm > max_norm. Returns the
// norm before clipping.
template <typename T>
double clip_grad_norm(nd::ParamStore<T>& store, double max_norm);

}  // namespace mmfuse::trainer
