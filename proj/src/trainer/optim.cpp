#include "mmfuse/trainer/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mmfuse::trainer {

double lr_at(std::size_t step, std::size_t warmup, std::size_t total, double base_lr) {
  if (step < warmup) return base_lr * double(step) / double(warmup);
  if (step >= total) return 0.0;
  return base_lr * double(total - step) / double(total - warmup);
}

void madgrad_update(std::span<double> param, std::span<const double> grad, MadgradSlot& slot,
                    std::size_t k, double lr, const MadgradOptions& opt) {
  if (lr < 0) throw std::invalid_argument("madgrad: negative learning rate");
  if (grad.size() != param.size()) throw std::invalid_argument("madgrad: gradient size mismatch");
  if (slot.x0.empty()) {
    slot.x0.assign(param.begin(), param.end());
    slot.s.assign(param.size(), 0.0);
    slot.nu.assign(param.size(), 0.0);
  }
  const double lambda = lr * std::sqrt(double(k) + 1.0);
  const double m = opt.momentum;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    slot.s[i] += lambda * g;
    slot.nu[i] += lambda * g * g;
    const double z = slot.x0[i] - slot.s[i] / (std::cbrt(slot.nu[i]) + opt.eps);
    param[i] = m * param[i] + (1.0 - m) * z;
  }
}

template <typename T>
Madgrad<T>::Madgrad(std::size_t param_count, MadgradOptions opt) : opt_(opt), slots_(param_count) {}

template <typename T>
void Madgrad<T>::step(nd::ParamStore<T>& store, double lr, double weight_decay) {
  auto& params = store.params();
  if (params.size() != slots_.size()) throw std::invalid_argument("madgrad: parameter count changed");
  std::vector<double> x, g;
  for (std::size_t p = 0; p < params.size(); ++p) {
    nd::Tensor<T>& t = params[p].tensor;
    const auto data = t.data();
    x.assign(data.begin(), data.end());
    g.assign(data.size(), 0.0);
    if (t.has_grad()) {
      const auto grad = t.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = double(grad[i]);
    }
    if (weight_decay != 0.0 && nd::decays(params[p].group)) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += weight_decay * x[i];
    }
    madgrad_update(x, g, slots_[p], k_, lr, opt_);
    auto out = t.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = T(x[i]);
    t.zero_grad();
  }
  ++k_;
}

template <typename T>
void Madgrad<T>::restore(std::vector<MadgradSlot> slots, std::size_t k) {
  if (slots.size() != slots_.size()) throw std::invalid_argument("madgrad: restored state size mismatch");
  slots_ = std::move(slots);
  k_ = k;
}

template <typename T>
double global_grad_norm(const nd::ParamStore<T>& store) {
  double sq = 0.0;
  for (const auto& p : store.params()) {
    if (!p.tensor.has_grad()) continue;
    for (T v : p.tensor.grad()) {
      if (!std::isfinite(double(v))) throw nd::NumericError("non-finite gradient in " + p.name);
      sq += double(v) * double(v);
    }
  }
  return std::sqrt(sq);
}

template <typename T>
double clip_grad_norm(nd::ParamStore<T>& store, double max_norm) {
  const double norm = global_grad_norm(store);
  if (norm > max_norm) {
    const T factor = T(max_norm / norm);
    for (auto& p : store.params()) {
      if (!p.tensor.has_grad()) continue;
      for (T& v : p.tensor.mutable_grad()) v *= factor;
    }
  }
  return norm;
}

template class Madgrad<float>;
template class Madgrad<double>;
template double global_grad_norm<float>(const nd::ParamStore<float>&);
template double global_grad_norm<double>(const nd::ParamStore<double>&);
template double clip_grad_norm<float>(nd::ParamStore<float>&, double);
template double clip_grad_norm<double>(nd::ParamStore<double>&, double);

}  // namespace mmfuse::trainer
