#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmfuse/ndgrad/tensor.hpp"

namespace mmfuse::ndgrad {

// Optimizer grouping. Weight decay applies to Weight and Embedding only.
enum class ParamGroup { Weight, Bias, Norm, Embedding };

inline bool decays(ParamGroup g) { return g == ParamGroup::Weight || g == ParamGroup::Embedding; }

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
  ParamGroup group;
};

// Owns every trainable tensor of a model in registration order. Registration
// order is stable, so checkpoints and optimizer state index by position.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : rng_(seed) {}

  Tensor<T> normal(const std::string& name, Shape shape, double stddev = 0.02,
                   ParamGroup group = ParamGroup::Weight) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<T> values(shape_numel(shape));
    for (auto& v : values) v = T(dist(rng_));
    return add(name, Tensor<T>(std::move(shape), std::move(values), true), group);
  }

  Tensor<T> constant(const std::string& name, Shape shape, T value, ParamGroup group) {
    return add(name, Tensor<T>(std::move(shape), value, true), group);
  }

  Tensor<T> add(const std::string& name, Tensor<T> tensor, ParamGroup group) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    tensor.set_requires_grad(true);
    index_.emplace(name, params_.size());
    params_.push_back({name, tensor, group});
    return tensor;
  }

  const std::vector<NamedParam<T>>& params() const { return params_; }
  std::vector<NamedParam<T>>& params() { return params_; }

  const NamedParam<T>& find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.tensor);
    return out;
  }

 private:
  std::mt19937_64 rng_;
  std::vector<NamedParam<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace mmfuse::ndgrad
