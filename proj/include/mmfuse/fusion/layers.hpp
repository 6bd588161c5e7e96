#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmfuse/ndgrad/ops.hpp"
#include "mmfuse/ndgrad/params.hpp"

namespace mmfuse::fusion {

namespace nd = mmfuse::ndgrad;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Per-forward switches. Dropout is applied only when training and rng is set.
struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;

  bool dropping() const { return training && dropout > 0.0 && rng != nullptr; }
};

template <typename T>
nd::Tensor<T> apply_dropout(const nd::Tensor<T>& x, const ForwardContext& ctx) {
  return ctx.dropping() ? nd::dropout(x, ctx.dropout, *ctx.rng) : x;
}

// Head-averaged attention weights of one attention call, rows x cols row-major.
struct AttentionMap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> weights;

  double at(std::size_t r, std::size_t c) const { return weights[r * cols + c]; }
};

template <typename T>
struct Linear {
  nd::Tensor<T> W;  // in x out
  nd::Tensor<T> b;  // out

  Linear() = default;
  Linear(nd::ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out);
  nd::Tensor<T> operator()(const nd::Tensor<T>& x) const;
  std::size_t in_features() const { return W.dim(0); }
  std::size_t out_features() const { return W.dim(1); }
};

template <typename T>
struct LayerNorm {
  nd::Tensor<T> gamma;
  nd::Tensor<T> beta;

  LayerNorm() = default;
  LayerNorm(nd::ParamStore<T>& store, const std::string& name, std::size_t dim);
  nd::Tensor<T> operator()(const nd::Tensor<T>& x) const;
};

template <typename T>
struct MultiHeadAttention {
  Linear<T> q, k, v, o;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(nd::ParamStore<T>& store, const std::string& name, std::size_t dim,
                     std::size_t heads);

  // query_in [Lq x d] attends over key_in [Lk x d]; key_mask has Lk entries
  // (empty means all valid).
  nd::Tensor<T> operator()(const nd::Tensor<T>& query_in, const nd::Tensor<T>& key_in,
                           std::span<const std::uint8_t> key_mask, const ForwardContext& ctx,
                           AttentionMap* record = nullptr) const;
};

template <typename T>
struct FeedForward {
  Linear<T> up, down;

  FeedForward() = default;
  FeedForward(nd::ParamStore<T>& store, const std::string& name, std::size_t dim, std::size_t width);
  nd::Tensor<T> operator()(const nd::Tensor<T>& x, const ForwardContext& ctx) const;
};

// Post-norm encoder layer: x = LN(x + SA(x)); x = LN(x + FF(x)).
template <typename T>
struct EncoderLayer {
  MultiHeadAttention<T> attn;
  LayerNorm<T> norm1;
  FeedForward<T> ff;
  LayerNorm<T> norm2;

  EncoderLayer() = default;
  EncoderLayer(nd::ParamStore<T>& store, const std::string& name, std::size_t dim,
               std::size_t heads, std::size_t ff_width);
  nd::Tensor<T> operator()(const nd::Tensor<T>& x, std::span<const std::uint8_t> mask,
                           const ForwardContext& ctx, AttentionMap* record = nullptr) const;
};

template <typename T>
struct EncoderStack {
  std::string name;
  std::vector<EncoderLayer<T>> layers;

  EncoderStack() = default;
  EncoderStack(nd::ParamStore<T>& store, const std::string& name, std::size_t dim,
               std::size_t layers, std::size_t heads, std::size_t ff_width);
  // Non-finite values surface as NumericError naming the stack and layer.
  nd::Tensor<T> operator()(const nd::Tensor<T>& x, std::span<const std::uint8_t> mask,
                           const ForwardContext& ctx,
                           std::vector<AttentionMap>* records = nullptr) const;
};

}  // namespace mmfuse::fusion
