#include "mmfuse/fusion/layers.hpp"

#include <cmath>

namespace mmfuse::fusion {

using nd::ParamGroup;
using nd::Tensor;

template <typename T>
Linear<T>::Linear(nd::ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out)
    : W(store.normal(name + ".W", {in, out})),
      b(store.constant(name + ".b", {out}, T(0), ParamGroup::Bias)) {}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  return nd::add_bias(nd::matmul(x, W), b);
}

template <typename T>
LayerNorm<T>::LayerNorm(nd::ParamStore<T>& store, const std::string& name, std::size_t dim)
    : gamma(store.constant(name + ".gamma", {dim}, T(1), ParamGroup::Norm)),
      beta(store.constant(name + ".beta", {dim}, T(0), ParamGroup::Norm)) {}

template <typename T>
Tensor<T> LayerNorm<T>::operator()(const Tensor<T>& x) const {
  return nd::layer_norm(x, gamma, beta);
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(nd::ParamStore<T>& store, const std::string& name,
                                          std::size_t dim, std::size_t heads_)
    : q(store, name + ".q", dim, dim),
      k(store, name + ".k", dim, dim),
      v(store, name + ".v", dim, dim),
      o(store, name + ".o", dim, dim),
      heads(heads_) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError(name + ": dim " + std::to_string(dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::operator()(const Tensor<T>& query_in, const Tensor<T>& key_in,
                                            std::span<const std::uint8_t> key_mask,
                                            const ForwardContext& ctx, AttentionMap* record) const {
  const std::size_t dim = q.out_features();
  const std::size_t head_dim = dim / heads;
  const std::size_t lq = query_in.rows();
  const std::size_t lk = key_in.rows();
  const Tensor<T> Q = q(query_in);
  const Tensor<T> Kt = nd::transpose(k(key_in));
  const Tensor<T> V = v(key_in);
  const T inv_sqrt = T(1) / std::sqrt(T(head_dim));

  if (record) {
    record->rows = lq;
    record->cols = lk;
    record->weights.assign(lq * lk, 0.0);
  }
  std::vector<Tensor<T>> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor<T> qh = heads == 1 ? Q : nd::slice_cols(Q, h * head_dim, head_dim);
    const Tensor<T> kh = heads == 1 ? Kt : nd::slice_rows(Kt, h * head_dim, head_dim);
    const Tensor<T> vh = heads == 1 ? V : nd::slice_cols(V, h * head_dim, head_dim);
    Tensor<T> weights = nd::softmax(nd::scale(nd::matmul(qh, kh), inv_sqrt), 1, key_mask);
    if (record) {
      auto w = weights.data();
      for (std::size_t i = 0; i < w.size(); ++i) record->weights[i] += static_cast<double>(w[i]);
    }
    outs.push_back(nd::matmul(apply_dropout(weights, ctx), vh));
  }
  if (record) {
    for (auto& w : record->weights) w /= static_cast<double>(heads);
  }
  return o(heads == 1 ? outs[0] : nd::concat_cols(outs));
}

template <typename T>
FeedForward<T>::FeedForward(nd::ParamStore<T>& store, const std::string& name, std::size_t dim,
                            std::size_t width)
    : up(store, name + ".up", dim, width), down(store, name + ".down", width, dim) {}

template <typename T>
Tensor<T> FeedForward<T>::operator()(const Tensor<T>& x, const ForwardContext& ctx) const {
  return down(apply_dropout(nd::gelu(up(x)), ctx));
}

template <typename T>
EncoderLayer<T>::EncoderLayer(nd::ParamStore<T>& store, const std::string& name, std::size_t dim,
                              std::size_t heads, std::size_t ff_width)
    : attn(store, name + ".attn", dim, heads),
      norm1(store, name + ".norm1", dim),
      ff(store, name + ".ff", dim, ff_width),
      norm2(store, name + ".norm2", dim) {}

template <typename T>
Tensor<T> EncoderLayer<T>::operator()(const Tensor<T>& x, std::span<const std::uint8_t> mask,
                                      const ForwardContext& ctx, AttentionMap* record) const {
  Tensor<T> h = norm1(nd::add(x, apply_dropout(attn(x, x, mask, ctx, record), ctx)));
  return norm2(nd::add(h, apply_dropout(ff(h, ctx), ctx)));
}

template <typename T>
EncoderStack<T>::EncoderStack(nd::ParamStore<T>& store, const std::string& name_, std::size_t dim,
                              std::size_t n_layers, std::size_t heads, std::size_t ff_width)
    : name(name_) {
  for (std::size_t l = 0; l < n_layers; ++l) {
    layers.emplace_back(store, name + ".l" + std::to_string(l), dim, heads, ff_width);
  }
}

template <typename T>
Tensor<T> EncoderStack<T>::operator()(const Tensor<T>& x, std::span<const std::uint8_t> mask,
                                      const ForwardContext& ctx,
                                      std::vector<AttentionMap>* records) const {
  Tensor<T> h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    AttentionMap* rec = nullptr;
    if (records) rec = &records->emplace_back();
    try {
      h = layers[l](h, mask, ctx, rec);
    } catch (const nd::NumericError& e) {
      throw nd::NumericError(name + " layer " + std::to_string(l) + ": " + e.what());
    }
  }
  return h;
}

#define MMFUSE_INSTANTIATE(T)           \
  template struct Linear<T>;            \
  template struct LayerNorm<T>;         \
  template struct MultiHeadAttention<T>; \
  template struct FeedForward<T>;       \
  template struct EncoderLayer<T>;      \
  template struct EncoderStack<T>;

MMFUSE_INSTANTIATE(float)
MMFUSE_INSTANTIATE(double)
#undef MMFUSE_INSTANTIATE

}  // namespace mmfuse::fusion
