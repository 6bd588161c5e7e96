#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "mmfuse/ndgrad/tensor.hpp"

namespace mmfuse::ndgrad {

enum class Activation { Gelu, Sigmoid, Relu };

// Linear algebra.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);

// Elementwise. Binary ops require identical shapes.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T offset);
template <typename T> Tensor<T> add_n(const std::vector<Tensor<T>>& terms);
// x[n x d] + b[d] broadcast over rows.
template <typename T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);
template <typename T> Tensor<T> log(const Tensor<T>& a);
template <typename T> Tensor<T> abs(const Tensor<T>& a);
template <typename T> Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);

// GELU uses the tanh approximation.
template <typename T> Tensor<T> activation(const Tensor<T>& x, Activation kind);
template <typename T> Tensor<T> gelu(const Tensor<T>& x) { return activation(x, Activation::Gelu); }
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x) { return activation(x, Activation::Sigmoid); }
template <typename T> Tensor<T> relu(const Tensor<T>& x) { return activation(x, Activation::Relu); }

// Reductions to a scalar.
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

// Softmax along `axis`. `mask` is either empty, the full shape of x, or one
// entry per position along `axis` (broadcast over the other axes). Masked
// entries are exactly 0; a slice with no unmasked entry is an error.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis, std::span<const std::uint8_t> mask = {});

// Normalizes over the last dimension, then gamma * x + beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

inline constexpr double kCosineNormFloor = 1e-8;

// cos(u, v) over all elements, norms floored at 1e-8.
template <typename T> Tensor<T> cosine_sim(const Tensor<T>& u, const Tensor<T>& v);

// Shape manipulation (row = leading axis).
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> slice_rows(const Tensor<T>& a, std::size_t start, std::size_t count);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& a, std::size_t start, std::size_t count);
template <typename T> Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
// Row i of a 2-D tensor as a 1-D tensor.
template <typename T> Tensor<T> row(const Tensor<T>& a, std::size_t i);
// out[r] = table[indices[r]]; backward scatters-adds.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::size_t> indices);
// Mean of the rows whose mask entry is set. Zero valid rows gives a zero vector.
template <typename T>
Tensor<T> masked_mean_rows(const Tensor<T>& x, std::span<const std::uint8_t> mask);

// Inverted dropout. p == 0 returns x unchanged.
template <typename T> Tensor<T> dropout(const Tensor<T>& x, double p, std::mt19937_64& rng);

}  // namespace mmfuse::ndgrad
