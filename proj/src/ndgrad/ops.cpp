#include "mmfuse/ndgrad/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <numeric>
#include <string>

namespace mmfuse::ndgrad {

using detail::make_result;

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Gradient slot of parent i, or an empty span if it does not need one.
template <typename T>
std::span<T> parent_grad(Node<T>& self, std::size_t i) {
  Node<T>& p = *self.parents[i];
  if (!p.requires_grad) return {};
  return p.ensure_grad();
}

template <typename T>
const std::vector<T>& parent_data(const Node<T>& self, std::size_t i) {
  return self.parents[i]->data;
}

void require_rank(const char* op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(s));
  }
}

void require_same(const char* op, const Shape& a, const Shape& b) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
  }
}

// Leading-axis view used by the row ops: [rows, row_width].
std::pair<std::size_t, std::size_t> row_layout(const Shape& s) {
  if (s.empty()) return {1, 1};
  std::size_t width = 1;
  for (std::size_t i = 1; i < s.size(); ++i) width *= s[i];
  return {s[0], width};
}

constexpr double kSqrt2OverPi = 0.7978845608028654;
constexpr double kGeluCubic = 0.044715;

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank("matmul", a.shape(), 2);
  require_rank("matmul", b.shape(), 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<T> out(m * n);
  Eigen::Map<const RowMat<T>> A(a.data().data(), m, k);
  Eigen::Map<const RowMat<T>> B(b.data().data(), k, n);
  Eigen::Map<RowMat<T>> C(out.data(), m, n);
  C.noalias() = A * B;
  return make_result<T>("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    Eigen::Map<const RowMat<T>> G(self.grad.data(), m, n);
    if (auto ga = parent_grad(self, 0); !ga.empty()) {
      Eigen::Map<const RowMat<T>> B(parent_data(self, 1).data(), k, n);
      Eigen::Map<RowMat<T>>(ga.data(), m, k).noalias() += G * B.transpose();
    }
    if (auto gb = parent_grad(self, 1); !gb.empty()) {
      Eigen::Map<const RowMat<T>> A(parent_data(self, 0).data(), m, k);
      Eigen::Map<RowMat<T>>(gb.data(), k, n).noalias() += A.transpose() * G;
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank("transpose", a.shape(), 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> out(r * c);
  auto x = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return make_result<T>("transpose", {c, r}, std::move(out), {a}, [r, c](Node<T>& self) {
    auto ga = parent_grad(self, 0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[j * r + i];
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("add", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result<T>("add", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto g = parent_grad(self, p); !g.empty())
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("sub", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result<T>("sub", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    if (auto g = parent_grad(self, 0); !g.empty())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    if (auto g = parent_grad(self, 1); !g.empty())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("mul", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result<T>("mul", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    const auto& x = parent_data(self, 0);
    const auto& y = parent_data(self, 1);
    if (auto g = parent_grad(self, 0); !g.empty())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i];
    if (auto g = parent_grad(self, 1); !g.empty())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return make_result<T>("scale", a.shape(), std::move(out), {a}, [factor](Node<T>& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + offset;
  return make_result<T>("add_scalar", a.shape(), std::move(out), {a}, [](Node<T>& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> add_n(const std::vector<Tensor<T>>& terms) {
  if (terms.empty()) throw DimensionError("add_n: no terms");
  for (const auto& t : terms) require_same("add_n", terms[0].shape(), t.shape());
  std::vector<T> out(terms[0].numel(), T(0));
  for (const auto& t : terms) {
    auto x = t.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += x[i];
  }
  const std::size_t count = terms.size();
  return make_result<T>("add_n", terms[0].shape(), std::move(out), terms, [count](Node<T>& self) {
    for (std::size_t p = 0; p < count; ++p) {
      if (auto g = parent_grad(self, p); !g.empty())
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require_rank("add_bias", bias.shape(), 1);
  const std::size_t d = bias.dim(0);
  if (x.rank() == 0 || x.shape().back() != d) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(x.shape()));
  }
  std::vector<T> out(x.numel());
  auto xs = x.data(), bs = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[i] + bs[i % d];
  return make_result<T>("add_bias", x.shape(), std::move(out), {x, bias}, [d](Node<T>& self) {
    if (auto g = parent_grad(self, 0); !g.empty())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    if (auto g = parent_grad(self, 1); !g.empty())
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % d] += self.grad[i];
  });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x[i]);
  return make_result<T>("log", a.shape(), std::move(out), {a}, [](Node<T>& self) {
    const auto& x = parent_data(self, 0);
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / x[i];
  });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(x[i]);
  return make_result<T>("abs", a.shape(), std::move(out), {a}, [](Node<T>& self) {
    const auto& x = parent_data(self, 0);
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T sign = x[i] > T(0) ? T(1) : (x[i] < T(0) ? T(-1) : T(0));
      g[i] += self.grad[i] * sign;
    }
  });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(x[i], lo), hi);
  return make_result<T>("clamp", a.shape(), std::move(out), {a}, [lo, hi](Node<T>& self) {
    const auto& x = parent_data(self, 0);
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > lo && x[i] < hi) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> activation(const Tensor<T>& a, Activation kind) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  const char* name = "gelu";
  switch (kind) {
    case Activation::Gelu:
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x[i];
        out[i] = T(0.5 * v * (1.0 + std::tanh(kSqrt2OverPi * (v + kGeluCubic * v * v * v))));
      }
      break;
    case Activation::Sigmoid:
      name = "sigmoid";
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-x[i]));
      break;
    case Activation::Relu:
      name = "relu";
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
      break;
  }
  return make_result<T>(name, a.shape(), std::move(out), {a}, [kind](Node<T>& self) {
    const auto& x = parent_data(self, 0);
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      double d = 0.0;
      const double v = x[i];
      switch (kind) {
        case Activation::Gelu: {
          const double t = std::tanh(kSqrt2OverPi * (v + kGeluCubic * v * v * v));
          d = 0.5 * (1.0 + t) +
              0.5 * v * (1.0 - t * t) * kSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * v * v);
          break;
        }
        case Activation::Sigmoid: {
          const double s = self.data[i];
          d = s * (1.0 - s);
          break;
        }
        case Activation::Relu:
          d = v > 0.0 ? 1.0 : 0.0;
          break;
      }
      g[i] += self.grad[i] * T(d);
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.data()) total += v;
  return make_result<T>("sum", {}, {total}, {a}, [](Node<T>& self) {
    auto g = parent_grad(self, 0);
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(a), T(1) / T(a.numel()));
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis, std::span<const std::uint8_t> mask) {
  const Shape& s = x.shape();
  if (axis >= s.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  const bool full_mask = !mask.empty() && mask.size() == x.numel();
  if (!mask.empty() && !full_mask && mask.size() != len) {
    throw DimensionError("softmax: mask of length " + std::to_string(mask.size()) +
                         " is not broadcastable over " + shape_str(s));
  }
  auto keep = [&](std::size_t idx, std::size_t j) {
    if (mask.empty()) return true;
    return full_mask ? mask[idx] != 0 : mask[j] != 0;
  };

  std::vector<T> out(x.numel(), T(0));
  auto xs = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T peak = -std::numeric_limits<T>::infinity();
      bool any = false;
      for (std::size_t j = 0; j < len; ++j) {
        const std::size_t idx = base + j * inner;
        if (keep(idx, j)) {
          peak = std::max(peak, xs[idx]);
          any = true;
        }
      }
      if (!any) throw DimensionError("softmax: fully masked slice");
      T total = T(0);
      for (std::size_t j = 0; j < len; ++j) {
        const std::size_t idx = base + j * inner;
        if (keep(idx, j)) {
          out[idx] = std::exp(xs[idx] - peak);
          total += out[idx];
        }
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  }
  return make_result<T>("softmax", s, std::move(out), {x}, [outer, inner, len](Node<T>& self) {
    auto g = parent_grad(self, 0);
    const auto& y = self.data;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        T dot = T(0);
        for (std::size_t j = 0; j < len; ++j) dot += y[base + j * inner] * self.grad[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t idx = base + j * inner;
          g[idx] += y[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (d == 0) throw DimensionError("layer_norm: last dimension is 0");
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: affine parameters do not match " + shape_str(x.shape()));
  }
  if (!(eps > T(0))) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t n = x.numel() / d;
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(n);
  auto xs = x.data(), gs = gamma.data(), bs = beta.data();
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = xs.data() + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= T(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * rstd[r];
      xhat[r * d + j] = h;
      out[r * d + j] = gs[j] * h + bs[j];
    }
  }
  return make_result<T>(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [n, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        const auto& gs = parent_data(self, 1);
        auto gx = parent_grad(self, 0);
        auto gg = parent_grad(self, 1);
        auto gb = parent_grad(self, 2);
        for (std::size_t r = 0; r < n; ++r) {
          const T* go = self.grad.data() + r * d;
          const T* h = xhat.data() + r * d;
          if (!gg.empty())
            for (std::size_t j = 0; j < d; ++j) gg[j] += go[j] * h[j];
          if (!gb.empty())
            for (std::size_t j = 0; j < d; ++j) gb[j] += go[j];
          if (gx.empty()) continue;
          T mean_dh = T(0), mean_dh_h = T(0);
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = go[j] * gs[j];
            mean_dh += dh;
            mean_dh_h += dh * h[j];
          }
          mean_dh /= T(d);
          mean_dh_h /= T(d);
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = go[j] * gs[j];
            gx[r * d + j] += rstd[r] * (dh - mean_dh - h[j] * mean_dh_h);
          }
        }
      });
}

template <typename T>
Tensor<T> cosine_sim(const Tensor<T>& u, const Tensor<T>& v) {
  if (u.numel() != v.numel()) {
    throw DimensionError("cosine_sim: shape mismatch " + shape_str(u.shape()) + " vs " +
                         shape_str(v.shape()));
  }
  auto us = u.data(), vs = v.data();
  double uu = 0.0, vv = 0.0, uv = 0.0;
  for (std::size_t i = 0; i < us.size(); ++i) {
    uu += double(us[i]) * us[i];
    vv += double(vs[i]) * vs[i];
    uv += double(us[i]) * vs[i];
  }
  const double nu_raw = std::sqrt(uu), nv_raw = std::sqrt(vv);
  if (nu_raw < kCosineNormFloor || nv_raw < kCosineNormFloor) {
    Verification::flag("cosine_sim: zero-norm input");
  }
  const double nu = std::max(nu_raw, kCosineNormFloor);
  const double nv = std::max(nv_raw, kCosineNormFloor);
  const double c = uv / (nu * nv);
  const bool u_floored = nu_raw < kCosineNormFloor;
  const bool v_floored = nv_raw < kCosineNormFloor;
  return make_result<T>(
      "cosine_sim", {}, {T(c)}, {u, v}, [nu, nv, c, u_floored, v_floored](Node<T>& self) {
        const auto& us = parent_data(self, 0);
        const auto& vs = parent_data(self, 1);
        const double go = self.grad[0];
        if (auto g = parent_grad(self, 0); !g.empty()) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            double d = vs[i] / (nu * nv);
            if (!u_floored) d -= c * us[i] / (nu * nu);
            g[i] += T(go * d);
          }
        }
        if (auto g = parent_grad(self, 1); !g.empty()) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            double d = us[i] / (nu * nv);
            if (!v_floored) d -= c * vs[i] / (nv * nv);
            g[i] += T(go * d);
          }
        }
      });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {a}, [](Node<T>& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t start, std::size_t count) {
  auto [rows, width] = row_layout(a.shape());
  if (a.rank() == 0 || start + count > rows) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of range for " +
                         shape_str(a.shape()));
  }
  Shape shape = a.shape();
  shape[0] = count;
  auto first = a.data().begin() + static_cast<std::ptrdiff_t>(start * width);
  std::vector<T> out(first, first + static_cast<std::ptrdiff_t>(count * width));
  const std::size_t offset = start * width;
  return make_result<T>("slice_rows", std::move(shape), std::move(out), {a},
                        [offset](Node<T>& self) {
                          auto g = parent_grad(self, 0);
                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                            g[offset + i] += self.grad[i];
                        });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t start, std::size_t count) {
  require_rank("slice_cols", a.shape(), 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  if (start + count > c) {
    throw DimensionError("slice_cols: column range out of bounds for " + shape_str(a.shape()));
  }
  std::vector<T> out(r * count);
  auto x = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = x[i * c + start + j];
  return make_result<T>("slice_cols", {r, count}, std::move(out), {a},
                        [r, c, start, count](Node<T>& self) {
                          auto g = parent_grad(self, 0);
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < count; ++j)
                              g[i * c + start + j] += self.grad[i * count + j];
                        });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  Shape tail;
  bool tail_set = false;
  std::size_t total_rows = 0;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    Shape s = p.shape().empty() ? Shape{1} : p.shape();
    Shape t(s.begin() + 1, s.end());
    if (!tail_set) {
      tail = t;
      tail_set = true;
    } else if (t != tail) {
      throw DimensionError("concat_rows: trailing shape mismatch " + shape_str(p.shape()));
    }
    total_rows += s[0];
    sizes.push_back(p.numel());
  }
  Shape shape{total_rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  std::vector<T> out;
  out.reserve(shape_numel(shape));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result<T>("concat_rows", std::move(shape), std::move(out), parts,
                        [sizes = std::move(sizes)](Node<T>& self) {
                          std::size_t offset = 0;
                          for (std::size_t p = 0; p < sizes.size(); ++p) {
                            if (auto g = parent_grad(self, p); !g.empty())
                              for (std::size_t i = 0; i < sizes[p]; ++i)
                                g[i] += self.grad[offset + i];
                            offset += sizes[p];
                          }
                        });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  const std::size_t r = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank("concat_cols", p.shape(), 2);
    if (p.dim(0) != r) throw DimensionError("concat_cols: row count mismatch");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<T> out(r * total);
  std::size_t col = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto x = parts[p].data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < widths[p]; ++j) out[i * total + col + j] = x[i * widths[p] + j];
    col += widths[p];
  }
  return make_result<T>("concat_cols", {r, total}, std::move(out), parts,
                        [r, total, widths = std::move(widths)](Node<T>& self) {
                          std::size_t col = 0;
                          for (std::size_t p = 0; p < widths.size(); ++p) {
                            if (auto g = parent_grad(self, p); !g.empty())
                              for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t j = 0; j < widths[p]; ++j)
                                  g[i * widths[p] + j] += self.grad[i * total + col + j];
                            col += widths[p];
                          }
                        });
}

template <typename T>
Tensor<T> row(const Tensor<T>& a, std::size_t i) {
  require_rank("row", a.shape(), 2);
  return reshape(slice_rows(a, i, 1), Shape{a.dim(1)});
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::size_t> indices) {
  require_rank("gather_rows", table.shape(), 2);
  const std::size_t rows = table.dim(0), d = table.dim(1);
  std::vector<T> out(indices.size() * d);
  auto x = table.data();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= rows) {
      throw DimensionError("gather_rows: index " + std::to_string(indices[r]) +
                           " out of range for " + shape_str(table.shape()));
    }
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(indices[r] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_result<T>("gather_rows", {indices.size(), d}, std::move(out), {table},
                        [d, idx = std::move(idx)](Node<T>& self) {
                          auto g = parent_grad(self, 0);
                          for (std::size_t r = 0; r < idx.size(); ++r)
                            for (std::size_t j = 0; j < d; ++j)
                              g[idx[r] * d + j] += self.grad[r * d + j];
                        });
}

template <typename T>
Tensor<T> masked_mean_rows(const Tensor<T>& x, std::span<const std::uint8_t> mask) {
  require_rank("masked_mean_rows", x.shape(), 2);
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (mask.size() != n) {
    throw DimensionError("masked_mean_rows: mask length " + std::to_string(mask.size()) +
                         " vs " + shape_str(x.shape()));
  }
  const std::size_t valid = static_cast<std::size_t>(std::count_if(
      mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; }));
  std::vector<T> out(d, T(0));
  auto xs = x.data();
  const T inv = valid ? T(1) / T(valid) : T(0);
  for (std::size_t r = 0; r < n; ++r) {
    if (!mask[r]) continue;
    for (std::size_t j = 0; j < d; ++j) out[j] += xs[r * d + j];
  }
  for (auto& v : out) v *= inv;
  Mask m(mask.begin(), mask.end());
  return make_result<T>("masked_mean_rows", {d}, std::move(out), {x},
                        [n, d, inv, m = std::move(m)](Node<T>& self) {
                          auto g = parent_grad(self, 0);
                          for (std::size_t r = 0; r < n; ++r) {
                            if (!m[r]) continue;
                            for (std::size_t j = 0; j < d; ++j) g[r * d + j] += self.grad[j] * inv;
                          }
                        });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  const T keep_scale = T(1.0 / (1.0 - p));
  std::vector<T> factor(x.numel());
  for (auto& f : factor) {
    // 53-bit uniform from the raw engine output; the engine sequence is fully specified.
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    f = u < p ? T(0) : keep_scale;
  }
  std::vector<T> out(x.numel());
  auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[i] * factor[i];
  return make_result<T>("dropout", x.shape(), std::move(out), {x},
                        [factor = std::move(factor)](Node<T>& self) {
                          auto g = parent_grad(self, 0);
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor[i];
                        });
}

#define MMFUSE_INSTANTIATE_OPS(T)                                                            \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> transpose(const Tensor<T>&);                                            \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                             \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                        \
  template Tensor<T> add_n(const std::vector<Tensor<T>>&);                                   \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> log(const Tensor<T>&);                                                  \
  template Tensor<T> abs(const Tensor<T>&);                                                  \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                          \
  template Tensor<T> activation(const Tensor<T>&, Activation);                               \
  template Tensor<T> sum(const Tensor<T>&);                                                  \
  template Tensor<T> mean(const Tensor<T>&);                                                 \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t, std::span<const std::uint8_t>);  \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);    \
  template Tensor<T> cosine_sim(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                       \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                 \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                 \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                             \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                             \
  template Tensor<T> row(const Tensor<T>&, std::size_t);                                     \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);            \
  template Tensor<T> masked_mean_rows(const Tensor<T>&, std::span<const std::uint8_t>);      \
  template Tensor<T> dropout(const Tensor<T>&, double, std::mt19937_64&);

MMFUSE_INSTANTIATE_OPS(float)
MMFUSE_INSTANTIATE_OPS(double)

#undef MMFUSE_INSTANTIATE_OPS

}  // namespace mmfuse::ndgrad
