// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "limbchan/rng.hpp"
#include "limbchan/tensor.hpp"

namespace limbchan {

enum class Mode { Train, Eval };
enum class ActKind { Sigmoid, Tanh, Relu };
enum class Padding { Same, Valid };

namespace detail {

// C[m x n] += A[m x k] * B[k x n]
inline void mm_acc(const double *A, const double *B, double *C, std::size_t m, std::size_t k,
                   std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double *a = A + i * k;
    double *c = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p];
      const double *b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m x k] += A[m x n] * B[k x n]^T
inline void mm_acc_bt(const double *A, const double *B, double *C, std::size_t m, std::size_t n,
                      std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double *a = A + i * n;
    double *c = C + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double *b = B + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += a[j] * b[j];
      c[p] += s;
    }
  }
}

// C[k x n] += A[m x k]^T * B[m x n]
inline void mm_acc_at(const double *A, const double *B, double *C, std::size_t m, std::size_t k,
                      std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double *a = A + i * k;
    const double *b = B + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p];
      double *c = C + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

inline void require_same_shape(const Tensor &a, const Tensor &b, const char *op) {
  if (a.shape() != b.shape())
    throw ShapeMismatch(std::string(op) + ": " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
}

} // namespace detail

// -- elementwise --------------------------------------------------------------

inline Tensor add(const Tensor &a, const Tensor &b) {
  detail::require_same_shape(a, b, "add");
  Tensor out = Tensor::make_op(a.shape(), {a, b}, [an = a.node(), bn = b.node()](TensorNode &self) {
    const auto &g = self.grad;
    if (an->requires_grad) {
      auto &da = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    }
    if (bn->requires_grad) {
      auto &db = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
    }
  });
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

inline Tensor sub(const Tensor &a, const Tensor &b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out = Tensor::make_op(a.shape(), {a, b}, [an = a.node(), bn = b.node()](TensorNode &self) {
    const auto &g = self.grad;
    if (an->requires_grad) {
      auto &da = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    }
    if (bn->requires_grad) {
      auto &db = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
    }
  });
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  return out;
}

/// Hadamard product.
inline Tensor mul(const Tensor &a, const Tensor &b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out = Tensor::make_op(a.shape(), {a, b}, [an = a.node(), bn = b.node()](TensorNode &self) {
    const auto &g = self.grad;
    if (an->requires_grad) {
      auto &da = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bn->values[i];
    }
    if (bn->requires_grad) {
      auto &db = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * an->values[i];
    }
  });
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

inline Tensor scale(const Tensor &a, double c) {
  Tensor out = Tensor::make_op(a.shape(), {a}, [an = a.node(), c](TensorNode &self) {
    if (!an->requires_grad) return;
    auto &da = an->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) da[i] += c * self.grad[i];
  });
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = c * a.data()[i];
  return out;
}

/// x[..., C] + b[C], broadcasting over all leading dimensions.
inline Tensor add_bias(const Tensor &x, const Tensor &b) {
  if (x.rank() < 1 || b.rank() != 1 || x.shape().back() != b.dim(0))
    throw ShapeMismatch("add_bias: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
  const std::size_t c = b.dim(0);
  const std::size_t rows = x.numel() / c;
  Tensor out =
      Tensor::make_op(x.shape(), {x, b}, [xn = x.node(), bn = b.node(), rows, c](TensorNode &self) {
        const auto &g = self.grad;
        if (xn->requires_grad) {
          auto &dx = xn->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
        }
        if (bn->requires_grad) {
          auto &db = bn->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) db[j] += g[r * c + j];
        }
      });
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) out.data()[r * c + j] = x.data()[r * c + j] + b.data()[j];
  return out;
}

// -- matrix product -----------------------------------------------------------

/// 2-D matrix product. Backward: dA += dC B^T, dB += A^T dC.
inline Tensor matmul(const Tensor &a, const Tensor &b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeMismatch("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::make_op({m, n}, {a, b},
                               [an = a.node(), bn = b.node(), m, k, n](TensorNode &self) {
                                 const double *g = self.grad.data();
                                 if (an->requires_grad)
                                   detail::mm_acc_bt(g, bn->values.data(),
                                                     an->grad_buffer().data(), m, n, k);
                                 if (bn->requires_grad)
                                   detail::mm_acc_at(an->values.data(), g,
                                                     bn->grad_buffer().data(), m, k, n);
                               });
  detail::mm_acc(a.data(), b.data(), out.data(), m, k, n);
  return out;
}

// -- activations --------------------------------------------------------------

inline Tensor activation(const Tensor &x, ActKind kind) {
  Tensor out = Tensor::make_op(x.shape(), {x}, [xn = x.node(), kind](TensorNode &self) {
    if (!xn->requires_grad) return;
    auto &dx = xn->grad_buffer();
    const auto &g = self.grad;
    const auto &y = self.values;
    switch (kind) {
    case ActKind::Sigmoid:
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * y[i] * (1.0 - y[i]);
      break;
    case ActKind::Tanh:
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (1.0 - y[i] * y[i]);
      break;
    case ActKind::Relu:
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += y[i] > 0.0 ? g[i] : 0.0;
      break;
    }
  });
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double v = x.data()[i];
    switch (kind) {
    case ActKind::Sigmoid: out.data()[i] = 1.0 / (1.0 + std::exp(-v)); break;
    case ActKind::Tanh: out.data()[i] = std::tanh(v); break;
    case ActKind::Relu: out.data()[i] = v > 0.0 ? v : 0.0; break;
    }
  }
  return out;
}

inline Tensor sigmoid(const Tensor &x) { return activation(x, ActKind::Sigmoid); }
inline Tensor tanh_act(const Tensor &x) { return activation(x, ActKind::Tanh); }
inline Tensor relu(const Tensor &x) { return activation(x, ActKind::Relu); }

/// Softmax over the last dimension (rows for 2-D, the whole vector for 1-D).
inline Tensor softmax_lastdim(const Tensor &x) {
  if (x.rank() < 1) throw ShapeMismatch("softmax_lastdim: scalar input");
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.numel() / c;
  Tensor out = Tensor::make_op(x.shape(), {x}, [xn = x.node(), rows, c](TensorNode &self) {
    if (!xn->requires_grad) return;
    auto &dx = xn->grad_buffer();
    const auto &g = self.grad;
    const auto &p = self.values;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t off = r * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[off + j] * p[off + j];
      for (std::size_t j = 0; j < c; ++j) dx[off + j] += p[off + j] * (g[off + j] - dot);
    }
  });
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t off = r * c;
    double mx = x.data()[off];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x.data()[off + j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out.data()[off + j] = std::exp(x.data()[off + j] - mx);
      denom += out.data()[off + j];
    }
    for (std::size_t j = 0; j < c; ++j) out.data()[off + j] /= denom;
  }
  return out;
}

// -- shape ops ----------------------------------------------------------------

inline Tensor reshape(const Tensor &x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeMismatch("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor out = Tensor::make_op(std::move(shape), {x}, [xn = x.node()](TensorNode &self) {
    if (!xn->requires_grad) return;
    auto &dx = xn->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i];
  });
  out.values() = x.values();
  return out;
}

/// Selects time step t from a [B, T, C] tensor, giving [B, C].
inline Tensor time_step(const Tensor &x, std::size_t t) {
  if (x.rank() != 3) throw ShapeMismatch("time_step: expected rank 3, got " + shape_str(x.shape()));
  const std::size_t bsz = x.dim(0), steps = x.dim(1), c = x.dim(2);
  if (t >= steps) throw IndexOutOfRange("time_step: t=" + std::to_string(t));
  Tensor out =
      Tensor::make_op({bsz, c}, {x}, [xn = x.node(), bsz, steps, c, t](TensorNode &self) {
        if (!xn->requires_grad) return;
        auto &dx = xn->grad_buffer();
        for (std::size_t b = 0; b < bsz; ++b)
          for (std::size_t j = 0; j < c; ++j) dx[(b * steps + t) * c + j] += self.grad[b * c + j];
      });
  for (std::size_t b = 0; b < bsz; ++b)
    for (std::size_t j = 0; j < c; ++j) out.data()[b * c + j] = x.data()[(b * steps + t) * c + j];
  return out;
}

/// Tiles a [B, C] tensor along a new time axis, giving [B, T, C].
inline Tensor repeat_time(const Tensor &x, std::size_t steps) {
  if (x.rank() != 2) throw ShapeMismatch("repeat_time: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t bsz = x.dim(0), c = x.dim(1);
  Tensor out =
      Tensor::make_op({bsz, steps, c}, {x}, [xn = x.node(), bsz, steps, c](TensorNode &self) {
        if (!xn->requires_grad) return;
        auto &dx = xn->grad_buffer();
        for (std::size_t b = 0; b < bsz; ++b)
          for (std::size_t t = 0; t < steps; ++t)
            for (std::size_t j = 0; j < c; ++j) dx[b * c + j] += self.grad[(b * steps + t) * c + j];
      });
  for (std::size_t b = 0; b < bsz; ++b)
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t j = 0; j < c; ++j)
        out.data()[(b * steps + t) * c + j] = x.data()[b * c + j];
  return out;
}

/// Mean over the time axis of a [B, T, C] tensor, giving [B, C].
inline Tensor global_avg_pool(const Tensor &x) {
  if (x.rank() != 3)
    throw ShapeMismatch("global_avg_pool: expected rank 3, got " + shape_str(x.shape()));
  const std::size_t bsz = x.dim(0), steps = x.dim(1), c = x.dim(2);
  Tensor out = Tensor::make_op({bsz, c}, {x}, [xn = x.node(), bsz, steps, c](TensorNode &self) {
    if (!xn->requires_grad) return;
    auto &dx = xn->grad_buffer();
    const double inv = 1.0 / static_cast<double>(steps);
    for (std::size_t b = 0; b < bsz; ++b)
      for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t j = 0; j < c; ++j)
          dx[(b * steps + t) * c + j] += self.grad[b * c + j] * inv;
  });
  const double inv = 1.0 / static_cast<double>(steps);
  for (std::size_t b = 0; b < bsz; ++b)
    for (std::size_t j = 0; j < c; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < steps; ++t) s += x.data()[(b * steps + t) * c + j];
      out.data()[b * c + j] = s * inv;
    }
  return out;
}

inline Tensor sum(const Tensor &x) {
  Tensor out = Tensor::make_op({}, {x}, [xn = x.node()](TensorNode &self) {
    if (!xn->requires_grad) return;
    auto &dx = xn->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[0];
  });
  double s = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) s += x.data()[i];
  out.data()[0] = s;
  return out;
}

// -- convolution --------------------------------------------------------------

inline std::size_t conv1d_output_len(std::size_t t, std::size_t k, std::size_t stride,
                                     Padding pad) {
  if (pad == Padding::Same) return (t + stride - 1) / stride;
  return (t - k) / stride + 1;
}

/// 1-D cross-correlation along the time axis.
/// x: [B, T, C_in], w: [k, C_in, C_out], bias: [C_out] (or undefined for none).
inline Tensor conv1d(const Tensor &x, const Tensor &w, const Tensor &bias, std::size_t stride,
                     Padding pad) {
  if (x.rank() != 3 || w.rank() != 3)
    throw ShapeMismatch("conv1d: x " + shape_str(x.shape()) + ", w " + shape_str(w.shape()));
  const std::size_t bsz = x.dim(0), t_in = x.dim(1), c_in = x.dim(2);
  const std::size_t k = w.dim(0), c_out = w.dim(2);
  if (w.dim(1) != c_in)
    throw ShapeMismatch("conv1d: input channels " + std::to_string(c_in) + " vs kernel " +
                        std::to_string(w.dim(1)));
  if (stride < 1) throw ShapeMismatch("conv1d: stride must be >= 1");
  if (pad == Padding::Valid && k > t_in)
    throw ShapeMismatch("conv1d: kernel " + std::to_string(k) + " longer than input " +
                        std::to_string(t_in));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != c_out))
    throw ShapeMismatch("conv1d: bias " + shape_str(bias.shape()));

  const std::size_t t_out = conv1d_output_len(t_in, k, stride, pad);
  std::ptrdiff_t pad_left = 0;
  if (pad == Padding::Same) {
    const std::size_t span = (t_out - 1) * stride + k;
    pad_left = static_cast<std::ptrdiff_t>(span > t_in ? (span - t_in) / 2 : 0);
  }

  std::vector<Tensor> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  auto bias_node = bias.defined() ? bias.node() : nullptr;

  Tensor out = Tensor::make_op(
      {bsz, t_out, c_out}, parents,
      [xn = x.node(), wn = w.node(), bias_node, bsz, t_in, c_in, k, c_out, t_out, stride,
       pad_left](TensorNode &self) {
        const auto &g = self.grad;
        const bool need_dx = xn->requires_grad;
        const bool need_dw = wn->requires_grad;
        auto *dx = need_dx ? xn->grad_buffer().data() : nullptr;
        auto *dw = need_dw ? wn->grad_buffer().data() : nullptr;
        for (std::size_t b = 0; b < bsz; ++b) {
          for (std::size_t ot = 0; ot < t_out; ++ot) {
            const double *grow = g.data() + (b * t_out + ot) * c_out;
            const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(ot * stride) - pad_left;
            for (std::size_t dt = 0; dt < k; ++dt) {
              const std::ptrdiff_t it = start + static_cast<std::ptrdiff_t>(dt);
              if (it < 0 || it >= static_cast<std::ptrdiff_t>(t_in)) continue;
              const double *xrow = xn->values.data() + (b * t_in + it) * c_in;
              for (std::size_t ci = 0; ci < c_in; ++ci) {
                const double *wrow = wn->values.data() + (dt * c_in + ci) * c_out;
                if (need_dx) {
                  double s = 0.0;
                  for (std::size_t co = 0; co < c_out; ++co) s += grow[co] * wrow[co];
                  dx[(b * t_in + it) * c_in + ci] += s;
                }
                if (need_dw) {
                  double *dwrow = dw + (dt * c_in + ci) * c_out;
                  const double xv = xrow[ci];
                  for (std::size_t co = 0; co < c_out; ++co) dwrow[co] += xv * grow[co];
                }
              }
            }
          }
        }
        if (bias_node && bias_node->requires_grad) {
          auto &db = bias_node->grad_buffer();
          for (std::size_t r = 0; r < bsz * t_out; ++r)
            for (std::size_t co = 0; co < c_out; ++co) db[co] += g[r * c_out + co];
        }
      });

  for (std::size_t b = 0; b < bsz; ++b) {
    for (std::size_t ot = 0; ot < t_out; ++ot) {
      double *orow = out.data() + (b * t_out + ot) * c_out;
      const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(ot * stride) - pad_left;
      for (std::size_t dt = 0; dt < k; ++dt) {
        const std::ptrdiff_t it = start + static_cast<std::ptrdiff_t>(dt);
        if (it < 0 || it >= static_cast<std::ptrdiff_t>(t_in)) continue;
        const double *xrow = x.data() + (b * t_in + it) * c_in;
        for (std::size_t ci = 0; ci < c_in; ++ci) {
          const double *wrow = w.data() + (dt * c_in + ci) * c_out;
          const double xv = xrow[ci];
          for (std::size_t co = 0; co < c_out; ++co) orow[co] += xv * wrow[co];
        }
      }
      if (bias.defined())
        for (std::size_t co = 0; co < c_out; ++co) orow[co] += bias.data()[co];
    }
  }
  return out;
}

// -- batch normalization --------------------------------------------------------

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;

  void ensure(std::size_t channels) {
    if (running_mean.size() != channels) {
      running_mean.assign(channels, 0.0);
      running_var.assign(channels, 1.0);
    }
  }
};

/// Per-channel normalization over batch and time of a [B, T, C] tensor.
/// Train mode uses batch statistics and updates the running estimates;
/// eval mode uses the running estimates only.
inline Tensor batchnorm1d(const Tensor &x, const Tensor &gamma, const Tensor &beta,
                          BatchNormState &state, Mode mode, double momentum = 0.1,
                          double eps = 1e-5) {
  if (x.rank() != 3)
    throw ShapeMismatch("batchnorm1d: expected rank 3, got " + shape_str(x.shape()));
  const std::size_t bsz = x.dim(0), steps = x.dim(1), c = x.dim(2);
  if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 || beta.dim(0) != c)
    throw ShapeMismatch("batchnorm1d: gamma/beta must be [" + std::to_string(c) + "]");
  if (mode == Mode::Train && bsz < 2)
    throw DegenerateBatch("batchnorm1d: train mode needs batch >= 2, got " +
                          std::to_string(bsz));
  state.ensure(c);

  const std::size_t m = bsz * steps;
  std::vector<double> mean(c, 0.0), invstd(c, 0.0);
  if (mode == Mode::Train) {
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < c; ++j) mean[j] += x.data()[r * c + j];
    for (std::size_t j = 0; j < c; ++j) mean[j] /= static_cast<double>(m);
    std::vector<double> var(c, 0.0);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        const double d = x.data()[r * c + j] - mean[j];
        var[j] += d * d;
      }
    for (std::size_t j = 0; j < c; ++j) {
      var[j] /= static_cast<double>(m);
      invstd[j] = 1.0 / std::sqrt(var[j] + eps);
      state.running_mean[j] = (1.0 - momentum) * state.running_mean[j] + momentum * mean[j];
      state.running_var[j] = (1.0 - momentum) * state.running_var[j] + momentum * var[j];
    }
  } else {
    for (std::size_t j = 0; j < c; ++j) {
      mean[j] = state.running_mean[j];
      invstd[j] = 1.0 / std::sqrt(state.running_var[j] + eps);
    }
  }

  Tensor out = Tensor::make_op(
      x.shape(), {x, gamma, beta},
      [xn = x.node(), gn = gamma.node(), bn = beta.node(), mean, invstd, m, c,
       mode](TensorNode &self) {
        const auto &g = self.grad;
        // dgamma / dbeta
        if (gn->requires_grad || bn->requires_grad) {
          auto &dgamma = gn->grad_buffer();
          auto &dbeta = bn->grad_buffer();
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t j = 0; j < c; ++j) {
              const double xhat = (xn->values[r * c + j] - mean[j]) * invstd[j];
              dgamma[j] += g[r * c + j] * xhat;
              dbeta[j] += g[r * c + j];
            }
        }
        if (!xn->requires_grad) return;
        auto &dx = xn->grad_buffer();
        if (mode == Mode::Eval) {
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t j = 0; j < c; ++j)
              dx[r * c + j] += g[r * c + j] * gn->values[j] * invstd[j];
          return;
        }
        // train mode: batch statistics depend on x
        std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            const double dy = g[r * c + j] * gn->values[j];
            const double xhat = (xn->values[r * c + j] - mean[j]) * invstd[j];
            sum_dy[j] += dy;
            sum_dy_xhat[j] += dy * xhat;
          }
        const double inv_m = 1.0 / static_cast<double>(m);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            const double dy = g[r * c + j] * gn->values[j];
            const double xhat = (xn->values[r * c + j] - mean[j]) * invstd[j];
            dx[r * c + j] +=
                invstd[j] * (dy - inv_m * sum_dy[j] - inv_m * xhat * sum_dy_xhat[j]);
          }
      });
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < c; ++j)
      out.data()[r * c + j] =
          gamma.data()[j] * (x.data()[r * c + j] - mean[j]) * invstd[j] + beta.data()[j];
  return out;
}

// -- dropout ------------------------------------------------------------------

/// Inverted dropout: zeroes with probability p in train mode and scales the
/// survivors by 1/(1-p); identity in eval mode.
inline Tensor dropout(const Tensor &x, double p, Mode mode, Rng &rng) {
  if (p < 0.0 || p >= 1.0)
    throw InvalidSpec("dropout: p must be in [0, 1), got " + std::to_string(p));
  if (mode == Mode::Eval || p == 0.0) {
    Tensor out = Tensor::make_op(x.shape(), {x}, [xn = x.node()](TensorNode &self) {
      if (!xn->requires_grad) return;
      auto &dx = xn->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i];
    });
    out.values() = x.values();
    return out;
  }
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (auto &v : mask) v = rng.uniform() < p ? 0.0 : keep_scale;
  Tensor out =
      Tensor::make_op(x.shape(), {x}, [xn = x.node(), mask](TensorNode &self) {
        if (!xn->requires_grad) return;
        auto &dx = xn->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i] * mask[i];
      });
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = x.data()[i] * mask[i];
  return out;
}

// -- losses -------------------------------------------------------------------

/// Mean of squared differences over all elements.
inline Tensor mse_loss(const Tensor &pred, const Tensor &target) {
  detail::require_same_shape(pred, target, "mse_loss");
  const std::size_t n = pred.numel();
  Tensor out =
      Tensor::make_op({}, {pred, target}, [pn = pred.node(), tn = target.node(), n](TensorNode &self) {
        const double g = self.grad[0] * 2.0 / static_cast<double>(n);
        if (pn->requires_grad) {
          auto &dp = pn->grad_buffer();
          for (std::size_t i = 0; i < n; ++i) dp[i] += g * (pn->values[i] - tn->values[i]);
        }
        if (tn->requires_grad) {
          auto &dt = tn->grad_buffer();
          for (std::size_t i = 0; i < n; ++i) dt[i] -= g * (pn->values[i] - tn->values[i]);
        }
      });
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred.data()[i] - target.data()[i];
    s += d * d;
  }
  out.data()[0] = s / static_cast<double>(n);
  return out;
}

/// Mean over the batch of -log softmax(logits)[target].
/// logits: [B, C]; targets: class indices, one per row.
inline Tensor softmax_cross_entropy(const Tensor &logits, const std::vector<std::size_t> &targets) {
  if (logits.rank() != 2)
    throw ShapeMismatch("softmax_cross_entropy: expected rank 2 logits, got " +
                        shape_str(logits.shape()));
  const std::size_t bsz = logits.dim(0), c = logits.dim(1);
  if (targets.size() != bsz)
    throw ShapeMismatch("softmax_cross_entropy: " + std::to_string(targets.size()) +
                        " targets for batch " + std::to_string(bsz));
  for (std::size_t t : targets)
    if (t >= c) throw IndexOutOfRange("softmax_cross_entropy: target " + std::to_string(t));

  std::vector<double> probs(bsz * c);
  double loss = 0.0;
  for (std::size_t b = 0; b < bsz; ++b) {
    const double *row = logits.data() + b * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[b * c + j] = std::exp(row[j] - mx);
      denom += probs[b * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[b * c + j] /= denom;
    loss -= std::log(probs[b * c + targets[b]]);
  }
  loss /= static_cast<double>(bsz);

  Tensor out = Tensor::make_op(
      {}, {logits}, [ln = logits.node(), probs, targets, bsz, c](TensorNode &self) {
        if (!ln->requires_grad) return;
        auto &dl = ln->grad_buffer();
        const double g = self.grad[0] / static_cast<double>(bsz);
        for (std::size_t b = 0; b < bsz; ++b)
          for (std::size_t j = 0; j < c; ++j) {
            const double onehot = j == targets[b] ? 1.0 : 0.0;
            dl[b * c + j] += g * (probs[b * c + j] - onehot);
          }
      });
  out.data()[0] = loss;
  return out;
}

} // namespace limbchan
