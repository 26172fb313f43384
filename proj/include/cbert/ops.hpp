#pragma once

// Differentiable primitives used by the encoder stack. Every op returns a
// fresh Var and registers a backward closure when any input needs a gradient.
// Activations are rank 2 (rows x cols); biases and norm parameters are rank 1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "cbert/autograd.hpp"
#include "cbert/errors.hpp"
#include "cbert/rng.hpp"

namespace cbert::ops {

inline constexpr double kGeluTanhScale = 0.7978845608;  // sqrt(2/pi)
inline constexpr double kGeluCubic = 0.044715;

namespace kernel {

// c[n x m] += a[n x k] * b[k x m]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t n, std::size_t k,
             std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    T* ci = c + i * m;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      if (av == T{0}) continue;
      const T* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[n x k] += g[n x m] * b[k x m]^T
template <typename T>
void gemm_nt(const T* g, const T* b, T* c, std::size_t n, std::size_t k,
             std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* gi = g + i * m;
    T* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T* bp = b + p * m;
      T acc{0};
      for (std::size_t j = 0; j < m; ++j) acc += gi[j] * bp[j];
      ci[p] += acc;
    }
  }
}

// c[k x m] += a[n x k]^T * g[n x m]
template <typename T>
void gemm_tn(const T* a, const T* g, T* c, std::size_t n, std::size_t k,
             std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* ai = a + i * k;
    const T* gi = g + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      if (av == T{0}) continue;
      T* cp = c + p * m;
      for (std::size_t j = 0; j < m; ++j) cp[j] += av * gi[j];
    }
  }
}

}  // namespace kernel

namespace detail {

using cbert::detail::grad_of;
using cbert::detail::make_result;

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

template <typename T>
void require_same(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.value().size() == b.value().size() &&
              a.value().rows() == b.value().rows(),
          std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
              " vs " + shape_string(b.shape()));
}

template <typename T>
Shape matrix_shape(const Tensor<T>& t) {
  return {t.rows(), t.cols()};
}

template <typename T, typename Fwd, typename Deriv>
Var<T> unary(const Var<T>& x, Fwd fwd, Deriv deriv) {
  const Tensor<T>& in = x.value();
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return make_result<T>(std::move(out), {x}, [deriv](Node<T>& n) {
    Tensor<T>* gx = grad_of(n, 0);
    if (!gx) return;
    const Tensor<T>& in = n.parents[0]->value;
    for (std::size_t i = 0; i < in.size(); ++i) {
      (*gx)[i] += n.grad[i] * deriv(in[i], n.value[i]);
    }
  });
}

}  // namespace detail

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  detail::require(bv.rows() == k, "matmul: inner extents differ " +
                                      shape_string(a.shape()) + " x " +
                                      shape_string(b.shape()));
  Tensor<T> out({n, m});
  kernel::gemm_nn(av.data().data(), bv.data().data(), out.data().data(), n, k,
                  m);
  return detail::make_result<T>(std::move(out), {a, b}, [n, k, m](Node<T>& nd) {
    const T* g = nd.grad.data().data();
    if (Tensor<T>* ga = detail::grad_of(nd, 0)) {
      kernel::gemm_nt(g, nd.parents[1]->value.data().data(), ga->data().data(),
                      n, k, m);
    }
    if (Tensor<T>* gb = detail::grad_of(nd, 1)) {
      kernel::gemm_tn(nd.parents[0]->value.data().data(), g, gb->data().data(),
                      n, k, m);
    }
  });
}

template <typename T>
Var<T> transpose(const Var<T>& x) {
  const auto& in = x.value();
  const std::size_t r = in.rows(), c = in.cols();
  Tensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(j, i) = in(i, j);
  return detail::make_result<T>(std::move(out), {x}, [r, c](Node<T>& n) {
    Tensor<T>* gx = detail::grad_of(n, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) (*gx)[i * c + j] += n.grad(j, i);
  });
}

// Residual add of two same-shaped values.
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a, b, "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (Tensor<T>* g = detail::grad_of(n, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
      }
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a, b, "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (Tensor<T>* g = detail::grad_of(n, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
    }
    if (Tensor<T>* g = detail::grad_of(n, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= n.grad[i];
    }
  });
}

// Elementwise product.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a, b, "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    const auto& av = n.parents[0]->value;
    const auto& bv = n.parents[1]->value;
    if (Tensor<T>* g = detail::grad_of(n, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * bv[i];
    }
    if (Tensor<T>* g = detail::grad_of(n, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v *= s;
  return detail::make_result<T>(std::move(out), {x}, [s](Node<T>& n) {
    if (Tensor<T>* g = detail::grad_of(n, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * s;
    }
  });
}

// x[r, :] + bias for every row r.
template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias) {
  const auto& in = x.value();
  const std::size_t r = in.rows(), c = in.cols();
  detail::require(bias.value().size() == c,
                  "add_bias: bias length " +
                      std::to_string(bias.value().size()) + " vs cols " +
                      std::to_string(c));
  Tensor<T> out = in;
  const auto& b = bias.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) += b[j];
  return detail::make_result<T>(std::move(out), {x, bias}, [r, c](Node<T>& n) {
    if (Tensor<T>* g = detail::grad_of(n, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
    }
    if (Tensor<T>* g = detail::grad_of(n, 1)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*g)[j] += n.grad[i * c + j];
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  return add_bias(matmul(x, weight), bias);
}

// Rows of `table` selected by `ids`.
template <typename T>
Var<T> embedding(const Var<T>& table, const std::vector<std::size_t>& ids) {
  const auto& tv = table.value();
  const std::size_t v = tv.rows(), d = tv.cols();
  if (ids.empty()) throw LengthError("embedding: empty id list");
  Tensor<T> out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= v) {
      throw IndexError("embedding: id " + std::to_string(ids[i]) +
                       " outside table of " + std::to_string(v) + " rows");
    }
    std::copy_n(tv.row(ids[i]), d, out.row(i));
  }
  return detail::make_result<T>(std::move(out), {table}, [ids, d](Node<T>& n) {
    Tensor<T>* g = detail::grad_of(n, 0);
    if (!g) return;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      T* dst = g->row(ids[i]);
      const T* src = n.grad.row(i);
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

// Valid-mode 1-d convolution. kernel has shape {Cout, width, Cin}:
//   out[t, c] = bias[c] + sum_{i < width, j < Cin} seq[t + i, j] * K[c, i, j]
// Window t of a row-major seq is the contiguous slice seq[t*Cin, (t+w)*Cin).
template <typename T>
Var<T> conv1d_valid(const Var<T>& seq, const Var<T>& kernel,
                    const Var<T>& bias) {
  const auto& sv = seq.value();
  const auto& kv = kernel.value();
  detail::require(kv.rank() == 3, "conv1d_valid: kernel must be rank 3");
  const std::size_t steps = sv.rows(), cin = sv.cols();
  const std::size_t cout = kv.shape()[0], width = kv.shape()[1];
  detail::require(kv.shape()[2] == cin, "conv1d_valid: channel mismatch");
  detail::require(bias.value().size() == cout, "conv1d_valid: bias length");
  if (width < 1 || steps < width) {
    throw LengthError("conv1d_valid: sequence length " + std::to_string(steps) +
                      " shorter than filter width " + std::to_string(width));
  }
  const std::size_t out_steps = steps - width + 1;
  const std::size_t span = width * cin;
  Tensor<T> out({out_steps, cout});
  const T* s = sv.data().data();
  const T* k = kv.data().data();
  const auto& b = bias.value();
  for (std::size_t t = 0; t < out_steps; ++t) {
    const T* window = s + t * cin;
    for (std::size_t c = 0; c < cout; ++c) {
      const T* kc = k + c * span;
      T acc = b[c];
      for (std::size_t q = 0; q < span; ++q) acc += window[q] * kc[q];
      out(t, c) = acc;
    }
  }
  return detail::make_result<T>(
      std::move(out), {seq, kernel, bias},
      [out_steps, cout, cin, span](Node<T>& n) {
        const T* s = n.parents[0]->value.data().data();
        const T* k = n.parents[1]->value.data().data();
        Tensor<T>* gs = detail::grad_of(n, 0);
        Tensor<T>* gk = detail::grad_of(n, 1);
        Tensor<T>* gb = detail::grad_of(n, 2);
        for (std::size_t t = 0; t < out_steps; ++t) {
          for (std::size_t c = 0; c < cout; ++c) {
            const T g = n.grad(t, c);
            if (g == T{0}) continue;
            if (gb) (*gb)[c] += g;
            if (gk) {
              T* dk = gk->data().data() + c * span;
              const T* window = s + t * cin;
              for (std::size_t q = 0; q < span; ++q) dk[q] += g * window[q];
            }
            if (gs) {
              T* ds = gs->data().data() + t * cin;
              const T* kc = k + c * span;
              for (std::size_t q = 0; q < span; ++q) ds[q] += g * kc[q];
            }
          }
        }
      });
}

// Per-channel maximum across rows; the gradient goes to the first row
// attaining the maximum.
template <typename T>
Var<T> max_over_time(const Var<T>& x) {
  const auto& in = x.value();
  const std::size_t steps = in.rows(), c = in.cols();
  if (in.empty() || steps == 0) throw LengthError("max_over_time: empty input");
  Tensor<T> out({1, c});
  std::vector<std::size_t> arg(c, 0);
  for (std::size_t j = 0; j < c; ++j) {
    T best = in(0, j);
    for (std::size_t t = 1; t < steps; ++t) {
      if (in(t, j) > best) {
        best = in(t, j);
        arg[j] = t;
      }
    }
    out[j] = best;
  }
  return detail::make_result<T>(std::move(out), {x},
                                [arg = std::move(arg), c](Node<T>& n) {
                                  Tensor<T>* g = detail::grad_of(n, 0);
                                  if (!g) return;
                                  for (std::size_t j = 0; j < c; ++j)
                                    (*g)[arg[j] * c + j] += n.grad[j];
                                });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return v > T{0} ? v : T{0}; },
      [](T in, T) { return in > T{0} ? T{1} : T{0}; });
}

// Tanh approximation of GELU.
template <typename T>
Var<T> gelu(const Var<T>& x) {
  const T c = static_cast<T>(kGeluTanhScale);
  const T a = static_cast<T>(kGeluCubic);
  return detail::unary(
      x,
      [c, a](T v) {
        return T(0.5) * v * (T{1} + std::tanh(c * (v + a * v * v * v)));
      },
      [c, a](T v, T) {
        const T t = std::tanh(c * (v + a * v * v * v));
        return T(0.5) * (T{1} + t) +
               T(0.5) * v * (T{1} - t * t) * c * (T{1} + T{3} * a * v * v);
      });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary(
      x,
      [](T v) {
        if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
        const T e = std::exp(v);
        return e / (T{1} + e);
      },
      [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return std::tanh(v); },
      [](T, T y) { return T{1} - y * y; });
}

// Row-wise layer normalization with biased (1/d) variance.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  T eps) {
  const auto& in = x.value();
  const std::size_t r = in.rows(), d = in.cols();
  detail::require(gamma.value().size() == d && beta.value().size() == d,
                  "layer_norm: gamma/beta length");
  if (!(eps >= T{0})) throw InputError("layer_norm: eps must be non-negative");
  Tensor<T> out(in.shape());
  Tensor<T> xhat(detail::matrix_shape(in));
  std::vector<T> inv_std(r);
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = in.row(i);
    T mean{0};
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(d);
    const T denom = std::sqrt(var + eps);
    inv_std[i] = denom > T{0} ? T{1} / denom : T{0};
    for (std::size_t j = 0; j < d; ++j) {
      xhat(i, j) = (row[j] - mean) * inv_std[i];
      out[i * d + j] = gv[j] * xhat(i, j) + bv[j];
    }
  }
  return detail::make_result<T>(
      std::move(out), {x, gamma, beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), r, d](Node<T>& n) {
        const auto& gv = n.parents[1]->value;
        Tensor<T>* gx = detail::grad_of(n, 0);
        Tensor<T>* gg = detail::grad_of(n, 1);
        Tensor<T>* gb = detail::grad_of(n, 2);
        std::vector<T> dxhat(d);
        for (std::size_t i = 0; i < r; ++i) {
          const T* g = n.grad.data().data() + i * d;
          const T* xh = xhat.row(i);
          T mean_dxhat{0}, mean_dxhat_xhat{0};
          for (std::size_t j = 0; j < d; ++j) {
            if (gg) (*gg)[j] += g[j] * xh[j];
            if (gb) (*gb)[j] += g[j];
            dxhat[j] = g[j] * gv[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xh[j];
          }
          if (!gx) continue;
          mean_dxhat /= static_cast<T>(d);
          mean_dxhat_xhat /= static_cast<T>(d);
          T* dx = gx->data().data() + i * d;
          for (std::size_t j = 0; j < d; ++j) {
            dx[j] += inv_std[i] *
                     (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
          }
        }
      });
}

// Row-wise softmax. Columns with keep[j] == 0 receive exactly zero weight and
// do not participate in the normalizer.
template <typename T>
Var<T> softmax(const Var<T>& x, const std::vector<std::uint8_t>& keep = {}) {
  const auto& in = x.value();
  const std::size_t r = in.rows(), c = in.cols();
  detail::require(keep.empty() || keep.size() == c, "softmax: mask length");
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = in.row(i);
    T* o = out.data().data() + i * c;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < c; ++j)
      if (keep.empty() || keep[j]) mx = std::max(mx, row[j]);
    if (mx == -std::numeric_limits<T>::infinity()) continue;  // all masked
    T total{0};
    for (std::size_t j = 0; j < c; ++j) {
      if (keep.empty() || keep[j]) {
        o[j] = std::exp(row[j] - mx);
        total += o[j];
      }
    }
    for (std::size_t j = 0; j < c; ++j) o[j] /= total;
  }
  return detail::make_result<T>(std::move(out), {x}, [r, c](Node<T>& n) {
    Tensor<T>* gx = detail::grad_of(n, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < r; ++i) {
      const T* y = n.value.data().data() + i * c;
      const T* g = n.grad.data().data() + i * c;
      T dot{0};
      for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
      T* dx = gx->data().data() + i * c;
      for (std::size_t j = 0; j < c; ++j) dx[j] += y[j] * (g[j] - dot);
    }
  });
}

// Inverted dropout: kept units are scaled by 1/(1-rate) during training so
// evaluation is the identity.
template <typename T>
Var<T> dropout(const Var<T>& x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout: rate must lie in [0, 1)");
  }
  if (!training || rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> mask(x.shape());
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < rate ? T{0} : keep_scale;
    out[i] *= mask[i];
  }
  return detail::make_result<T>(std::move(out), {x},
                                [mask = std::move(mask)](Node<T>& n) {
                                  Tensor<T>* g = detail::grad_of(n, 0);
                                  if (!g) return;
                                  for (std::size_t i = 0; i < g->size(); ++i)
                                    (*g)[i] += n.grad[i] * mask[i];
                                });
}

// Horizontal concatenation of matrices with equal row counts.
template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw LengthError("concat_cols: no inputs");
  const std::size_t r = parts[0].value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require(p.value().rows() == r, "concat_cols: row mismatch");
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  Tensor<T> out({r, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(v.row(i), widths[k], out.row(i) + off);
    off += widths[k];
  }
  return detail::make_result<T>(
      std::move(out), parts, [widths, r, total](Node<T>& n) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          if (Tensor<T>* g = detail::grad_of(n, k)) {
            for (std::size_t i = 0; i < r; ++i) {
              const T* src = n.grad.data().data() + i * total + off;
              T* dst = g->data().data() + i * widths[k];
              for (std::size_t j = 0; j < widths[k]; ++j) dst[j] += src[j];
            }
          }
          off += widths[k];
        }
      });
}

// Vertical concatenation of matrices with equal column counts.
template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw LengthError("concat_rows: no inputs");
  const std::size_t c = parts[0].value().cols();
  std::vector<std::size_t> heights;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require(p.value().cols() == c, "concat_rows: column mismatch");
    heights.push_back(p.value().rows());
    total += heights.back();
  }
  Tensor<T> out({total, c});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    std::copy(v.data().begin(), v.data().end(), out.row(off));
    off += heights[k];
  }
  return detail::make_result<T>(std::move(out), parts, [heights, c](Node<T>& n) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < heights.size(); ++k) {
      if (Tensor<T>* g = detail::grad_of(n, k)) {
        const T* src = n.grad.row(off);
        for (std::size_t i = 0; i < heights[k] * c; ++i) (*g)[i] += src[i];
      }
      off += heights[k];
    }
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, std::size_t start, std::size_t len) {
  const auto& in = x.value();
  const std::size_t r = in.rows(), c = in.cols();
  detail::require(len > 0 && start + len <= c, "slice_cols: out of range");
  Tensor<T> out({r, len});
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(in.row(i) + start, len, out.row(i));
  return detail::make_result<T>(std::move(out), {x}, [r, c, start, len](Node<T>& n) {
    Tensor<T>* g = detail::grad_of(n, 0);
    if (!g) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < len; ++j)
        (*g)[i * c + start + j] += n.grad[i * len + j];
  });
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, const std::vector<std::size_t>& rows) {
  const auto& in = x.value();
  const std::size_t r = in.rows(), c = in.cols();
  if (rows.empty()) throw LengthError("gather_rows: empty row list");
  Tensor<T> out({rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= r) throw IndexError("gather_rows: row out of range");
    std::copy_n(in.row(rows[i]), c, out.row(i));
  }
  return detail::make_result<T>(std::move(out), {x}, [rows, c](Node<T>& n) {
    Tensor<T>* g = detail::grad_of(n, 0);
    if (!g) return;
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) (*g)(rows[i], j) += n.grad(i, j);
  });
}

// Mean over rows of -log softmax(logits[i])[targets[i]].
template <typename T>
Var<T> cross_entropy(const Var<T>& logits,
                     const std::vector<std::size_t>& targets) {
  const auto& in = logits.value();
  const std::size_t r = in.rows(), k = in.cols();
  detail::require(targets.size() == r, "cross_entropy: one target per row");
  Tensor<T> probs(detail::matrix_shape(in));
  T loss{0};
  for (std::size_t i = 0; i < r; ++i) {
    if (targets[i] >= k) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[i]) +
                       " outside " + std::to_string(k) + " classes");
    }
    const T* row = in.row(i);
    const T mx = *std::max_element(row, row + k);
    T total{0};
    for (std::size_t j = 0; j < k; ++j) {
      probs(i, j) = std::exp(row[j] - mx);
      total += probs(i, j);
    }
    for (std::size_t j = 0; j < k; ++j) probs(i, j) /= total;
    loss += std::log(total) - (row[targets[i]] - mx);
  }
  loss /= static_cast<T>(r);
  return detail::make_result<T>(
      Tensor<T>({1}, std::vector<T>{loss}), {logits},
      [probs = std::move(probs), targets, r, k](Node<T>& n) {
        Tensor<T>* g = detail::grad_of(n, 0);
        if (!g) return;
        const T scale = n.grad[0] / static_cast<T>(r);
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            const T onehot = j == targets[i] ? T{1} : T{0};
            (*g)[i * k + j] += scale * (probs(i, j) - onehot);
          }
        }
      });
}

// Mean squared error against a constant target.
template <typename T>
Var<T> mse(const Var<T>& pred, const Tensor<T>& target) {
  const auto& pv = pred.value();
  detail::require(pv.size() == target.size(), "mse: size mismatch");
  T loss{0};
  for (std::size_t i = 0; i < pv.size(); ++i)
    loss += (pv[i] - target[i]) * (pv[i] - target[i]);
  const T count = static_cast<T>(pv.size());
  loss /= count;
  return detail::make_result<T>(
      Tensor<T>({1}, std::vector<T>{loss}), {pred},
      [target, count](Node<T>& n) {
        Tensor<T>* g = detail::grad_of(n, 0);
        if (!g) return;
        const auto& pv = n.parents[0]->value;
        for (std::size_t i = 0; i < pv.size(); ++i)
          (*g)[i] += n.grad[0] * T{2} * (pv[i] - target[i]) / count;
      });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T total{0};
  for (const T v : x.value().data()) total += v;
  return detail::make_result<T>(Tensor<T>({1}, std::vector<T>{total}), {x},
                                [](Node<T>& n) {
                                  Tensor<T>* g = detail::grad_of(n, 0);
                                  if (!g) return;
                                  for (auto& v : g->data()) v += n.grad[0];
                                });
}

}  // namespace cbert::ops
