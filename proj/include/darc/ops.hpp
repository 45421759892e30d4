#pragma once

// Differentiable primitives. Every op takes the Graph it records into;
// when the graph is in inference mode, or no input requires grad, the op
// only computes its forward value.
//
// Reductions run in fixed sequential order so results are reproducible
// bit-for-bit within one build.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "darc/tensor.hpp"

namespace darc::ops {

namespace detail {

inline Tensor output(Graph& g, Shape shape, bool track) {
  (void)g;
  return Tensor(std::move(shape), track);
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

inline std::size_t last_dim(const Tensor& t) { return t.rank() == 0 ? 1 : t.shape().back(); }

template <class Fwd, class Deriv>
Tensor unary(Graph& g, const Tensor& x, Fwd fwd, Deriv deriv) {
  const bool track = g.tracks({&x});
  Tensor out = output(g, x.shape(), track);
  const auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = fwd(xv[i]);
  if (track) {
    g.record({x}, out, [x, out, deriv]() mutable {
      if (!x.requires_grad()) return;
      const auto xv = x.values();
      const auto ov = out.values();
      const auto og = out.grad();
      auto xg = x.grad();
      for (std::size_t i = 0; i < xv.size(); ++i) xg[i] += og[i] * deriv(xv[i], ov[i]);
    });
  }
  return out;
}

// C[M x N] += A'[M x K] . B[K x N], where A'(r, c) = A[r * rs + c * cs]
// and B, C are row-major. Rows of C are processed in pairs and the inner
// dimension in groups of four so each pass over a C row does four
// multiply-adds per load; the loop order is fixed, so results are
// bit-reproducible.
inline void gemm(std::size_t M, std::size_t K, std::size_t N, const double* A, std::size_t rs, std::size_t cs,
                 const double* __restrict B, double* __restrict C) {
  std::size_t r = 0;
  for (; r + 2 <= M; r += 2) {
    double* __restrict c0 = C + r * N;
    double* __restrict c1 = c0 + N;
    std::size_t p = 0;
    for (; p + 4 <= K; p += 4) {
      const double* __restrict b0 = B + p * N;
      const double* __restrict b1 = b0 + N;
      const double* __restrict b2 = b1 + N;
      const double* __restrict b3 = b2 + N;
      const double x0 = A[r * rs + p * cs], x1 = A[r * rs + (p + 1) * cs];
      const double x2 = A[r * rs + (p + 2) * cs], x3 = A[r * rs + (p + 3) * cs];
      const double y0 = A[(r + 1) * rs + p * cs], y1 = A[(r + 1) * rs + (p + 1) * cs];
      const double y2 = A[(r + 1) * rs + (p + 2) * cs], y3 = A[(r + 1) * rs + (p + 3) * cs];
      for (std::size_t j = 0; j < N; ++j) {
        const double v0 = b0[j], v1 = b1[j], v2 = b2[j], v3 = b3[j];
        c0[j] += (x0 * v0 + x1 * v1) + (x2 * v2 + x3 * v3);
        c1[j] += (y0 * v0 + y1 * v1) + (y2 * v2 + y3 * v3);
      }
    }
    for (; p < K; ++p) {
      const double* __restrict b0 = B + p * N;
      const double x0 = A[r * rs + p * cs], y0 = A[(r + 1) * rs + p * cs];
      for (std::size_t j = 0; j < N; ++j) {
        c0[j] += x0 * b0[j];
        c1[j] += y0 * b0[j];
      }
    }
  }
  for (; r < M; ++r) {
    double* __restrict c0 = C + r * N;
    std::size_t p = 0;
    for (; p + 4 <= K; p += 4) {
      const double* __restrict b0 = B + p * N;
      const double* __restrict b1 = b0 + N;
      const double* __restrict b2 = b1 + N;
      const double* __restrict b3 = b2 + N;
      const double x0 = A[r * rs + p * cs], x1 = A[r * rs + (p + 1) * cs];
      const double x2 = A[r * rs + (p + 2) * cs], x3 = A[r * rs + (p + 3) * cs];
      for (std::size_t j = 0; j < N; ++j) c0[j] += (x0 * b0[j] + x1 * b1[j]) + (x2 * b2[j] + x3 * b3[j]);
    }
    for (; p < K; ++p) {
      const double* __restrict b0 = B + p * N;
      const double x0 = A[r * rs + p * cs];
      for (std::size_t j = 0; j < N; ++j) c0[j] += x0 * b0[j];
    }
  }
}

// Row-major [rows x cols] -> [cols x rows].
inline std::vector<double> transposed(const double* X, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = X[i * cols + j];
  return t;
}

// C[m x n] += A[m x k] . B[k x n]
inline void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* A, const double* B, double* C) {
  gemm(m, k, n, A, k, 1, B, C);
}

// C[m x n] += A[m x k] . B[n x k]^T
inline void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* A, const double* B, double* C) {
  const auto bt = transposed(B, n, k);
  gemm(m, k, n, A, k, 1, bt.data(), C);
}

// C[k x n] += A[m x k]^T . B[m x n]
inline void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* A, const double* B, double* C) {
  gemm(k, m, n, A, 1, k, B, C);
}

}  // namespace detail

// a[...xk] . b[kxn] -> [...xn]
inline Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  if (a.rank() < 1 || b.rank() != 2 || detail::last_dim(a) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  const std::size_t k = b.dim(0), n = b.dim(1), m = a.numel() / k;
  Shape shape = a.shape();
  shape.back() = n;
  const bool track = g.tracks({&a, &b});
  Tensor out = detail::output(g, std::move(shape), track);
  detail::gemm_nn(m, k, n, a.data(), b.data(), out.data());
  if (track) {
    g.record({a, b}, out, [a, b, out, m, k, n]() mutable {
      const double* dC = out.grad_data();
      if (a.requires_grad()) detail::gemm_nt(m, n, k, dC, b.data(), a.grad_data());
      if (b.requires_grad()) detail::gemm_tn(m, k, n, a.data(), dC, b.grad_data());
    });
  }
  return out;
}

// a[...xk] . b[nxk]^T -> [...xn]. This is x.W^T for a weight stored
// output-major, i.e. the per-row form of W.x.
inline Tensor matmul_nt(Graph& g, const Tensor& a, const Tensor& b) {
  if (a.rank() < 1 || b.rank() != 2 || detail::last_dim(a) != b.dim(1)) {
    throw DimensionError("matmul_nt: cannot multiply " + shape_str(a.shape()) + " by transpose of " +
                         shape_str(b.shape()));
  }
  const std::size_t k = b.dim(1), n = b.dim(0), m = a.numel() / k;
  Shape shape = a.shape();
  shape.back() = n;
  const bool track = g.tracks({&a, &b});
  Tensor out = detail::output(g, std::move(shape), track);
  detail::gemm_nt(m, k, n, a.data(), b.data(), out.data());
  if (track) {
    g.record({a, b}, out, [a, b, out, m, k, n]() mutable {
      const double* dC = out.grad_data();
      if (a.requires_grad()) detail::gemm_nn(m, n, k, dC, b.data(), a.grad_data());
      if (b.requires_grad()) detail::gemm_tn(m, n, k, dC, a.data(), b.grad_data());
    });
  }
  return out;
}

// Batched a[Bxmxk] . b[Bxkxn] -> [Bxmxn].
inline Tensor bmm(Graph& g, const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw DimensionError("bmm: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  }
  const std::size_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  const bool track = g.tracks({&a, &b});
  Tensor out = detail::output(g, Shape{bs, m, n}, track);
  for (std::size_t s = 0; s < bs; ++s) detail::gemm_nn(m, k, n, a.data() + s * m * k, b.data() + s * k * n, out.data() + s * m * n);
  if (track) {
    g.record({a, b}, out, [a, b, out, bs, m, k, n]() mutable {
      for (std::size_t s = 0; s < bs; ++s) {
        const double* dC = out.grad_data() + s * m * n;
        if (a.requires_grad()) detail::gemm_nt(m, n, k, dC, b.data() + s * k * n, a.grad_data() + s * m * k);
        if (b.requires_grad()) detail::gemm_tn(m, k, n, a.data() + s * m * k, dC, b.grad_data() + s * k * n);
      }
    });
  }
  return out;
}

// Batched a[Bxmxk] . b[Bxnxk]^T -> [Bxmxn].
inline Tensor bmm_nt(Graph& g, const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2)) {
    throw DimensionError("bmm_nt: cannot multiply " + shape_str(a.shape()) + " by transpose of " +
                         shape_str(b.shape()));
  }
  const std::size_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
  const bool track = g.tracks({&a, &b});
  Tensor out = detail::output(g, Shape{bs, m, n}, track);
  for (std::size_t s = 0; s < bs; ++s) detail::gemm_nt(m, k, n, a.data() + s * m * k, b.data() + s * n * k, out.data() + s * m * n);
  if (track) {
    g.record({a, b}, out, [a, b, out, bs, m, k, n]() mutable {
      for (std::size_t s = 0; s < bs; ++s) {
        const double* dC = out.grad_data() + s * m * n;
        if (a.requires_grad()) detail::gemm_nn(m, n, k, dC, b.data() + s * n * k, a.grad_data() + s * m * k);
        if (b.requires_grad()) detail::gemm_tn(m, n, k, dC, a.data() + s * m * k, b.grad_data() + s * n * k);
      }
    });
  }
  return out;
}

inline Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  detail::require_same_shape("add", a, b);
  const bool track = g.tracks({&a, &b});
  Tensor out = detail::output(g, a.shape(), track);
  const auto av = a.values();
  const auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (track) {
    g.record({a, b}, out, [a, b, out]() mutable {
      const auto og = out.grad();
      if (a.requires_grad()) {
        auto ag = a.grad();
        for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
      }
      if (b.requires_grad()) {
        auto bg = b.grad();
        for (std::size_t i = 0; i < og.size(); ++i) bg[i] += og[i];
      }
    });
  }
  return out;
}

// Elementwise product.
inline Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  detail::require_same_shape("mul", a, b);
  const bool track = g.tracks({&a, &b});
  Tensor out = detail::output(g, a.shape(), track);
  const auto av = a.values();
  const auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (track) {
    g.record({a, b}, out, [a, b, out]() mutable {
      const auto og = out.grad();
      const auto av = a.values();
      const auto bv = b.values();
      if (a.requires_grad()) {
        auto ag = a.grad();
        for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto bg = b.grad();
        for (std::size_t i = 0; i < og.size(); ++i) bg[i] += og[i] * av[i];
      }
    });
  }
  return out;
}

// Multiplication by a constant.
inline Tensor scale(Graph& g, const Tensor& x, double c) {
  return detail::unary(
      g, x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

// x * s for a one-element tensor s (learnable scalars such as lambda).
inline Tensor mul_scalar(Graph& g, const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) throw DimensionError("mul_scalar: scalar operand has shape " + shape_str(s.shape()));
  const bool track = g.tracks({&x, &s});
  Tensor out = detail::output(g, x.shape(), track);
  const double sv = s.values()[0];
  const auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * sv;
  if (track) {
    g.record({x, s}, out, [x, s, out]() mutable {
      const auto og = out.grad();
      const auto xv = x.values();
      if (x.requires_grad()) {
        const double sv = s.values()[0];
        auto xg = x.grad();
        for (std::size_t i = 0; i < og.size(); ++i) xg[i] += og[i] * sv;
      }
      if (s.requires_grad()) {
        double acc = 0.0;
        for (std::size_t i = 0; i < og.size(); ++i) acc += og[i] * xv[i];
        s.grad()[0] += acc;
      }
    });
  }
  return out;
}

// x[...xn] + bias[n], broadcast over leading dims. A one-element bias
// broadcasts to every entry when n == 1.
inline Tensor add_bias(Graph& g, const Tensor& x, const Tensor& bias) {
  const std::size_t n = detail::last_dim(x);
  if (bias.numel() != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match last dim of " +
                         shape_str(x.shape()));
  }
  const bool track = g.tracks({&x, &bias});
  Tensor out = detail::output(g, x.shape(), track);
  const auto xv = x.values();
  const auto bv = bias.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] + bv[i % n];
  if (track) {
    g.record({x, bias}, out, [x, bias, out, n]() mutable {
      const auto og = out.grad();
      if (x.requires_grad()) {
        auto xg = x.grad();
        for (std::size_t i = 0; i < og.size(); ++i) xg[i] += og[i];
      }
      if (bias.requires_grad()) {
        auto bg = bias.grad();
        for (std::size_t i = 0; i < og.size(); ++i) bg[i % n] += og[i];
      }
    });
  }
  return out;
}

// x[B x ...] scaled per leading index by gate[B x 1].
inline Tensor mul_per_sample(Graph& g, const Tensor& x, const Tensor& gate) {
  if (x.rank() < 1 || gate.numel() != x.dim(0)) {
    throw DimensionError("mul_per_sample: gate " + shape_str(gate.shape()) + " does not match batch of " +
                         shape_str(x.shape()));
  }
  const std::size_t bs = x.dim(0), per = x.numel() / bs;
  const bool track = g.tracks({&x, &gate});
  Tensor out = detail::output(g, x.shape(), track);
  const auto xv = x.values();
  const auto gv = gate.values();
  auto ov = out.values();
  for (std::size_t b = 0; b < bs; ++b)
    for (std::size_t i = 0; i < per; ++i) ov[b * per + i] = gv[b] * xv[b * per + i];
  if (track) {
    g.record({x, gate}, out, [x, gate, out, bs, per]() mutable {
      const auto og = out.grad();
      const auto xv = x.values();
      const auto gv = gate.values();
      for (std::size_t b = 0; b < bs; ++b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < per; ++i) {
          if (x.requires_grad()) x.grad()[b * per + i] += og[b * per + i] * gv[b];
          acc += og[b * per + i] * xv[b * per + i];
        }
        if (gate.requires_grad()) gate.grad()[b] += acc;
      }
    });
  }
  return out;
}

// ReLU with subgradient 0 at the kink.
inline Tensor relu(Graph& g, const Tensor& x) {
  return detail::unary(
      g, x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

// Exact GELU, x * Phi(x).
inline Tensor gelu(Graph& g, const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return detail::unary(
      g, x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

inline double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Tensor sigmoid(Graph& g, const Tensor& x) {
  return detail::unary(
      g, x, [](double v) { return stable_sigmoid(v); }, [](double, double y) { return y * (1.0 - y); });
}

// Softmax over the last axis, max-subtracted per row.
inline Tensor softmax_rows(Graph& g, const Tensor& x) {
  const std::size_t n = detail::last_dim(x), rows = x.numel() / n;
  const bool track = g.tracks({&x});
  Tensor out = detail::output(g, x.shape(), track);
  const double* X = x.data();
  double* Y = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X + r * n;
    double* yr = Y + r * n;
    double mx = xr[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= z;
  }
  if (track) {
    g.record({x}, out, [x, out, rows, n]() mutable {
      const double* Y = out.data();
      const double* dY = out.grad_data();
      double* dX = x.grad_data();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += dY[r * n + j] * Y[r * n + j];
        for (std::size_t j = 0; j < n; ++j) dX[r * n + j] += Y[r * n + j] * (dY[r * n + j] - dot);
      }
    });
  }
  return out;
}

// (x - mean) / sqrt(var + eps) over the last axis, followed by the affine
// gamma * xhat + beta when both are defined.
inline Tensor layer_norm(Graph& g, const Tensor& x, double eps, const Tensor& gamma = {},
                         const Tensor& beta = {}) {
  const std::size_t d = detail::last_dim(x), rows = x.numel() / d;
  const bool affine = gamma.defined();
  if (affine != beta.defined()) throw ContractError("layer_norm: gamma and beta must be given together");
  if (affine && (gamma.numel() != d || beta.numel() != d)) {
    throw DimensionError("layer_norm: affine parameters must have " + std::to_string(d) + " entries");
  }
  const bool track = affine ? g.tracks({&x, &gamma, &beta}) : g.tracks({&x});
  Tensor out = detail::output(g, x.shape(), track);
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  const double* X = x.data();
  double* Y = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += X[r * d + j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = X[r * d + j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (X[r * d + j] - mean) * is;
      xhat[r * d + j] = h;
      Y[r * d + j] = affine ? gamma.values()[j] * h + beta.values()[j] : h;
    }
  }
  if (track) {
    std::vector<Tensor> inputs{x};
    if (affine) {
      inputs.push_back(gamma);
      inputs.push_back(beta);
    }
    g.record(std::move(inputs), out,
             [x, gamma, beta, out, affine, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)]() mutable {
               const double* dY = out.grad_data();
               std::vector<double> dh(d);
               for (std::size_t r = 0; r < rows; ++r) {
                 double mean_dh = 0.0, mean_dh_h = 0.0;
                 for (std::size_t j = 0; j < d; ++j) {
                   const double gy = dY[r * d + j];
                   dh[j] = affine ? gy * gamma.values()[j] : gy;
                   mean_dh += dh[j];
                   mean_dh_h += dh[j] * xhat[r * d + j];
                   if (affine) {
                     if (gamma.requires_grad()) gamma.grad()[j] += gy * xhat[r * d + j];
                     if (beta.requires_grad()) beta.grad()[j] += gy;
                   }
                 }
                 mean_dh /= static_cast<double>(d);
                 mean_dh_h /= static_cast<double>(d);
                 if (x.requires_grad()) {
                   double* dX = x.grad_data();
                   for (std::size_t j = 0; j < d; ++j)
                     dX[r * d + j] += inv_std[r] * (dh[j] - mean_dh - xhat[r * d + j] * mean_dh_h);
                 }
               }
             });
  }
  return out;
}

// Mean over `axis`, which is removed from the shape.
inline Tensor mean_axis(Graph& g, const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("mean_axis: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  }
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) shape.push_back(s[i]);
  const bool track = g.tracks({&x});
  Tensor out = detail::output(g, shape, track);
  const double* X = x.data();
  double* Y = out.data();
  const double inv = 1.0 / static_cast<double>(len);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      double acc = 0.0;
      for (std::size_t t = 0; t < len; ++t) acc += X[(o * len + t) * inner + i];
      Y[o * inner + i] = acc * inv;
    }
  if (track) {
    g.record({x}, out, [x, out, outer, inner, len, inv]() mutable {
      const double* dY = out.grad_data();
      double* dX = x.grad_data();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t t = 0; t < len; ++t)
          for (std::size_t i = 0; i < inner; ++i) dX[(o * len + t) * inner + i] += dY[o * inner + i] * inv;
    });
  }
  return out;
}

// Sum of all entries, as a scalar.
inline Tensor sum(Graph& g, const Tensor& x) {
  const bool track = g.tracks({&x});
  Tensor out = detail::output(g, Shape{}, track);
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  out.values()[0] = acc;
  if (track) {
    g.record({x}, out, [x, out]() mutable {
      const double d = out.grad()[0];
      for (double& v : x.grad()) v += d;
    });
  }
  return out;
}

// Concatenation along the last axis; all other dims must agree.
inline Tensor concat_last(Graph& g, std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_last: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape l = p.shape();
    l.pop_back();
    if (l != lead) throw DimensionError("concat_last: leading shape mismatch " + shape_str(p.shape()));
    total += p.shape().back();
  }
  Shape shape = lead;
  shape.push_back(total);
  const std::size_t rows = numel_of(lead);
  const bool track = g.tracks(parts);
  Tensor out = detail::output(g, shape, track);
  double* Y = out.data();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape().back();
    const double* P = p.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) Y[r * total + offset + j] = P[r * w + j];
    offset += w;
  }
  if (track) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    g.record(inputs, out, [inputs, out, rows, total]() mutable {
      const double* dY = out.grad_data();
      std::size_t offset = 0;
      for (auto& p : inputs) {
        const std::size_t w = p.shape().back();
        if (p.requires_grad()) {
          double* dP = p.grad_data();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j) dP[r * w + j] += dY[r * total + offset + j];
        }
        offset += w;
      }
    });
  }
  return out;
}

// Same values under a new shape of equal element count.
inline Tensor reshape(Graph& g, const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " cannot become " + shape_str(shape));
  }
  const bool track = g.tracks({&x});
  Tensor out(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()), track);
  if (track) {
    g.record({x}, out, [x, out]() mutable {
      const auto og = out.grad();
      auto xg = x.grad();
      for (std::size_t i = 0; i < og.size(); ++i) xg[i] += og[i];
    });
  }
  return out;
}

// Each row over the last axis divided by max(||row||_2, eps).
inline Tensor l2_normalize_rows(Graph& g, const Tensor& x, double eps = 1e-12) {
  const std::size_t d = detail::last_dim(x), rows = x.numel() / d;
  const bool track = g.tracks({&x});
  Tensor out = detail::output(g, x.shape(), track);
  std::vector<double> denom(rows);
  std::vector<bool> clamped(rows);
  const double* X = x.data();
  double* Y = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += X[r * d + j] * X[r * d + j];
    const double nrm = std::sqrt(ss);
    clamped[r] = !(nrm > eps);
    denom[r] = clamped[r] ? eps : nrm;
    for (std::size_t j = 0; j < d; ++j) Y[r * d + j] = X[r * d + j] / denom[r];
  }
  if (track) {
    g.record({x}, out, [x, out, rows, d, denom = std::move(denom), clamped = std::move(clamped)]() mutable {
      const double* Y = out.data();
      const double* dY = out.grad_data();
      double* dX = x.grad_data();
      for (std::size_t r = 0; r < rows; ++r) {
        if (clamped[r]) {
          for (std::size_t j = 0; j < d; ++j) dX[r * d + j] += dY[r * d + j] / denom[r];
          continue;
        }
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += Y[r * d + j] * dY[r * d + j];
        for (std::size_t j = 0; j < d; ++j) dX[r * d + j] += (dY[r * d + j] - Y[r * d + j] * dot) / denom[r];
      }
    });
  }
  return out;
}

// Weighted mean softmax cross-entropy over logits[B x C]:
//   sum_i w[y_i] * (lse_i - z_i[y_i]) / sum_i w[y_i].
// An empty weight span means every class has weight 1.
inline Tensor softmax_cross_entropy(Graph& g, const Tensor& logits, std::span<const int> labels,
                                    std::span<const double> class_weights = {}) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("softmax_cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t bs = logits.dim(0), c = logits.dim(1);
  if (!class_weights.empty() && class_weights.size() != c) {
    throw DimensionError("softmax_cross_entropy: expected " + std::to_string(c) + " class weights");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw ContractError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                          std::to_string(c) + ")");
    }
  }
  auto weight = [&](int y) { return class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(y)]; };
  double wsum = 0.0;
  for (int y : labels) wsum += weight(y);
  if (!(wsum > 0.0)) throw ContractError("softmax_cross_entropy: total sample weight must be positive");

  const bool track = g.tracks({&logits});
  Tensor out = detail::output(g, Shape{}, track);
  std::vector<double> probs(bs * c);
  const double* Z = logits.data();
  double total = 0.0;
  for (std::size_t i = 0; i < bs; ++i) {
    const double* z = Z + i * c;
    double mx = z[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(z[j] - mx);
      s += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= s;
    const double lse = mx + std::log(s);
    const auto y = static_cast<std::size_t>(labels[i]);
    total += weight(labels[i]) * (lse - z[y]);
  }
  out.values()[0] = total / wsum;
  if (track) {
    std::vector<int> ys(labels.begin(), labels.end());
    std::vector<double> ws(bs);
    for (std::size_t i = 0; i < bs; ++i) ws[i] = weight(ys[i]) / wsum;
    g.record({logits}, out, [logits, out, bs, c, probs = std::move(probs), ys = std::move(ys), ws = std::move(ws)]() mutable {
      const double d = out.grad()[0];
      double* dZ = logits.grad_data();
      for (std::size_t i = 0; i < bs; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          const double onehot = static_cast<std::size_t>(ys[i]) == j ? 1.0 : 0.0;
          dZ[i * c + j] += d * ws[i] * (probs[i * c + j] - onehot);
        }
    });
  }
  return out;
}

}  // namespace darc::ops
