#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "biax/error.hpp"
#include "biax/rng.hpp"
#include "biax/tensor.hpp"

namespace biax {

// Epsilon shared by instance_norm and layer_norm.
inline constexpr double kNormEps = 1e-5;

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline Node& parent(Node& out, std::size_t i) { return *out.parents[i]; }

// Elementwise binary op with per-element partials.
template <class F, class DA, class DB>
Tensor elementwise2(const Tensor& a, const Tensor& b, const char* name, F f, DA da, DB db) {
  require_same_shape(a, b, name);
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i], y[i]);
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [da, db](Node& o) {
    Node& pa = parent(o, 0);
    Node& pb = parent(o, 1);
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += o.grad[i] * da(pa.data[i], pb.data[i]);
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) pb.grad[i] += o.grad[i] * db(pa.data[i], pb.data[i]);
    }
  });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::elementwise2(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::elementwise2(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::elementwise2(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= s;
  return Tensor::from_op(a.shape(), std::move(out), {a}, [s](detail::Node& o) {
    auto& p = detail::parent(o, 0);
    p.ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += s * o.grad[i];
  });
}

/// x + y where y's shape is a trailing suffix of x's shape (y is tiled over
/// the leading axes of x).
inline Tensor add_broadcast(const Tensor& x, const Tensor& y) {
  const auto& xs = x.shape();
  const auto& ys = y.shape();
  if (ys.size() > xs.size() || !std::equal(ys.begin(), ys.end(), xs.end() - static_cast<std::ptrdiff_t>(ys.size())))
    throw DimensionError("add_broadcast: " + shape_str(ys) + " is not a suffix of " + shape_str(xs));
  const std::size_t inner = y.numel();
  const std::size_t outer = inner == 0 ? 0 : x.numel() / inner;
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto yd = y.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += yd[i];
  return Tensor::from_op(xs, std::move(out), {x, y}, [outer, inner](detail::Node& o) {
    auto& px = detail::parent(o, 0);
    auto& py = detail::parent(o, 1);
    if (px.requires_grad) {
      px.ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) px.grad[i] += o.grad[i];
    }
    if (py.requires_grad) {
      py.ensure_grad();
      for (std::size_t b = 0; b < outer; ++b)
        for (std::size_t i = 0; i < inner; ++i) py.grad[i] += o.grad[b * inner + i];
    }
  });
}

/// Standard matrix product a[m x k] . b[k x n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const auto A = a.data();
  const auto B = b.data();
  std::vector<double> C(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      for (std::size_t j = 0; j < n; ++j) C[i * n + j] += av * B[p * n + j];
    }
  return Tensor::from_op({m, n}, std::move(C), {a, b}, [m, k, n](detail::Node& o) {
    auto& pa = detail::parent(o, 0);
    auto& pb = detail::parent(o, 1);
    const auto& G = o.grad;
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * pb.data[p * n + j];
          pa.grad[i * k + p] += s;
        }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa.data[i * k + p];
          for (std::size_t j = 0; j < n; ++j) pb.grad[p * n + j] += av * G[i * n + j];
        }
    }
  });
}

/// Affine map over the last axis: x[..., in] . w[in x out] (+ bias[out]).
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr) {
  if (x.rank() < 1 || w.rank() != 2 || x.shape().back() != w.dim(0))
    throw DimensionError("linear: incompatible shapes " + shape_str(x.shape()) + " and " + shape_str(w.shape()));
  const std::size_t in = w.dim(0), outd = w.dim(1);
  if (bias && (bias->rank() != 1 || bias->dim(0) != outd))
    throw DimensionError("linear: bias shape " + shape_str(bias->shape()) + " does not match output width");
  const std::size_t rows = x.numel() / in;
  Shape os = x.shape();
  os.back() = outd;
  const auto X = x.data();
  const auto W = w.data();
  std::vector<double> Y(rows * outd, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double* y = &Y[r * outd];
    if (bias)
      for (std::size_t j = 0; j < outd; ++j) y[j] = bias->data()[j];
    for (std::size_t p = 0; p < in; ++p) {
      const double xv = X[r * in + p];
      const double* wr = &W[p * outd];
      for (std::size_t j = 0; j < outd; ++j) y[j] += xv * wr[j];
    }
  }
  std::vector<Tensor> parents{x, w};
  if (bias) parents.push_back(*bias);
  const bool has_bias = bias != nullptr;
  return Tensor::from_op(std::move(os), std::move(Y), std::move(parents), [rows, in, outd, has_bias](detail::Node& o) {
    auto& px = detail::parent(o, 0);
    auto& pw = detail::parent(o, 1);
    const auto& G = o.grad;
    if (px.requires_grad) {
      px.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t p = 0; p < in; ++p) {
          double s = 0.0;
          const double* wr = &pw.data[p * outd];
          const double* g = &G[r * outd];
          for (std::size_t j = 0; j < outd; ++j) s += g[j] * wr[j];
          px.grad[r * in + p] += s;
        }
    }
    if (pw.requires_grad) {
      pw.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t p = 0; p < in; ++p) {
          const double xv = px.data[r * in + p];
          double* gw = &pw.grad[p * outd];
          const double* g = &G[r * outd];
          for (std::size_t j = 0; j < outd; ++j) gw[j] += xv * g[j];
        }
    }
    if (has_bias) {
      auto& pb = detail::parent(o, 2);
      if (pb.requires_grad) {
        pb.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < outd; ++j) pb.grad[j] += G[r * outd + j];
      }
    }
  });
}

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) { return linear(x, w, &bias); }

/// Batched product a[N x m x k] . b[N x k x n], or a . b^T with b[N x n x k]
/// when transpose_b is set.
inline Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != (transpose_b ? b.dim(2) : b.dim(1)))
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         (transpose_b ? " (b transposed)" : ""));
  const std::size_t N = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  const auto A = a.data();
  const auto B = b.data();
  std::vector<double> C(N * m * n, 0.0);
  // b element (p, j) lives at bidx(p, j) within batch slice.
  auto bidx = [=](std::size_t p, std::size_t j) { return transpose_b ? j * k + p : p * n + j; };
  for (std::size_t t = 0; t < N; ++t) {
    const double* At = &A[t * m * k];
    const double* Bt = &B[t * k * n];
    double* Ct = &C[t * m * n];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += At[i * k + p] * Bt[bidx(p, j)];
        Ct[i * n + j] = s;
      }
  }
  return Tensor::from_op({N, m, n}, std::move(C), {a, b}, [=](detail::Node& o) {
    auto& pa = detail::parent(o, 0);
    auto& pb = detail::parent(o, 1);
    for (std::size_t t = 0; t < N; ++t) {
      const double* G = &o.grad[t * m * n];
      const double* At = &pa.data[t * m * k];
      const double* Bt = &pb.data[t * k * n];
      if (pa.requires_grad) {
        pa.ensure_grad();
        double* GA = &pa.grad[t * m * k];
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double g = G[i * n + j];
            for (std::size_t p = 0; p < k; ++p) GA[i * k + p] += g * Bt[bidx(p, j)];
          }
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        double* GB = &pb.grad[t * k * n];
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double g = G[i * n + j];
            for (std::size_t p = 0; p < k; ++p) GB[bidx(p, j)] += g * At[i * k + p];
          }
      }
    }
  });
}

/// Softmax over the last axis with max subtraction. NaN input throws.
inline Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() < 1 || x.shape().back() < 1) throw DimensionError("softmax_lastdim: empty last dimension");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  const auto X = x.data();
  std::vector<double> Y(X.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &X[r * n];
    double mx = xr[0];
    for (std::size_t j = 0; j < n; ++j) {
      if (std::isnan(xr[j])) throw NumericError("softmax_lastdim: NaN in input row " + std::to_string(r));
      mx = std::max(mx, xr[j]);
    }
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += (Y[r * n + j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < n; ++j) Y[r * n + j] /= s;
  }
  return Tensor::from_op(x.shape(), std::move(Y), {x}, [rows, n](detail::Node& o) {
    auto& p = detail::parent(o, 0);
    p.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = &o.data[r * n];
      const double* g = &o.grad[r * n];
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) p.grad[r * n + j] += y[j] * (g[j] - dot);
    }
  });
}

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Exact GELU: x * Phi(x).
inline Tensor gelu(const Tensor& x) {
  const auto X = x.data();
  std::vector<double> Y(X.size());
  for (std::size_t i = 0; i < X.size(); ++i) Y[i] = X[i] * std_normal_cdf(X[i]);
  return Tensor::from_op(x.shape(), std::move(Y), {x}, [](detail::Node& o) {
    auto& p = detail::parent(o, 0);
    p.ensure_grad();
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const double v = p.data[i];
      const double d = std_normal_cdf(v) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      p.grad[i] += o.grad[i] * d;
    }
  });
}

namespace detail {

// Normalises each row of length n to zero mean / unit (population) variance.
// Returns x_hat and per-row 1/sqrt(var+eps).
inline void normalize_rows(std::span<const double> X, std::size_t n, double eps, std::vector<double>& xhat,
                           std::vector<double>& inv_std) {
  const std::size_t rows = X.size() / n;
  xhat.resize(X.size());
  inv_std.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = &X[r * n];
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += x[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < n; ++j) xhat[r * n + j] = (x[j] - mean) * is;
  }
}

// d/dx of row normalisation given upstream gradient w.r.t. x_hat.
inline void normalize_rows_backward(const std::vector<double>& xhat, const std::vector<double>& inv_std,
                                    const double* gxhat, std::size_t n, double* gx) {
  const std::size_t rows = inv_std.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xh = &xhat[r * n];
    const double* g = &gxhat[r * n];
    double mg = 0.0, mgx = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      mg += g[j];
      mgx += g[j] * xh[j];
    }
    mg *= inv_n;
    mgx *= inv_n;
    for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += inv_std[r] * (g[j] - mg - xh[j] * mgx);
  }
}

}  // namespace detail

/// Zero-mean / unit-variance normalisation of every last-axis slice, with no
/// affine parameters. For a [.. x features x time] layout this normalises
/// each feature of each instance over time.
inline Tensor instance_norm(const Tensor& x, double eps = kNormEps) {
  if (x.rank() < 1 || x.shape().back() < 1) throw DimensionError("instance_norm: empty normalisation axis");
  const std::size_t n = x.shape().back();
  std::vector<double> xhat, inv_std;
  detail::normalize_rows(x.data(), n, eps, xhat, inv_std);
  std::vector<double> out = xhat;
  return Tensor::from_op(x.shape(), std::move(out), {x}, [n, inv_std = std::move(inv_std)](detail::Node& o) {
    auto& p = detail::parent(o, 0);
    p.ensure_grad();
    detail::normalize_rows_backward(o.data, inv_std, o.grad.data(), n, p.grad.data());
  });
}

/// Normalise over the last axis then apply gain[D] and bias[D].
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = kNormEps) {
  if (x.rank() < 1) throw DimensionError("layer_norm: scalar input");
  const std::size_t n = x.shape().back();
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n})
    throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(n) + "], got " + shape_str(gain.shape()) +
                         " and " + shape_str(bias.shape()));
  std::vector<double> xhat, inv_std;
  detail::normalize_rows(x.data(), n, eps, xhat, inv_std);
  std::vector<double> out(xhat.size());
  const auto g = gain.data();
  const auto b = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xhat[i] * g[i % n] + b[i % n];
  return Tensor::from_op(x.shape(), std::move(out), {x, gain, bias},
                         [n, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& o) {
                           auto& px = detail::parent(o, 0);
                           auto& pg = detail::parent(o, 1);
                           auto& pb = detail::parent(o, 2);
                           if (pg.requires_grad) {
                             pg.ensure_grad();
                             for (std::size_t i = 0; i < o.grad.size(); ++i) pg.grad[i % n] += o.grad[i] * xhat[i];
                           }
                           if (pb.requires_grad) {
                             pb.ensure_grad();
                             for (std::size_t i = 0; i < o.grad.size(); ++i) pb.grad[i % n] += o.grad[i];
                           }
                           if (px.requires_grad) {
                             px.ensure_grad();
                             std::vector<double> gxhat(o.grad.size());
                             for (std::size_t i = 0; i < gxhat.size(); ++i) gxhat[i] = o.grad[i] * pg.data[i % n];
                             detail::normalize_rows_backward(xhat, inv_std, gxhat.data(), n, px.grad.data());
                           }
                         });
}

/// Output length of a strided convolution; 0 when the window does not fit.
inline std::size_t conv_out_len(std::size_t n, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0 || kernel == 0 || n + 2 * padding < kernel) return 0;
  return (n + 2 * padding - kernel) / stride + 1;
}

/// Grouped 1-D cross-correlation without bias.
/// x[B x G x Cin x N], w[G x Cout x Cin x h] -> [B x G x Cout x N'].
/// Each group g has its own filter bank; groups never mix.
inline Tensor grouped_conv1d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding = 0) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(0) || x.dim(2) != w.dim(2))
    throw DimensionError("grouped_conv1d: incompatible shapes " + shape_str(x.shape()) + " and " +
                         shape_str(w.shape()));
  if (stride < 1) throw ConfigError("grouped_conv1d: stride must be >= 1");
  const std::size_t B = x.dim(0), G = x.dim(1), Cin = x.dim(2), N = x.dim(3);
  const std::size_t Cout = w.dim(1), h = w.dim(3);
  const std::size_t No = conv_out_len(N, h, stride, padding);
  if (No < 1)
    throw DimensionError("conv1d: empty output for input length " + std::to_string(N) + ", kernel " +
                         std::to_string(h) + ", padding " + std::to_string(padding));
  const auto X = x.data();
  const auto W = w.data();
  std::vector<double> Y(B * G * Cout * No, 0.0);
  const long pad = static_cast<long>(padding);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t g = 0; g < G; ++g) {
      const double* xg = &X[(b * G + g) * Cin * N];
      const double* wg = &W[g * Cout * Cin * h];
      double* yg = &Y[(b * G + g) * Cout * No];
      for (std::size_t co = 0; co < Cout; ++co)
        for (std::size_t ci = 0; ci < Cin; ++ci) {
          const double* xr = &xg[ci * N];
          const double* wr = &wg[(co * Cin + ci) * h];
          double* yr = &yg[co * No];
          for (std::size_t t = 0; t < No; ++t) {
            const long start = static_cast<long>(t * stride) - pad;
            double s = 0.0;
            if (start >= 0 && start + static_cast<long>(h) <= static_cast<long>(N)) {
              const double* xs = xr + start;
              for (std::size_t q = 0; q < h; ++q) s += wr[q] * xs[q];
            } else {
              for (std::size_t q = 0; q < h; ++q) {
                const long idx = start + static_cast<long>(q);
                if (idx >= 0 && idx < static_cast<long>(N)) s += wr[q] * xr[idx];
              }
            }
            yr[t] += s;
          }
        }
    }
  return Tensor::from_op({B, G, Cout, No}, std::move(Y), {x, w}, [=](detail::Node& o) {
    auto& px = detail::parent(o, 0);
    auto& pw = detail::parent(o, 1);
    if (px.requires_grad) px.ensure_grad();
    if (pw.requires_grad) pw.ensure_grad();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t g = 0; g < G; ++g) {
        const double* xg = &px.data[(b * G + g) * Cin * N];
        const double* wg = &pw.data[g * Cout * Cin * h];
        const double* gy = &o.grad[(b * G + g) * Cout * No];
        for (std::size_t co = 0; co < Cout; ++co)
          for (std::size_t ci = 0; ci < Cin; ++ci) {
            const std::size_t xoff = (b * G + g) * Cin * N + ci * N;
            const std::size_t woff = g * Cout * Cin * h + (co * Cin + ci) * h;
            for (std::size_t t = 0; t < No; ++t) {
              const double gv = gy[co * No + t];
              if (gv == 0.0) continue;
              const long start = static_cast<long>(t * stride) - pad;
              for (std::size_t q = 0; q < h; ++q) {
                const long idx = start + static_cast<long>(q);
                if (idx < 0 || idx >= static_cast<long>(N)) continue;
                if (px.requires_grad) px.grad[xoff + static_cast<std::size_t>(idx)] += gv * wg[(co * Cin + ci) * h + q];
                if (pw.requires_grad) pw.grad[woff + q] += gv * xg[ci * N + static_cast<std::size_t>(idx)];
              }
            }
          }
      }
  });
}

/// x[Cin x N] cross-correlated with kernels[Cout x Cin x h] -> [Cout x N'].
inline Tensor conv1d(const Tensor& x, const Tensor& kernels, std::size_t stride, std::size_t padding = 0);

/// Same values, new shape (element count must match).
inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<double> d(x.data().begin(), x.data().end());
  return Tensor::from_op(std::move(shape), std::move(d), {x}, [](detail::Node& o) {
    auto& p = detail::parent(o, 0);
    p.ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i];
  });
}

inline Tensor conv1d(const Tensor& x, const Tensor& kernels, std::size_t stride, std::size_t padding) {
  if (x.rank() != 2 || kernels.rank() != 3 || x.dim(0) != kernels.dim(1))
    throw DimensionError("conv1d: incompatible shapes " + shape_str(x.shape()) + " and " +
                         shape_str(kernels.shape()));
  const std::size_t Cout = kernels.dim(0);
  auto y = grouped_conv1d(reshape(x, {1, 1, x.dim(0), x.dim(1)}),
                          reshape(kernels, {1, Cout, kernels.dim(1), kernels.dim(2)}), stride, padding);
  return reshape(y, {Cout, y.dim(3)});
}

/// Axis permutation: out.shape[i] = x.shape[axes[i]].
inline Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw DimensionError("permute: axis count mismatch for " + shape_str(x.shape()));
  std::vector<bool> used(r, false);
  for (auto a : axes) {
    if (a >= r || used[a]) throw DimensionError("permute: invalid axis list");
    used[a] = true;
  }
  Shape os(r);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
  for (std::size_t i = 0; i < r; ++i) os[i] = x.dim(axes[i]);
  // src[i] = source flat offset for destination flat index i
  std::vector<std::size_t> src(x.numel());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t i = 0; i < src.size(); ++i) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < r; ++d) off += idx[d] * in_strides[axes[d]];
    src[i] = off;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < os[d]) break;
      idx[d] = 0;
    }
  }
  const auto X = x.data();
  std::vector<double> Y(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) Y[i] = X[src[i]];
  return Tensor::from_op(std::move(os), std::move(Y), {x}, [src = std::move(src)](detail::Node& o) {
    auto& p = detail::parent(o, 0);
    p.ensure_grad();
    for (std::size_t i = 0; i < src.size(); ++i) p.grad[src[i]] += o.grad[i];
  });
}

/// Concatenate tensors that agree on every axis except `axis`.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw DimensionError("concat: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
  for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == s0[d];
    if (!ok) throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(s0));
    lens.push_back(s[axis]);
    total += s[axis];
  }
  Shape os = s0;
  os[axis] = total;
  std::vector<double> Y(outer * total * inner);
  std::size_t base = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto X = parts[k].data();
    const std::size_t chunk = lens[k] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(&X[o * chunk], chunk, &Y[o * total * inner + base * inner]);
    base += lens[k];
  }
  return Tensor::from_op(std::move(os), std::move(Y), parts, [outer, inner, total, lens](detail::Node& o) {
    std::size_t base = 0;
    for (std::size_t k = 0; k < lens.size(); ++k) {
      auto& p = detail::parent(o, k);
      const std::size_t chunk = lens[k] * inner;
      if (p.requires_grad) {
        p.ensure_grad();
        for (std::size_t oo = 0; oo < outer; ++oo)
          for (std::size_t i = 0; i < chunk; ++i) p.grad[oo * chunk + i] += o.grad[oo * total * inner + base * inner + i];
      }
      base += lens[k];
    }
  });
}

/// Tile x along a new leading axis of length n: [..] -> [n x ..].
inline Tensor repeat_leading(const Tensor& x, std::size_t n) {
  Shape os{n};
  os.insert(os.end(), x.shape().begin(), x.shape().end());
  const std::size_t m = x.numel();
  std::vector<double> Y(n * m);
  for (std::size_t i = 0; i < n; ++i) std::copy_n(x.data().begin(), m, Y.begin() + static_cast<std::ptrdiff_t>(i * m));
  return Tensor::from_op(std::move(os), std::move(Y), {x}, [n, m](detail::Node& o) {
    auto& p = detail::parent(o, 0);
    p.ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) p.grad[j] += o.grad[i * m + j];
  });
}

/// Picks index `k` of the last axis: [.. x n] -> [..].
inline Tensor select_last(const Tensor& x, std::size_t k) {
  const std::size_t n = x.shape().back();
  if (k >= n) throw DimensionError("select_last: index out of range");
  Shape os(x.shape().begin(), x.shape().end() - 1);
  const std::size_t rows = x.numel() / n;
  std::vector<double> Y(rows);
  for (std::size_t r = 0; r < rows; ++r) Y[r] = x.data()[r * n + k];
  return Tensor::from_op(std::move(os), std::move(Y), {x}, [n, k, rows](detail::Node& o) {
    auto& p = detail::parent(o, 0);
    p.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) p.grad[r * n + k] += o.grad[r];
  });
}

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return Tensor::from_op({}, {s}, {x}, [](detail::Node& o) {
    auto& p = detail::parent(o, 0);
    p.ensure_grad();
    for (double& g : p.grad) g += o.grad[0];
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

/// Inverted dropout; identity when not training or p == 0.
inline Tensor dropout(const Tensor& x, double p, Rng* rng, bool training) {
  if (!training || p <= 0.0 || rng == nullptr) return x;
  if (p >= 1.0) throw ConfigError("dropout probability must be < 1");
  const double keep = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = rng->uniform() < p ? 0.0 : keep;
  std::vector<double> Y(x.numel());
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = x.data()[i] * mask[i];
  return Tensor::from_op(x.shape(), std::move(Y), {x}, [mask = std::move(mask)](detail::Node& o) {
    auto& px = detail::parent(o, 0);
    px.ensure_grad();
    for (std::size_t i = 0; i < mask.size(); ++i) px.grad[i] += o.grad[i] * mask[i];
  });
}

}  // namespace biax
