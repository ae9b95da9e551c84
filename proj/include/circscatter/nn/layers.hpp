#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>

#include <Eigen/Core>

#include "circscatter/error.hpp"
#include "circscatter/random.hpp"
#include "circscatter/tensor.hpp"

namespace circscatter::nn {

inline constexpr double kLayerNormEps = 1e-5;

template <class S>
using VecMap = Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>;
template <class S>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>;

template <class S>
ConstMatrixMap<S> as_matrix(std::span<const S> v, std::size_t rows, std::size_t cols) {
  return {v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}
template <class S>
MatrixMap<S> as_matrix(std::span<S> v, std::size_t rows, std::size_t cols) {
  return {v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}
template <class S>
ConstVecMap<S> as_row(std::span<const S> v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}
template <class S>
VecMap<S> as_row(std::span<S> v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}

// Column sums accumulated row by row. Eigen's colwise().sum() on a row-major map peels
// by address, which made bias gradients depend on where the heap placed dz.
template <class S>
void add_column_sums(std::span<S> out, const Tensor<S>& m) {
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += m(i, j);
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <class S>
S sigmoid(S z) noexcept {
  if (z >= S(0)) return S(1) / (S(1) + std::exp(-z));
  const S e = std::exp(z);
  return e / (S(1) + e);
}

/// Swish, z * sigmoid(z).
template <class S>
S swish(S z) noexcept {
  return z * sigmoid(z);
}

/// d swish / dz = s (1 + z (1 - s)) with s = sigmoid(z).
template <class S>
S swish_derivative(S z) noexcept {
  const S s = sigmoid(z);
  return s * (S(1) + z * (S(1) - s));
}

template <class S>
S swish_backward(S z, S upstream) noexcept {
  return upstream * swish_derivative(z);
}


template <class S>
void activate(std::span<const S> z, std::span<S> out, bool use_swish) {
  if (use_swish)
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = swish(z[i]);
  else
    std::copy(z.begin(), z.end(), out.begin());
}

/// In-place: grad <- grad * act'(z).
template <class S>
void activate_backward(std::span<const S> z, std::span<S> grad, bool use_swish) {
  if (!use_swish) return;
  for (std::size_t i = 0; i < z.size(); ++i) grad[i] *= swish_derivative(z[i]);
}

// ---------------------------------------------------------------------------
// Circular padding and convolution
// ---------------------------------------------------------------------------

constexpr int pad_left(int kernel) noexcept { return (kernel - 1) / 2; }
constexpr int pad_right(int kernel) noexcept { return (kernel - 1) - pad_left(kernel); }

constexpr std::size_t wrap_index(long i, std::size_t n) noexcept {
  const long m = static_cast<long>(n);
  return static_cast<std::size_t>(((i % m) + m) % m);
}

/// Periodic extension of the angular axis by K-1 rows; row j holds X[(j - P_left) mod T].
template <class S>
Tensor<S> circular_pad(const Tensor<S>& X, int kernel) {
  const std::size_t T = X.rows();
  Tensor<S> out(T + static_cast<std::size_t>(kernel) - 1, X.cols());
  for (std::size_t j = 0; j < out.rows(); ++j) {
    const auto src = X.row(wrap_index(static_cast<long>(j) - pad_left(kernel), T));
    std::copy(src.begin(), src.end(), out.row(j).begin());
  }
  return out;
}

/// Geometry of a circular convolution over a batch of samples stacked along rows.
struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t length = 0;  ///< input angular length T
  std::size_t in_channels = 0;
  int kernel = 1;
  int stride = 1;

  std::size_t out_length() const noexcept { return (length + static_cast<std::size_t>(stride) - 1) / stride; }
  std::size_t patch() const noexcept { return static_cast<std::size_t>(kernel) * in_channels; }
};

/// Patch matrix with rows (b, i) and columns (k, c): X[b, (i S + k - P_left) mod T, c].
template <class S>
void im2col(const Tensor<S>& x, const ConvGeometry& g, Tensor<S>& col) {
  const std::size_t T = g.length, C = g.in_channels, To = g.out_length();
  col.resize(g.batch * To, g.patch());
  for (std::size_t b = 0; b < g.batch; ++b) {
    const S* xb = x.data() + b * T * C;
    for (std::size_t i = 0; i < To; ++i) {
      S* dst = col.data() + (b * To + i) * g.patch();
      const long base = static_cast<long>(i) * g.stride - pad_left(g.kernel);
      for (int k = 0; k < g.kernel; ++k) {
        const S* src = xb + wrap_index(base + k, T) * C;
        std::copy(src, src + C, dst + static_cast<std::size_t>(k) * C);
      }
    }
  }
}

/// Adjoint of im2col: scatters patch gradients back onto the input rows.
template <class S>
void col2im_add(const Tensor<S>& dcol, const ConvGeometry& g, Tensor<S>& dx) {
  const std::size_t T = g.length, C = g.in_channels, To = g.out_length();
  for (std::size_t b = 0; b < g.batch; ++b) {
    S* xb = dx.data() + b * T * C;
    for (std::size_t i = 0; i < To; ++i) {
      const S* src = dcol.data() + (b * To + i) * g.patch();
      const long base = static_cast<long>(i) * g.stride - pad_left(g.kernel);
      for (int k = 0; k < g.kernel; ++k) {
        S* dst = xb + wrap_index(base + k, T) * C;
        const S* s = src + static_cast<std::size_t>(k) * C;
        for (std::size_t c = 0; c < C; ++c) dst[c] += s[c];
      }
    }
  }
}

/// Pre-activation of a circular convolution from its patch matrix. W is N_f x (K C_in).
template <class S>
void conv_from_patches(const Tensor<S>& col, std::span<const S> W, std::span<const S> bias, Tensor<S>& z) {
  const std::size_t nf = bias.size();
  z.resize(col.rows(), nf);
  z.matrix().noalias() = col.matrix() * as_matrix(W, nf, col.cols()).transpose();
  z.matrix().rowwise() += as_row(bias);
}

/// Single-sample circular convolution without activation:
/// Y[i, j] = sum_k sum_c W[j, k, c] Xpad[i S + k, c] + b[j], output length ceil(T / S).
template <class S>
Tensor<S> circular_conv_forward(const Tensor<S>& X, std::span<const S> W, std::span<const S> bias, int kernel, int stride) {
  const std::size_t nf = bias.size();
  if (W.size() != nf * static_cast<std::size_t>(kernel) * X.cols())
    fail(ErrorCode::ShapeMismatch, "convolution weights do not match N_f x K x C_in");
  if (kernel < 1 || stride < 1) fail(ErrorCode::ShapeMismatch, "kernel and stride must be >= 1");
  const ConvGeometry g{1, X.rows(), X.cols(), kernel, stride};
  Tensor<S> col, z;
  im2col(X, g, col);
  conv_from_patches(col, W, bias, z);
  return z;
}

// ---------------------------------------------------------------------------
// Layer normalization
// ---------------------------------------------------------------------------

/// Normalizes each row of `x` over its columns, then applies gain and shift.
/// Stores xhat and 1/sqrt(var + eps) per row for the backward pass.
template <class S>
void layer_norm_forward(const Tensor<S>& x, std::span<const S> gain, std::span<const S> shift, Tensor<S>& y,
                        Tensor<S>& xhat, std::vector<S>& inv_std, double eps = kLayerNormEps) {
  const std::size_t R = x.rows(), D = x.cols();
  y.resize(R, D);
  xhat.resize(R, D);
  inv_std.assign(R, S(0));
  for (std::size_t r = 0; r < R; ++r) {
    const auto row = x.row(r);
    S mean = 0;
    for (S v : row) mean += v;
    mean /= static_cast<S>(D);
    S var = 0;
    for (S v : row) var += (v - mean) * (v - mean);
    var /= static_cast<S>(D);
    const S is = S(1) / std::sqrt(var + static_cast<S>(eps));
    inv_std[r] = is;
    auto xh = xhat.row(r);
    auto out = y.row(r);
    for (std::size_t j = 0; j < D; ++j) {
      xh[j] = (row[j] - mean) * is;
      out[j] = gain[j] * xh[j] + shift[j];
    }
  }
}

/// Returns dx and accumulates dgain, dshift.
template <class S>
void layer_norm_backward(const Tensor<S>& dy, const Tensor<S>& xhat, const std::vector<S>& inv_std,
                         std::span<const S> gain, std::span<S> dgain, std::span<S> dshift, Tensor<S>& dx) {
  const std::size_t R = dy.rows(), D = dy.cols();
  dx.resize(R, D);
  std::vector<S> dxh(D);
  for (std::size_t r = 0; r < R; ++r) {
    const auto g = dy.row(r);
    const auto xh = xhat.row(r);
    S mean_d = 0, mean_dx = 0;
    for (std::size_t j = 0; j < D; ++j) {
      dgain[j] += g[j] * xh[j];
      dshift[j] += g[j];
      dxh[j] = g[j] * gain[j];
      mean_d += dxh[j];
      mean_dx += dxh[j] * xh[j];
    }
    mean_d /= static_cast<S>(D);
    mean_dx /= static_cast<S>(D);
    auto out = dx.row(r);
    for (std::size_t j = 0; j < D; ++j) out[j] = inv_std[r] * (dxh[j] - mean_d - xh[j] * mean_dx);
  }
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

/// Inverted dropout. In training mode fills `mask` with 0 or 1/(1-p) and applies it;
/// with `rng == nullptr` (evaluation) it is the identity and the mask is cleared.
template <class S>
void dropout_forward(std::span<S> h, double p, Rng* rng, std::vector<S>& mask) {
  if (!(p >= 0.0 && p < 1.0)) fail(ErrorCode::InvalidSpec, "dropout probability must lie in [0, 1)");
  if (rng == nullptr || p == 0.0) {
    mask.clear();
    return;
  }
  mask.resize(h.size());
  const S keep = static_cast<S>(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < h.size(); ++i) {
    const bool drop = uniform(*rng, 0.0, 1.0) < p;
    mask[i] = drop ? S(0) : keep;
    h[i] *= mask[i];
  }
}

template <class S>
void dropout_backward(std::span<S> grad, const std::vector<S>& mask) {
  if (mask.empty()) return;
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= mask[i];
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

/// Row-wise softmax with max subtraction.
template <class S>
void softmax_rows(const Tensor<S>& logits, Tensor<S>& probs) {
  probs.resize(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto z = logits.row(r);
    auto p = probs.row(r);
    const S m = *std::max_element(z.begin(), z.end());
    S sum = 0;
    for (std::size_t j = 0; j < z.size(); ++j) sum += (p[j] = std::exp(z[j] - m));
    for (auto& v : p) v /= sum;
  }
}

template <class S>
std::vector<S> softmax(std::span<const S> v) {
  Tensor<S> z(1, v.size(), std::vector<S>(v.begin(), v.end())), p;
  softmax_rows(z, p);
  return std::vector<S>(p.values().begin(), p.values().end());
}

/// Gradient w.r.t. the logits given the gradient w.r.t. the probabilities.
template <class S>
void softmax_backward(const Tensor<S>& probs, const Tensor<S>& dprobs, Tensor<S>& dlogits) {
  dlogits.resize(probs.rows(), probs.cols());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto p = probs.row(r);
    const auto dp = dprobs.row(r);
    S inner = 0;
    for (std::size_t j = 0; j < p.size(); ++j) inner += p[j] * dp[j];
    auto out = dlogits.row(r);
    for (std::size_t j = 0; j < p.size(); ++j) out[j] = p[j] * (dp[j] - inner);
  }
}

// ---------------------------------------------------------------------------
// Dense and pointwise maps
// ---------------------------------------------------------------------------

/// z = h W^T + b for W stored as (out x in).
template <class S>
void affine_forward(const Tensor<S>& h, std::span<const S> W, std::span<const S> bias, Tensor<S>& z) {
  const std::size_t out = bias.size();
  z.resize(h.rows(), out);
  z.matrix().noalias() = h.matrix() * as_matrix(W, out, h.cols()).transpose();
  z.matrix().rowwise() += as_row(bias);
}

/// Accumulates dW (out x in), db and optionally writes dh.
template <class S>
void affine_backward(const Tensor<S>& h, std::span<const S> W, const Tensor<S>& dz, std::span<S> dW, std::span<S> db,
                     Tensor<S>* dh) {
  const std::size_t out = dz.cols(), in = h.cols();
  as_matrix(dW, out, in).noalias() += dz.matrix().transpose() * h.matrix();
  add_column_sums(db, dz);
  if (dh) {
    dh->resize(h.rows(), in);
    dh->matrix().noalias() = dz.matrix() * as_matrix(W, out, in);
  }
}

/// Single-vector dense map, W (d_out x d_in).
template <class S>
std::vector<S> dense_forward(std::span<const S> h, std::span<const S> W, std::span<const S> bias) {
  if (W.size() != h.size() * bias.size()) fail(ErrorCode::ShapeMismatch, "dense weights do not match d_out x d_in");
  Tensor<S> x(1, h.size(), std::vector<S>(h.begin(), h.end())), z;
  affine_forward(x, W, bias, z);
  return std::vector<S>(z.values().begin(), z.values().end());
}

/// Pointwise (1x1) convolution pre-activation: z = H W + b, with W stored (C_in x N_b).
template <class S>
void pointwise_forward(const Tensor<S>& h, std::span<const S> W, std::span<const S> bias, Tensor<S>& z) {
  const std::size_t nb = bias.size();
  z.resize(h.rows(), nb);
  z.matrix().noalias() = h.matrix() * as_matrix(W, h.cols(), nb);
  z.matrix().rowwise() += as_row(bias);
}

template <class S>
void pointwise_backward(const Tensor<S>& h, std::span<const S> W, const Tensor<S>& dz, std::span<S> dW, std::span<S> db,
                        Tensor<S>* dh) {
  const std::size_t nb = dz.cols(), in = h.cols();
  as_matrix(dW, in, nb).noalias() += h.matrix().transpose() * dz.matrix();
  add_column_sums(db, dz);
  if (dh) {
    dh->resize(h.rows(), in);
    dh->matrix().noalias() = dz.matrix() * as_matrix(W, in, nb).transpose();
  }
}

}  // namespace circscatter::nn
