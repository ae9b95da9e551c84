#pragma once

// Independent reference implementations shared by the unit tests and the acceptance
// runner. Everything here is written with plain loops so it does not share code paths
// with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "circscatter/circscatter.hpp"

namespace testsupport {

using namespace circscatter;
using nn::Activation;

/// Direct circular correlation: y[i][j] = sum_k sum_c W[j][k][c] x[(i S + k - P) mod T][c] + b[j].
inline std::vector<std::vector<double>> naive_conv(const std::vector<std::vector<double>>& x,
                                                   const std::vector<double>& W, const std::vector<double>& b, int K,
                                                   int S) {
  const int T = static_cast<int>(x.size()), C = static_cast<int>(x[0].size()), F = static_cast<int>(b.size());
  const int P = (K - 1) / 2;
  const int L = (T + S - 1) / S;
  std::vector<std::vector<double>> y(static_cast<std::size_t>(L), std::vector<double>(static_cast<std::size_t>(F)));
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < F; ++j) {
      double acc = b[static_cast<std::size_t>(j)];
      for (int k = 0; k < K; ++k) {
        const int src = ((i * S + k - P) % T + T) % T;
        for (int c = 0; c < C; ++c)
          acc += W[static_cast<std::size_t>(j * K * C + k * C + c)] *
                 x[static_cast<std::size_t>(src)][static_cast<std::size_t>(c)];
      }
      y[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = acc;
    }
  return y;
}

/// Circularly shifts every sample of a (B T) x C tensor down by s rows.
template <class S>
Tensor<S> roll_rows(const Tensor<S>& x, std::size_t batch, std::size_t T, std::size_t s) {
  Tensor<S> out(x.rows(), x.cols());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < T; ++i) {
      const auto src = x.row(b * T + i);
      auto dst = out.row(b * T + (i + s) % T);
      std::copy(src.begin(), src.end(), dst.begin());
    }
  return out;
}

struct ShiftTrial {
  std::size_t T = 0;
  int K = 0;
  std::size_t shift = 0;
  double conv_error = 0.0;       ///< max |f(shift x) - shift f(x)| after the conv stack
  double attention_error = 0.0;  ///< max |a(shift x) - a(x)| of the channel weights
};

/// Random stride-1 conv stack followed by channel attention, evaluated in double on an
/// input and on a circular shift of it.
inline ShiftTrial shift_trial(Rng& rng) {
  ShiftTrial t;
  t.T = 4 + static_cast<std::size_t>(rng() % 61);
  t.K = 1 + static_cast<int>(rng() % 15);
  t.shift = 1 + static_cast<std::size_t>(rng() % (t.T - 1));
  const int C0 = 1 + static_cast<int>(rng() % 4);
  const int r = 1 + static_cast<int>(rng() % 4);
  const int F = r * (2 + static_cast<int>(rng() % 5));
  const int K2 = 1 + static_cast<int>(rng() % 9);
  const int Kmix = 1 + static_cast<int>(rng() % 5);

  using L = nn::LayerSpec;
  const nn::NetworkSpec spec{"shift", static_cast<int>(t.T), C0, Task::Regression,
                             {L::conv(F, t.K, 1), L::conv(F, K2, 1), L::attention(Kmix, r), L::flatten(),
                              L::output(2, Activation::Identity)}};
  auto params = nn::init_parameters<double>(spec, rng());
  for (auto& v : params.values) v += uniform(rng, -0.1, 0.1);
  const nn::Network<double> net(spec);

  const std::size_t B = 2;
  Tensor<double> x(B * t.T, static_cast<std::size_t>(C0));
  for (auto& v : x.values()) v = uniform(rng, -1.0, 1.0);
  const auto xs = roll_rows(x, B, t.T, t.shift);

  nn::ForwardCache<double> c1, c2;
  net.forward(params, x, B, nn::Mode::Eval, &c1);
  net.forward(params, xs, B, nn::Mode::Eval, &c2);

  const auto expect = roll_rows(c1.layers[2].input, B, t.T, t.shift);
  const auto& got = c2.layers[2].input;
  for (std::size_t i = 0; i < got.size(); ++i)
    t.conv_error = std::max(t.conv_error, std::abs(got.values()[i] - expect.values()[i]));
  const auto& a1 = c1.layers[2].a;
  const auto& a2 = c2.layers[2].a;
  for (std::size_t i = 0; i < a1.size(); ++i)
    t.attention_error = std::max(t.attention_error, std::abs(a1.values()[i] - a2.values()[i]));
  return t;
}

/// Plain-loop metric oracles.
inline double oracle_accuracy(const std::vector<int>& truth, const std::vector<int>& pred) {
  int ok = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) ok += truth[i] == pred[i];
  return static_cast<double>(ok) / static_cast<double>(truth.size());
}

inline double oracle_recall(const std::vector<int>& truth, const std::vector<int>& pred, int k) {
  int tp = 0, n = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (truth[i] == k) ++n, tp += pred[i] == k;
  return static_cast<double>(tp) / n;
}

inline double oracle_r2(const std::vector<double>& pred, const std::vector<double>& truth, std::size_t dim) {
  const std::size_t n = truth.size() / dim;
  double sse = 0, sst = 0;
  for (std::size_t j = 0; j < dim; ++j) {
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += truth[i * dim + j];
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      sse += (pred[i * dim + j] - truth[i * dim + j]) * (pred[i * dim + j] - truth[i * dim + j]);
      sst += (truth[i * dim + j] - mean) * (truth[i * dim + j] - mean);
    }
  }
  return 1.0 - sse / sst;
}

inline double oracle_rmse(const std::vector<double>& pred, const std::vector<double>& truth, std::size_t dim) {
  double sse = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) sse += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(sse / static_cast<double>(truth.size() / dim));
}

/// Tiny network touching every layer kind, small enough for a full gradient check.
inline nn::NetworkSpec tiny_spec(Task task) {
  using L = nn::LayerSpec;
  return {"tiny", 8, 2, task,
          {L::conv(4, 3, 1), L::conv(4, 3, 2), L::attention(3, 2), L::bottleneck(3), L::flatten(),
           L::dense(6, 0.2, 1e-3), L::output(task == Task::Classification ? 3 : 2,
                                             task == Task::Classification ? Activation::Softmax : Activation::Identity)}};
}

}  // namespace testsupport
