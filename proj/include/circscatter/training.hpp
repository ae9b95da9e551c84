#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "circscatter/dataset.hpp"
#include "circscatter/error.hpp"
#include "circscatter/nn/network.hpp"
#include "circscatter/parallel.hpp"
#include "circscatter/random.hpp"

namespace circscatter {

using nn::Mode;
using nn::Network;
using nn::NetworkSpec;
using nn::Parameters;

inline constexpr double kProbabilityFloor = 1e-12;

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean categorical cross-entropy; probabilities are clipped to [1e-12, 1] before the log.
template <class S>
double cross_entropy(const Tensor<S>& probs, const Tensor<S>& onehot) {
  if (probs.rows() != onehot.rows() || probs.cols() != onehot.cols())
    fail(ErrorCode::ShapeMismatch, "cross-entropy inputs differ in shape");
  if (probs.rows() == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double y = onehot.values()[i];
    if (y == 0.0) continue;
    const double p = std::clamp(static_cast<double>(probs.values()[i]), kProbabilityFloor, 1.0);
    sum -= y * std::log(p);
  }
  return sum / static_cast<double>(probs.rows());
}

/// (1/N) sum_n ||pred_n - target_n||^2.
template <class S>
double mse(const Tensor<S>& pred, const Tensor<S>& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    fail(ErrorCode::ShapeMismatch, "mse inputs differ in shape");
  if (pred.rows() == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred.values()[i]) - static_cast<double>(target.values()[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(pred.rows());
}

/// Loss of one output block and its gradient w.r.t. the output pre-activation, with the
/// sample average taken over `denominator` rows. For softmax outputs the cross-entropy and
/// softmax derivatives are fused into (p - y).
template <class S>
double loss_and_gradient(Task task, const Tensor<S>& output, const Tensor<S>& target, std::size_t denominator,
                         Tensor<S>* dlogits) {
  const double scale = static_cast<double>(output.rows()) / static_cast<double>(denominator);
  double loss = 0.0;
  if (task == Task::Classification)
    loss = cross_entropy(output, target) * scale;
  else
    loss = mse(output, target) * scale;
  if (dlogits) {
    dlogits->resize(output.rows(), output.cols());
    const S k = task == Task::Classification ? S(1) : S(2);
    const S inv = S(1) / static_cast<S>(denominator);
    for (std::size_t i = 0; i < output.size(); ++i)
      dlogits->values()[i] = k * (output.values()[i] - target.values()[i]) * inv;
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Global-norm clipping: when ||g|| > gamma every entry is scaled by gamma / ||g||.
/// Returns the norm before clipping.
template <class S>
double clip_gradients(std::span<S> grad, double gamma) {
  if (!(gamma > 0.0)) fail(ErrorCode::InvalidConfig, "clip threshold must be positive");
  double sq = 0.0;
  for (S g : grad) sq += static_cast<double>(g) * static_cast<double>(g);
  const double n = std::sqrt(sq);
  if (n > gamma) {
    const S f = static_cast<S>(gamma / n);
    for (S& g : grad) g *= f;
  }
  return n;
}

template <class S>
struct AdamState {
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double epsilon = 1e-7;

  std::vector<S> m;
  std::vector<S> v;
  std::uint64_t t = 0;

  explicit AdamState(std::size_t n = 0) : m(n, S(0)), v(n, S(0)) {}
};

/// One bias-corrected Adam update.
template <class S>
void adam_step(Parameters<S>& params, std::span<const S> grad, AdamState<S>& state, double lr) {
  if (state.m.size() != params.size() || grad.size() != params.size())
    fail(ErrorCode::ShapeMismatch, "optimizer state does not match parameters");
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(AdamState<S>::beta1, t);
  const double c2 = 1.0 - std::pow(AdamState<S>::beta2, t);
  const S b1 = static_cast<S>(AdamState<S>::beta1), b2 = static_cast<S>(AdamState<S>::beta2);
  const S step = static_cast<S>(lr / c1);
  const S inv_c2 = static_cast<S>(1.0 / c2);
  const S eps = static_cast<S>(AdamState<S>::epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const S g = grad[i];
    state.m[i] = b1 * state.m[i] + (S(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (S(1) - b2) * g * g;
    params.values[i] -= step * state.m[i] / (std::sqrt(state.v[i] * inv_c2) + eps);
  }
  params.touch();
}

// ---------------------------------------------------------------------------
// Training data
// ---------------------------------------------------------------------------

/// Model-ready rows: standardized channel-major features and either standardized
/// regression targets or one-hot class indicators.
struct TrainingData {
  std::size_t feature_dim = 0;
  std::size_t target_dim = 0;
  std::vector<double> features;
  std::vector<double> targets;
  std::vector<int> class_index;  ///< classification only; index into the header's class list

  std::size_t size() const noexcept { return feature_dim == 0 ? 0 : features.size() / feature_dim; }
};

/// Index of each label in `classes`; unknown labels are a validation error.
inline std::vector<int> class_indices(std::span<const int> labels, std::span<const ShapeClass> classes) {
  std::vector<int> out;
  out.reserve(labels.size());
  for (int l : labels) {
    const auto it = std::find(classes.begin(), classes.end(), static_cast<ShapeClass>(l));
    if (it == classes.end()) fail(ErrorCode::InvalidConfig, "label " + std::to_string(l) + " not among dataset classes");
    out.push_back(static_cast<int>(it - classes.begin()));
  }
  return out;
}

inline TrainingData make_training_data(const Dataset& ds, const Standardizer& features,
                                       const Standardizer* targets = nullptr) {
  TrainingData d;
  d.feature_dim = ds.header.feature_size();
  d.features = ds.features;
  features.apply(d.features);
  if (ds.header.task == Task::Classification) {
    d.class_index = class_indices(ds.labels, ds.header.classes);
    d.target_dim = ds.header.classes.size();
    d.targets.assign(ds.size() * d.target_dim, 0.0);
    for (std::size_t i = 0; i < ds.size(); ++i) d.targets[i * d.target_dim + static_cast<std::size_t>(d.class_index[i])] = 1.0;
  } else {
    d.target_dim = static_cast<std::size_t>(ds.header.P);
    d.targets = ds.targets;
    if (targets) targets->apply(d.targets);
  }
  return d;
}

inline TrainingData subset(const TrainingData& d, std::span<const std::size_t> rows) {
  TrainingData out;
  out.feature_dim = d.feature_dim;
  out.target_dim = d.target_dim;
  out.features.reserve(rows.size() * d.feature_dim);
  out.targets.reserve(rows.size() * d.target_dim);
  for (std::size_t r : rows) {
    out.features.insert(out.features.end(), d.features.begin() + static_cast<std::ptrdiff_t>(r * d.feature_dim),
                        d.features.begin() + static_cast<std::ptrdiff_t>((r + 1) * d.feature_dim));
    out.targets.insert(out.targets.end(), d.targets.begin() + static_cast<std::ptrdiff_t>(r * d.target_dim),
                       d.targets.begin() + static_cast<std::ptrdiff_t>((r + 1) * d.target_dim));
    if (!d.class_index.empty()) out.class_index.push_back(d.class_index[r]);
  }
  return out;
}

namespace detail {

template <class S>
Tensor<S> gather_targets(const TrainingData& d, std::span<const std::size_t> rows) {
  Tensor<S> t(rows.size(), d.target_dim);
  for (std::size_t b = 0; b < rows.size(); ++b)
    for (std::size_t j = 0; j < d.target_dim; ++j) t(b, j) = static_cast<S>(d.targets[rows[b] * d.target_dim + j]);
  return t;
}

template <class S>
Tensor<S> gather_inputs(const Network<S>& net, const TrainingData& d, std::span<const std::size_t> rows) {
  const auto T0 = static_cast<std::size_t>(net.spec().T0), C0 = static_cast<std::size_t>(net.spec().C0);
  Tensor<S> x(rows.size() * T0, C0);
  for (std::size_t b = 0; b < rows.size(); ++b) {
    const double* f = d.features.data() + rows[b] * d.feature_dim;
    for (std::size_t c = 0; c < C0; ++c)
      for (std::size_t i = 0; i < T0; ++i) x(b * T0 + i, c) = static_cast<S>(f[c * T0 + i]);
  }
  return x;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Evaluation in fixed chunks
// ---------------------------------------------------------------------------

inline constexpr std::size_t kEvalChunk = 256;

/// Eval-mode outputs (probabilities or regression values, model units) for all rows, N x d_out.
/// Chunks are fixed so results do not depend on the thread count.
template <class S>
std::vector<double> predict_all(const Network<S>& net, const Parameters<S>& params, const TrainingData& d,
                                unsigned threads = 1) {
  const std::size_t n = d.size(), out = net.output_dim();
  if (d.feature_dim != net.input_dim()) fail(ErrorCode::LayoutMismatch, "feature length does not match the network input");
  std::vector<double> result(n * out);
  const std::size_t chunks = (n + kEvalChunk - 1) / kEvalChunk;
  detail::parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t lo = c * kEvalChunk, hi = std::min(n, lo + kEvalChunk);
    std::vector<std::size_t> rows(hi - lo);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = lo + i;
    const auto y = net.forward(params, detail::gather_inputs(net, d, rows), rows.size(), Mode::Eval);
    for (std::size_t i = 0; i < y.size(); ++i) result[lo * out + i] = static_cast<double>(y.values()[i]);
  });
  return result;
}

/// Mean data loss plus the regularization term, in eval mode.
template <class S>
double evaluate_loss(const Network<S>& net, const Parameters<S>& params, const TrainingData& d, unsigned threads = 1) {
  const std::size_t n = d.size();
  if (n == 0) return 0.0;
  const Task task = net.spec().task;
  const std::size_t chunks = (n + kEvalChunk - 1) / kEvalChunk;
  std::vector<double> partial(chunks, 0.0);
  detail::parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t lo = c * kEvalChunk, hi = std::min(n, lo + kEvalChunk);
    std::vector<std::size_t> rows(hi - lo);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = lo + i;
    const auto y = net.forward(params, detail::gather_inputs(net, d, rows), rows.size(), Mode::Eval);
    partial[c] = loss_and_gradient<S>(task, y, detail::gather_targets<S>(d, rows), n, nullptr);
  });
  double loss = 0.0;
  for (double p : partial) loss += p;
  return loss + net.regularization(params);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
  double learning_rate = 1e-4;
  std::optional<double> clip;
  std::size_t batch_size = 128;
  int max_epochs = 500;
  double min_delta = 1e-4;
  int patience = 80;
  std::uint64_t seed = 0;
  /// Samples per gradient shard. Shards are reduced in a fixed order, so the result
  /// depends on this value but not on the number of threads.
  std::size_t shard_size = 32;
  unsigned threads = 1;

  void validate() const {
    if (!(learning_rate > 0.0)) fail(ErrorCode::InvalidConfig, "learning rate must be positive");
    if (clip && !(*clip > 0.0)) fail(ErrorCode::InvalidConfig, "clip threshold must be positive");
    if (batch_size < 1) fail(ErrorCode::InvalidConfig, "batch size must be at least 1");
    if (max_epochs < 1) fail(ErrorCode::InvalidConfig, "max_epochs must be at least 1");
    if (patience < 1) fail(ErrorCode::InvalidConfig, "patience must be at least 1");
    if (!(min_delta >= 0.0)) fail(ErrorCode::InvalidConfig, "min_delta must be non-negative");
    if (shard_size < 1) fail(ErrorCode::InvalidConfig, "shard size must be at least 1");
  }
};

/// Optimizer and early-stopping settings for each architecture preset.
/// max_epochs has no preset value; 500 is our default.
inline TrainConfig preset_train_config(std::string_view preset) {
  TrainConfig c;
  if (preset == "ap1") {
    c.learning_rate = 1e-5, c.batch_size = 64, c.min_delta = 1e-3, c.patience = 150;
  } else if (preset == "ap2" || preset == "ap4") {
    c.learning_rate = 1e-4, c.batch_size = 128, c.min_delta = 1e-4, c.patience = 80;
  } else if (preset == "ap7") {
    c.learning_rate = 1e-4, c.batch_size = 128, c.min_delta = 1e-4, c.patience = 200;
  } else if (preset == "ap10") {
    c.learning_rate = 5e-5, c.clip = 1.0, c.batch_size = 128, c.min_delta = 1e-4, c.patience = 200;
  } else {
    fail(ErrorCode::InvalidSpec, "unknown preset '" + std::string(preset) + "'");
  }
  return c;
}

struct EpochRecord {
  int epoch = 0;  ///< 1-based
  double train_loss = 0.0;
  double valid_loss = 0.0;
  std::optional<double> train_accuracy;
  std::optional<double> valid_accuracy;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_valid_loss = 0.0;
  bool early_stopped = false;

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) fail(ErrorCode::Io, "cannot write history file " + path);
    const bool acc = !epochs.empty() && epochs.front().valid_accuracy.has_value();
    out << "epoch,train_loss,valid_loss" << (acc ? ",train_accuracy,valid_accuracy" : "") << '\n';
    for (const auto& e : epochs) {
      out << e.epoch << ',' << detail::format_double(e.train_loss) << ',' << detail::format_double(e.valid_loss);
      if (acc) out << ',' << detail::format_double(*e.train_accuracy) << ',' << detail::format_double(*e.valid_accuracy);
      out << '\n';
    }
    if (!out) fail(ErrorCode::Io, "failed writing " + path);
  }
};

template <class S>
struct TrainResult {
  Parameters<S> params;  ///< snapshot with the lowest validation loss
  TrainHistory history;
};

/// Observer invoked after each epoch; returning false stops training.
using EpochCallback = std::function<bool(const EpochRecord&)>;

namespace detail {

inline double accuracy_of(std::span<const double> probs, std::size_t k, std::span<const int> truth) {
  if (truth.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto row = probs.subspan(i * k, k);
    const auto arg = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    correct += arg == truth[i];
  }
  return static_cast<double>(correct) / static_cast<double>(truth.size());
}

}  // namespace detail

/// Mini-batch Adam with per-epoch shuffling, early stopping on validation loss and
/// best-weight restoration. The snapshot follows every strict new minimum of the
/// validation loss; the patience counter is reset only by an improvement larger than
/// min_delta over the last such reference.
template <class S>
TrainResult<S> train(const NetworkSpec& spec, Parameters<S> params, const TrainingData& train_data,
                     const TrainingData& valid_data, const TrainConfig& config, const EpochCallback& on_epoch = {}) {
  config.validate();
  Network<S> net(spec);
  if (train_data.feature_dim != net.input_dim() || valid_data.feature_dim != net.input_dim())
    fail(ErrorCode::LayoutMismatch, "training data layout does not match network '" + spec.name + "'");
  if (train_data.target_dim != net.output_dim() || valid_data.target_dim != net.output_dim())
    fail(ErrorCode::ShapeMismatch, "target width does not match the network output");
  if (train_data.size() == 0 || valid_data.size() == 0) fail(ErrorCode::TooSmall, "training and validation sets must be non-empty");

  const std::size_t n = train_data.size();
  const std::size_t max_shards = (config.batch_size + config.shard_size - 1) / config.shard_size;
  std::vector<std::vector<S>> shard_grads(max_shards, std::vector<S>(params.size(), S(0)));
  std::vector<double> shard_loss(max_shards, 0.0);
  std::vector<S> grad(params.size(), S(0));
  AdamState<S> adam(params.size());

  TrainResult<S> result;
  result.params = params;
  double reference = std::numeric_limits<double>::infinity();
  double best = std::numeric_limits<double>::infinity();
  int wait = 0;

  std::vector<std::size_t> order(n);
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle = make_rng(derive_seed(config.seed, 0x7A41ULL, static_cast<std::uint64_t>(epoch)), 0);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[static_cast<std::size_t>(shuffle() % (i + 1))]);

    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t lo = 0; lo < n; lo += config.batch_size, ++batch_index) {
      const std::size_t hi = std::min(n, lo + config.batch_size);
      const std::size_t bsz = hi - lo;
      const std::size_t shards = (bsz + config.shard_size - 1) / config.shard_size;
      detail::parallel_for(shards, config.threads, [&](std::size_t s) {
        const std::size_t a = lo + s * config.shard_size, b = std::min(hi, a + config.shard_size);
        const std::span<const std::size_t> rows(order.data() + a, b - a);
        Rng drop = make_rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch), batch_index), s);
        nn::ForwardCache<S> cache;
        const auto y = net.forward(params, detail::gather_inputs(net, train_data, rows), rows.size(), Mode::Train, &cache, &drop);
        Tensor<S> dlogits;
        shard_loss[s] = loss_and_gradient<S>(spec.task, y, detail::gather_targets<S>(train_data, rows), bsz, &dlogits);
        auto& g = shard_grads[s];
        std::fill(g.begin(), g.end(), S(0));
        net.backward(params, cache, dlogits, g, false);
      });
      std::fill(grad.begin(), grad.end(), S(0));
      double batch_loss = 0.0;
      for (std::size_t s = 0; s < shards; ++s) {
        batch_loss += shard_loss[s];
        const auto& g = shard_grads[s];
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
      }
      batch_loss += net.regularization(params);
      if (!std::isfinite(batch_loss))
        fail(ErrorCode::NonFinite, "non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                                       std::to_string(batch_index + 1));
      net.add_regularization_gradient(params, grad);
      if (config.clip) clip_gradients<S>(grad, *config.clip);
      adam_step<S>(params, grad, adam, config.learning_rate);
      epoch_loss += batch_loss * static_cast<double>(bsz);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(n);
    rec.valid_loss = evaluate_loss(net, params, valid_data, config.threads);
    if (!std::isfinite(rec.valid_loss))
      fail(ErrorCode::NonFinite, "non-finite validation loss at epoch " + std::to_string(epoch));
    if (spec.task == Task::Classification) {
      rec.train_accuracy = detail::accuracy_of(predict_all(net, params, train_data, config.threads), net.output_dim(),
                                               train_data.class_index);
      rec.valid_accuracy = detail::accuracy_of(predict_all(net, params, valid_data, config.threads), net.output_dim(),
                                               valid_data.class_index);
    }
    result.history.epochs.push_back(rec);

    if (rec.valid_loss < best) {
      best = rec.valid_loss;
      result.params = params;
      result.history.best_epoch = epoch;
      result.history.best_valid_loss = best;
    }
    if (rec.valid_loss < reference - config.min_delta) {
      reference = rec.valid_loss;
      wait = 0;
    } else if (++wait >= config.patience) {
      result.history.early_stopped = true;
      break;
    }
    if (on_epoch && !on_epoch(rec)) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct ClassificationReport {
  std::size_t count = 0;
  double accuracy = 0.0;
  std::vector<std::size_t> support;               ///< samples per true class
  std::vector<std::optional<double>> recall;      ///< absent for classes without samples
  std::vector<std::vector<double>> confusion;     ///< row-normalized; rows of absent classes are zero
  std::vector<std::vector<std::size_t>> counts;   ///< raw confusion counts
};

/// Metrics from true and predicted class indices in [0, k).
inline ClassificationReport classification_report(std::span<const int> truth, std::span<const int> predicted, std::size_t k) {
  if (truth.size() != predicted.size()) fail(ErrorCode::ShapeMismatch, "prediction and label counts differ");
  ClassificationReport r;
  r.count = truth.size();
  r.support.assign(k, 0);
  r.counts.assign(k, std::vector<std::size_t>(k, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = static_cast<std::size_t>(truth[i]), p = static_cast<std::size_t>(predicted[i]);
    if (t >= k || p >= k) fail(ErrorCode::ShapeMismatch, "class index out of range");
    ++r.support[t];
    ++r.counts[t][p];
    correct += t == p;
  }
  r.accuracy = r.count ? static_cast<double>(correct) / static_cast<double>(r.count) : 0.0;
  r.recall.assign(k, std::nullopt);
  r.confusion.assign(k, std::vector<double>(k, 0.0));
  for (std::size_t t = 0; t < k; ++t) {
    if (r.support[t] == 0) continue;
    for (std::size_t p = 0; p < k; ++p)
      r.confusion[t][p] = static_cast<double>(r.counts[t][p]) / static_cast<double>(r.support[t]);
    r.recall[t] = r.confusion[t][t];
  }
  return r;
}

inline std::vector<int> argmax_rows(std::span<const double> probs, std::size_t k) {
  std::vector<int> out(probs.size() / k);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto row = probs.subspan(i * k, k);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

struct RegressionReport {
  std::size_t count = 0;
  std::size_t dim = 0;
  std::optional<double> r2;
  double rmse = 0.0;
  std::vector<std::optional<double>> param_r2;  ///< absent where the target has zero variance
  std::vector<double> param_rmse;
  std::vector<double> sample_error;             ///< ||pred_n - target_n|| per sample
};

/// Aggregate metrics use vector norms over all coordinates; per-parameter metrics apply
/// the same formulas to each coordinate.
inline RegressionReport regression_report(std::span<const double> pred, std::span<const double> truth, std::size_t dim) {
  if (pred.size() != truth.size() || dim == 0 || truth.size() % dim != 0)
    fail(ErrorCode::ShapeMismatch, "prediction and target blocks differ in shape");
  RegressionReport r;
  r.dim = dim;
  r.count = truth.size() / dim;
  std::vector<double> mean(dim, 0.0);
  for (std::size_t i = 0; i < r.count; ++i)
    for (std::size_t j = 0; j < dim; ++j) mean[j] += truth[i * dim + j];
  for (auto& m : mean) m /= static_cast<double>(std::max<std::size_t>(r.count, 1));
  std::vector<double> sse(dim, 0.0), sst(dim, 0.0);
  r.sample_error.resize(r.count);
  for (std::size_t i = 0; i < r.count; ++i) {
    double e = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = pred[i * dim + j] - truth[i * dim + j];
      const double v = truth[i * dim + j] - mean[j];
      sse[j] += d * d;
      sst[j] += v * v;
      e += d * d;
    }
    r.sample_error[i] = std::sqrt(e);
  }
  double total_sse = 0.0, total_sst = 0.0;
  r.param_r2.resize(dim);
  r.param_rmse.resize(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    total_sse += sse[j];
    total_sst += sst[j];
    if (sst[j] > 0.0) r.param_r2[j] = 1.0 - sse[j] / sst[j];
    r.param_rmse[j] = r.count ? std::sqrt(sse[j] / static_cast<double>(r.count)) : 0.0;
  }
  if (total_sst > 0.0) r.r2 = 1.0 - total_sse / total_sst;
  r.rmse = r.count ? std::sqrt(total_sse / static_cast<double>(r.count)) : 0.0;
  return r;
}

template <class S>
ClassificationReport evaluate_classification(const Network<S>& net, const Parameters<S>& params, const TrainingData& d,
                                             unsigned threads = 1) {
  const auto probs = predict_all(net, params, d, threads);
  return classification_report(d.class_index, argmax_rows(probs, net.output_dim()), net.output_dim());
}

/// Regression metrics in original target units: predictions and targets are both mapped
/// back through `target_scaler` before comparison.
template <class S>
RegressionReport evaluate_regression(const Network<S>& net, const Parameters<S>& params, const TrainingData& d,
                                     const Standardizer& target_scaler, unsigned threads = 1) {
  auto pred = predict_all(net, params, d, threads);
  auto truth = d.targets;
  target_scaler.invert(pred);
  target_scaler.invert(truth);
  return regression_report(pred, truth, net.output_dim());
}

// ---------------------------------------------------------------------------
// Noise sweep
// ---------------------------------------------------------------------------

struct NoiseLevelResult {
  double level = 0.0;
  int trials = 0;
  double accuracy = 0.0;                      ///< classification, mean over trials
  std::vector<std::optional<double>> recall;  ///< classification, mean over trials
  double r2 = 0.0;                            ///< regression, mean over trials
  double rmse = 0.0;
  std::vector<double> param_rmse;
};

inline const std::vector<double> kDefaultNoiseLevels{0.005, 0.01, 0.02, 0.05};

/// Perturbs the standardized test features with eta * N(0, 1) and re-evaluates, averaging
/// over `trials` draws per level. Level 0 reproduces the clean evaluation.
template <class S>
std::vector<NoiseLevelResult> noise_sweep(const Network<S>& net, const Parameters<S>& params, const TrainingData& test,
                                          std::span<const double> levels, std::uint64_t seed, int trials,
                                          const Standardizer* target_scaler = nullptr, unsigned threads = 1) {
  if (trials < 1) fail(ErrorCode::InvalidConfig, "noise sweep needs at least one trial");
  const bool cls = net.spec().task == Task::Classification;
  if (!cls && !target_scaler) fail(ErrorCode::InvalidConfig, "regression sweep needs the target standardizer");
  std::vector<NoiseLevelResult> out;
  for (std::size_t li = 0; li < levels.size(); ++li) {
    NoiseLevelResult res;
    res.level = levels[li];
    res.trials = trials;
    std::vector<double> recall_sum(net.output_dim(), 0.0);
    std::vector<int> recall_n(net.output_dim(), 0);
    for (int t = 0; t < trials; ++t) {
      TrainingData noisy = test;
      Rng rng = make_rng(derive_seed(seed, li, static_cast<std::uint64_t>(t)), 0x0015EULL);
      add_noise(noisy.features, levels[li], rng);
      if (cls) {
        const auto rep = evaluate_classification(net, params, noisy, threads);
        res.accuracy += rep.accuracy / trials;
        for (std::size_t k = 0; k < rep.recall.size(); ++k)
          if (rep.recall[k]) recall_sum[k] += *rep.recall[k], ++recall_n[k];
      } else {
        const auto rep = evaluate_regression(net, params, noisy, *target_scaler, threads);
        res.r2 += rep.r2.value_or(0.0) / trials;
        res.rmse += rep.rmse / trials;
        res.param_rmse.resize(rep.param_rmse.size(), 0.0);
        for (std::size_t j = 0; j < rep.param_rmse.size(); ++j) res.param_rmse[j] += rep.param_rmse[j] / trials;
      }
    }
    if (cls) {
      res.recall.resize(net.output_dim());
      for (std::size_t k = 0; k < recall_sum.size(); ++k)
        if (recall_n[k]) res.recall[k] = recall_sum[k] / recall_n[k];
    }
    out.push_back(std::move(res));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

struct GradCheckReport {
  std::size_t parameters = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  int worst_layer = -1;
  double tolerance = 0.0;
  bool passed = false;
};

struct GradCheckOptions {
  double step = 1e-6;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-2;
  std::size_t batch = 3;
  /// Applied to the analytic gradient before comparison; used to test the harness.
  std::function<void(std::vector<double>&)> corrupt;
};

/// Compares the analytic gradient of loss + regularization to central differences for
/// every parameter, in double precision and eval mode (dropout off). Parameters are drawn
/// away from their initial values so biases, gains and shifts are exercised.
inline GradCheckReport grad_check(const NetworkSpec& spec, std::uint64_t seed, const GradCheckOptions& opt = {}) {
  spec.validate();
  if (spec.param_count() > 50000) fail(ErrorCode::InvalidSpec, "gradient check is limited to networks with <= 5e4 parameters");
  Network<double> net(spec);
  auto params = nn::init_parameters<double>(spec, seed);
  Rng rng = make_rng(seed, 0x6C4ECULL);
  for (auto& v : params.values) v += uniform(rng, -0.2, 0.2);
  params.touch();

  const std::size_t B = opt.batch;
  Tensor<double> x(B * static_cast<std::size_t>(spec.T0), static_cast<std::size_t>(spec.C0));
  for (auto& v : x.values()) v = uniform(rng, -1.0, 1.0);
  Tensor<double> y(B, net.output_dim());
  if (spec.task == Task::Classification) {
    for (std::size_t b = 0; b < B; ++b) y(b, static_cast<std::size_t>(rng() % net.output_dim())) = 1.0;
  } else {
    for (auto& v : y.values()) v = uniform(rng, -1.0, 1.0);
  }

  auto loss_at = [&](const Parameters<double>& p) {
    const auto out = net.forward(p, x, B, Mode::Eval);
    return loss_and_gradient<double>(spec.task, out, y, B, nullptr) + net.regularization(p);
  };

  nn::ForwardCache<double> cache;
  const auto out = net.forward(params, x, B, Mode::Eval, &cache);
  Tensor<double> dlogits;
  loss_and_gradient<double>(spec.task, out, y, B, &dlogits);
  std::vector<double> analytic(params.size(), 0.0);
  net.backward(params, cache, dlogits, analytic, true);
  if (opt.corrupt) opt.corrupt(analytic);

  GradCheckReport r;
  r.parameters = params.size();
  r.tolerance = opt.tolerance;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params.values[i];
    params.values[i] = saved + opt.step;
    const double up = loss_at(params);
    params.values[i] = saved - opt.step;
    const double down = loss_at(params);
    params.values[i] = saved;
    const double numeric = (up - down) / (2.0 * opt.step);
    const double abs_err = std::abs(analytic[i] - numeric);
    const double rel = abs_err / std::max({std::abs(analytic[i]), std::abs(numeric), opt.floor});
    r.max_abs_error = std::max(r.max_abs_error, abs_err);
    if (rel > r.max_rel_error) {
      r.max_rel_error = rel;
      r.worst_index = i;
    }
  }
  for (const auto& b : params.blocks)
    if (r.worst_index >= b.offset && r.worst_index < b.offset + b.size) r.worst_layer = b.layer;
  r.passed = r.max_rel_error < opt.tolerance;
  return r;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

inline nlohmann::json to_json(const ClassificationReport& r, std::span<const ShapeClass> classes = {}) {
  nlohmann::json j;
  j["count"] = r.count;
  j["accuracy"] = r.accuracy;
  j["support"] = r.support;
  nlohmann::json rec = nlohmann::json::array();
  for (const auto& v : r.recall) rec.push_back(optional_json(v));
  j["recall"] = rec;
  j["confusion"] = r.confusion;
  j["counts"] = r.counts;
  if (!classes.empty()) {
    std::vector<std::string> names;
    for (auto c : classes) names.emplace_back(class_name(c));
    j["classes"] = names;
  }
  return j;
}

inline nlohmann::json to_json(const RegressionReport& r) {
  nlohmann::json j;
  j["count"] = r.count;
  j["r2"] = optional_json(r.r2);
  j["rmse"] = r.rmse;
  nlohmann::json pr = nlohmann::json::array();
  for (const auto& v : r.param_r2) pr.push_back(optional_json(v));
  j["param_r2"] = pr;
  j["param_rmse"] = r.param_rmse;
  return j;
}

inline nlohmann::json to_json(const std::vector<NoiseLevelResult>& sweep) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : sweep) {
    nlohmann::json j{{"level", s.level}, {"trials", s.trials}};
    if (!s.recall.empty()) {
      j["accuracy"] = s.accuracy;
      nlohmann::json rec = nlohmann::json::array();
      for (const auto& v : s.recall) rec.push_back(optional_json(v));
      j["recall"] = rec;
    } else {
      j["r2"] = s.r2;
      j["rmse"] = s.rmse;
      j["param_rmse"] = s.param_rmse;
    }
    arr.push_back(j);
  }
  return arr;
}

inline nlohmann::json to_json(const GradCheckReport& r) {
  return {{"parameters", r.parameters}, {"max_rel_error", r.max_rel_error}, {"max_abs_error", r.max_abs_error},
          {"worst_index", r.worst_index}, {"worst_layer", r.worst_layer},     {"tolerance", r.tolerance},
          {"passed", r.passed}};
}

}  // namespace circscatter
