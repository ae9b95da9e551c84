#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "circscatter/error.hpp"

namespace circscatter {

template <class S>
using MatrixMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class S>
using ConstMatrixMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

/// Dense row-major rank-2 array. For per-sample data rows index the angular
/// position and columns the channel; batched activations stack samples along rows.
template <class S>
class Tensor {
 public:
  using value_type = S;

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, S fill = S{}) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<S> values) : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows_ * cols_)
      fail(ErrorCode::ShapeMismatch, "tensor data length " + std::to_string(data_.size()) + " does not match " +
                                         std::to_string(rows_) + "x" + std::to_string(cols_));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  S& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  S operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<S> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const S> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  S* data() noexcept { return data_.data(); }
  const S* data() const noexcept { return data_.data(); }
  std::span<S> values() noexcept { return data_; }
  std::span<const S> values() const noexcept { return data_; }
  std::vector<S>& storage() noexcept { return data_; }

  void resize(std::size_t rows, std::size_t cols) {
    rows_ = rows;
    cols_ = cols;
    data_.assign(rows * cols, S{});
  }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

  MatrixMap<S> matrix() noexcept { return {data_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)}; }
  ConstMatrixMap<S> matrix() const noexcept {
    return {data_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)};
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](S v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<S> data_;
};

/// Channel-major flat vector to a T0 x C0 tensor: X[i, c] = x[c * T0 + i].
template <class S = double, class In>
Tensor<S> reshape_to_tensor(std::span<const In> features, std::size_t T0, std::size_t C0) {
  if (features.size() != T0 * C0)
    fail(ErrorCode::ShapeMismatch, "feature length " + std::to_string(features.size()) + " is not " +
                                       std::to_string(T0) + "*" + std::to_string(C0));
  Tensor<S> X(T0, C0);
  for (std::size_t c = 0; c < C0; ++c)
    for (std::size_t i = 0; i < T0; ++i) X(i, c) = static_cast<S>(features[c * T0 + i]);
  return X;
}

template <class S = double, class In>
Tensor<S> reshape_to_tensor(const std::vector<In>& features, std::size_t T0, std::size_t C0) {
  return reshape_to_tensor<S>(std::span<const In>(features), T0, C0);
}

/// Inverse of reshape_to_tensor.
template <class S>
std::vector<S> flatten_channel_major(const Tensor<S>& X) {
  std::vector<S> out(X.size());
  for (std::size_t c = 0; c < X.cols(); ++c)
    for (std::size_t i = 0; i < X.rows(); ++i) out[c * X.rows() + i] = X(i, c);
  return out;
}

}  // namespace circscatter
