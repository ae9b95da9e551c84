#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "circscatter/error.hpp"
#include "circscatter/nn/layers.hpp"
#include "circscatter/nn/spec.hpp"
#include "circscatter/random.hpp"
#include "circscatter/tensor.hpp"

namespace circscatter::nn {

enum class ParamRole { Kernel, Bias, Gain, Shift, MixKernel, MixBias, SqueezeKernel, SqueezeBias, ExciteKernel, ExciteBias };

/// Contiguous slice of the flat parameter vector belonging to one tensor of one layer.
struct ParamBlock {
  int layer = 0;
  ParamRole role = ParamRole::Kernel;
  std::size_t offset = 0;
  std::size_t size = 0;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
  double l2 = 0.0;  ///< weight-decay coefficient; nonzero only for hidden dense kernels
};

/// Block table for a spec. Blocks of a layer are contiguous.
inline std::vector<ParamBlock> param_layout(const NetworkSpec& spec) {
  const auto prop = spec.shapes();
  if (!prop.error.empty()) spec.validate();
  std::vector<ParamBlock> blocks;
  std::size_t offset = 0;
  LayerShape in{spec.T0, spec.C0};
  auto add = [&](int layer, ParamRole role, std::size_t size, std::size_t fi, std::size_t fo, double l2 = 0.0) {
    blocks.push_back({layer, role, offset, size, fi, fo, l2});
    offset += size;
  };
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const auto& l = spec.layers[li];
    const int i = static_cast<int>(li);
    const auto c = static_cast<std::size_t>(in.cols);
    const auto k = static_cast<std::size_t>(l.kernel);
    switch (l.kind) {
      case LayerKind::CircConv: {
        const auto nf = static_cast<std::size_t>(l.filters);
        add(i, ParamRole::Kernel, nf * k * c, k * c, k * nf);
        add(i, ParamRole::Bias, nf, 0, 0);
        break;
      }
      case LayerKind::Attention: {
        const std::size_t h = c / static_cast<std::size_t>(l.reduction);
        add(i, ParamRole::MixKernel, c * k * c, k * c, k * c);
        add(i, ParamRole::MixBias, c, 0, 0);
        add(i, ParamRole::Gain, c, 0, 0);
        add(i, ParamRole::Shift, c, 0, 0);
        add(i, ParamRole::SqueezeKernel, h * c, c, h);
        add(i, ParamRole::SqueezeBias, h, 0, 0);
        add(i, ParamRole::ExciteKernel, c * h, h, c);
        add(i, ParamRole::ExciteBias, c, 0, 0);
        break;
      }
      case LayerKind::Bottleneck: {
        const auto nb = static_cast<std::size_t>(l.filters);
        add(i, ParamRole::Kernel, c * nb, c, nb);
        add(i, ParamRole::Bias, nb, 0, 0);
        break;
      }
      case LayerKind::Flatten: break;
      case LayerKind::Dense:
      case LayerKind::Output: {
        const auto u = static_cast<std::size_t>(l.units);
        add(i, ParamRole::Kernel, u * c, c, u, l.kind == LayerKind::Dense ? l.l2 : 0.0);
        add(i, ParamRole::Bias, u, 0, 0);
        if (l.kind == LayerKind::Dense && l.layer_norm) {
          add(i, ParamRole::Gain, u, 0, 0);
          add(i, ParamRole::Shift, u, 0, 0);
        }
        break;
      }
    }
    in = prop.shapes[li];
  }
  return blocks;
}

/// Flat parameter vector with its block table. `version` changes on every update so
/// that caches computed under older values can be detected.
template <class S>
struct Parameters {
  std::vector<S> values;
  std::vector<ParamBlock> blocks;
  std::uint64_t version = 0;

  std::size_t size() const noexcept { return values.size(); }
  std::span<S> block(std::size_t b) noexcept { return {values.data() + blocks[b].offset, blocks[b].size}; }
  std::span<const S> block(std::size_t b) const noexcept { return {values.data() + blocks[b].offset, blocks[b].size}; }
  void touch() noexcept { ++version; }

  template <class T>
  Parameters<T> cast() const {
    Parameters<T> out;
    out.values.assign(values.begin(), values.end());
    out.blocks = blocks;
    out.version = version;
    return out;
  }
};

/// Glorot-uniform kernels, zero biases, unit gains, zero shifts. Convolution fans are
/// K C_in and K N_f.
template <class S = float>
Parameters<S> init_parameters(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Parameters<S> p;
  p.blocks = param_layout(spec);
  p.values.assign(spec.param_count(), S(0));
  auto rng = make_rng(seed, 0x1417ULL);
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    const auto& blk = p.blocks[b];
    auto v = p.block(b);
    switch (blk.role) {
      case ParamRole::Kernel:
      case ParamRole::MixKernel:
      case ParamRole::SqueezeKernel:
      case ParamRole::ExciteKernel: {
        const double limit = std::sqrt(6.0 / static_cast<double>(blk.fan_in + blk.fan_out));
        for (auto& x : v) x = static_cast<S>(uniform(rng, -limit, limit));
        break;
      }
      case ParamRole::Gain: std::fill(v.begin(), v.end(), S(1)); break;
      default: std::fill(v.begin(), v.end(), S(0)); break;
    }
  }
  return p;
}

enum class Mode { Train, Eval };

/// Per-layer intermediate values kept for the backward pass. Unused members stay empty.
template <class S>
struct LayerCache {
  Tensor<S> input;
  Tensor<S> col;
  Tensor<S> z;
  Tensor<S> act;
  Tensor<S> xhat;
  std::vector<S> inv_std;
  std::vector<S> mask;
  // attention
  Tensor<S> hn, g, u1, s1, u2, a;
};

template <class S>
struct ForwardCache {
  std::vector<LayerCache<S>> layers;
  Tensor<S> logits;  ///< output pre-activation, batch x d_out
  std::size_t batch = 0;
  std::uint64_t version = 0;
  bool valid = false;
};

/// Network evaluator for a fixed spec. Activations of a batch are stacked along rows:
/// (B T) x C before Flatten and B x D after it.
template <class S>
class Network {
 public:
  explicit Network(NetworkSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    const auto prop = spec_.shapes();
    in_shapes_.reserve(spec_.layers.size());
    LayerShape cur{spec_.T0, spec_.C0};
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      in_shapes_.push_back(cur);
      cur = prop.shapes[i];
    }
    const auto blocks = param_layout(spec_);
    first_block_.assign(spec_.layers.size(), blocks.size());
    for (std::size_t b = blocks.size(); b-- > 0;) first_block_[static_cast<std::size_t>(blocks[b].layer)] = b;
    block_count_ = blocks.size();
  }

  const NetworkSpec& spec() const noexcept { return spec_; }
  std::size_t input_dim() const noexcept { return static_cast<std::size_t>(spec_.T0 * spec_.C0); }
  std::size_t output_dim() const noexcept { return static_cast<std::size_t>(spec_.output_dim()); }

  /// Forward pass on x of shape (B T0) x C0. Returns the output-layer activation
  /// (probabilities for softmax, identity otherwise). Dropout is active only in Train
  /// mode with a non-null rng. With a cache the intermediates are stored for backward().
  Tensor<S> forward(const Parameters<S>& params, const Tensor<S>& x, std::size_t batch, Mode mode,
                    ForwardCache<S>* cache = nullptr, Rng* rng = nullptr) const {
    check_params(params);
    if (x.rows() != batch * static_cast<std::size_t>(spec_.T0) || x.cols() != static_cast<std::size_t>(spec_.C0))
      fail(ErrorCode::ShapeMismatch, "network input must be (B*T0) x C0");
    ForwardCache<S> local;
    ForwardCache<S>& c = cache ? *cache : local;
    c.layers.resize(spec_.layers.size());
    c.batch = batch;
    c.valid = false;
    Rng* drop_rng = mode == Mode::Train ? rng : nullptr;

    Tensor<S> h = x;
    for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
      auto& lc = c.layers[li];
      lc.input = std::move(h);
      h = forward_layer(params, li, lc, batch, drop_rng);
      if (!cache && li + 1 < spec_.layers.size()) lc = LayerCache<S>{};
    }
    c.logits = c.layers.back().z;
    c.version = params.version;
    c.valid = cache != nullptr;
    return h;
  }

  /// Backward pass from the gradient w.r.t. the output pre-activation. Accumulates into
  /// `grad` (same layout as params); the L2 term is added when requested. Returns the
  /// gradient w.r.t. the input.
  Tensor<S> backward(const Parameters<S>& params, ForwardCache<S>& cache, const Tensor<S>& dlogits, std::vector<S>& grad,
                     bool include_regularization = true) const {
    check_params(params);
    if (!cache.valid || cache.version != params.version)
      fail(ErrorCode::StaleCache, "backward() needs a cache from a forward pass with the current parameters");
    if (dlogits.rows() != cache.batch || dlogits.cols() != output_dim())
      fail(ErrorCode::ShapeMismatch, "output gradient must be B x d_out");
    if (grad.size() != params.size()) grad.assign(params.size(), S(0));

    Tensor<S> d = dlogits;
    for (std::size_t li = spec_.layers.size(); li-- > 0;) d = backward_layer(params, li, cache.layers[li], cache.batch, d, grad);
    if (include_regularization) add_regularization_gradient(params, grad);
    cache.valid = false;
    return d;
  }

  /// lambda * ||W||^2 summed over hidden dense kernels.
  double regularization(const Parameters<S>& params) const {
    double r = 0.0;
    for (std::size_t b = 0; b < params.blocks.size(); ++b) {
      if (params.blocks[b].l2 == 0.0) continue;
      double s = 0.0;
      for (S w : params.block(b)) s += static_cast<double>(w) * static_cast<double>(w);
      r += params.blocks[b].l2 * s;
    }
    return r;
  }

  void add_regularization_gradient(const Parameters<S>& params, std::vector<S>& grad) const {
    for (std::size_t b = 0; b < params.blocks.size(); ++b) {
      const auto& blk = params.blocks[b];
      if (blk.l2 == 0.0) continue;
      const S f = static_cast<S>(2.0 * blk.l2);
      for (std::size_t i = 0; i < blk.size; ++i) grad[blk.offset + i] += f * params.values[blk.offset + i];
    }
  }

  /// Convenience: evaluation-mode outputs for flat channel-major feature rows.
  Tensor<S> predict(const Parameters<S>& params, std::span<const double> features, std::size_t batch) const {
    return forward(params, features_to_input<S>(features, batch), batch, Mode::Eval);
  }

  /// Packs `batch` channel-major feature rows into a (B T0) x C0 input tensor.
  template <class T>
  Tensor<T> features_to_input(std::span<const double> features, std::size_t batch) const {
    const auto T0 = static_cast<std::size_t>(spec_.T0), C0 = static_cast<std::size_t>(spec_.C0);
    if (features.size() != batch * T0 * C0) fail(ErrorCode::ShapeMismatch, "feature block does not match B*T0*C0");
    Tensor<T> x(batch * T0, C0);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < C0; ++c)
        for (std::size_t i = 0; i < T0; ++i) x(b * T0 + i, c) = static_cast<T>(features[b * T0 * C0 + c * T0 + i]);
    return x;
  }

 private:
  void check_params(const Parameters<S>& params) const {
    if (params.values.size() != spec_.param_count() || params.blocks.size() != block_count_)
      fail(ErrorCode::ShapeMismatch, "parameter vector does not match network '" + spec_.name + "'");
  }

  std::span<const S> blk(const Parameters<S>& p, std::size_t li, std::size_t k) const {
    return p.block(first_block_[li] + k);
  }
  std::span<S> gblk(const Parameters<S>& p, std::vector<S>& g, std::size_t li, std::size_t k) const {
    const auto& b = p.blocks[first_block_[li] + k];
    return {g.data() + b.offset, b.size};
  }

  Tensor<S> forward_layer(const Parameters<S>& p, std::size_t li, LayerCache<S>& lc, std::size_t batch, Rng* rng) const {
    const auto& l = spec_.layers[li];
    const LayerShape in = in_shapes_[li];
    Tensor<S> out;
    switch (l.kind) {
      case LayerKind::CircConv: {
        const ConvGeometry g{batch, static_cast<std::size_t>(in.rows), static_cast<std::size_t>(in.cols), l.kernel, l.stride};
        im2col(lc.input, g, lc.col);
        conv_from_patches(lc.col, blk(p, li, 0), blk(p, li, 1), lc.z);
        out.resize(lc.z.rows(), lc.z.cols());
        activate<S>(lc.z.values(), out.values(), l.activation == Activation::Swish);
        break;
      }
      case LayerKind::Attention: {
        const auto T = static_cast<std::size_t>(in.rows), C = static_cast<std::size_t>(in.cols);
        const ConvGeometry g{batch, T, C, l.kernel, 1};
        im2col(lc.input, g, lc.col);
        conv_from_patches(lc.col, blk(p, li, 0), blk(p, li, 1), lc.z);
        lc.act.resize(lc.z.rows(), C);
        activate<S>(lc.z.values(), lc.act.values(), true);
        layer_norm_forward(lc.act, blk(p, li, 2), blk(p, li, 3), lc.hn, lc.xhat, lc.inv_std);
        lc.g.resize(batch, C);
        for (std::size_t b = 0; b < batch; ++b) {
          auto gr = lc.g.row(b);
          for (std::size_t i = 0; i < T; ++i) {
            const auto r = lc.hn.row(b * T + i);
            for (std::size_t c = 0; c < C; ++c) gr[c] += r[c];
          }
          for (auto& v : gr) v /= static_cast<S>(T);
        }
        affine_forward(lc.g, blk(p, li, 4), blk(p, li, 5), lc.u1);
        lc.s1.resize(lc.u1.rows(), lc.u1.cols());
        activate<S>(lc.u1.values(), lc.s1.values(), true);
        affine_forward(lc.s1, blk(p, li, 6), blk(p, li, 7), lc.u2);
        lc.a.resize(lc.u2.rows(), lc.u2.cols());
        for (std::size_t i = 0; i < lc.u2.size(); ++i) lc.a.values()[i] = sigmoid(lc.u2.values()[i]);
        out.resize(batch * T, C);
        for (std::size_t b = 0; b < batch; ++b) {
          const auto ar = lc.a.row(b);
          for (std::size_t i = 0; i < T; ++i) {
            const auto src = lc.hn.row(b * T + i);
            auto dst = out.row(b * T + i);
            for (std::size_t c = 0; c < C; ++c) dst[c] = src[c] * ar[c];
          }
        }
        break;
      }
      case LayerKind::Bottleneck: {
        pointwise_forward(lc.input, blk(p, li, 0), blk(p, li, 1), lc.z);
        out.resize(lc.z.rows(), lc.z.cols());
        activate<S>(lc.z.values(), out.values(), l.activation == Activation::Swish);
        break;
      }
      case LayerKind::Flatten: {
        // Row-major (i, c) -> i * C + c within each sample is the existing memory order.
        const std::size_t D = static_cast<std::size_t>(in.rows) * static_cast<std::size_t>(in.cols);
        out = Tensor<S>(batch, D, std::vector<S>(lc.input.values().begin(), lc.input.values().end()));
        break;
      }
      case LayerKind::Dense: {
        affine_forward(lc.input, blk(p, li, 0), blk(p, li, 1), lc.z);
        lc.act.resize(lc.z.rows(), lc.z.cols());
        activate<S>(lc.z.values(), lc.act.values(), l.activation == Activation::Swish);
        if (l.layer_norm)
          layer_norm_forward(lc.act, blk(p, li, 2), blk(p, li, 3), out, lc.xhat, lc.inv_std);
        else
          out = lc.act;
        dropout_forward<S>(out.values(), l.dropout, rng, lc.mask);
        break;
      }
      case LayerKind::Output: {
        affine_forward(lc.input, blk(p, li, 0), blk(p, li, 1), lc.z);
        if (l.activation == Activation::Softmax)
          softmax_rows(lc.z, out);
        else if (l.activation == Activation::Swish) {
          out.resize(lc.z.rows(), lc.z.cols());
          activate<S>(lc.z.values(), out.values(), true);
        } else
          out = lc.z;
        break;
      }
    }
    return out;
  }

  Tensor<S> backward_layer(const Parameters<S>& p, std::size_t li, LayerCache<S>& lc, std::size_t batch, Tensor<S>& d,
                           std::vector<S>& grad) const {
    const auto& l = spec_.layers[li];
    const LayerShape in = in_shapes_[li];
    const bool first = li == 0;
    Tensor<S> dx;
    switch (l.kind) {
      case LayerKind::CircConv: {
        activate_backward<S>(lc.z.values(), d.values(), l.activation == Activation::Swish);
        conv_backward(p, li, lc, batch, in, l.kernel, l.stride, d, grad, first ? nullptr : &dx, 0);
        break;
      }
      case LayerKind::Attention: {
        const auto T = static_cast<std::size_t>(in.rows), C = static_cast<std::size_t>(in.cols);
        // out = hn * a
        Tensor<S> dhn(batch * T, C), da(batch, C);
        for (std::size_t b = 0; b < batch; ++b) {
          const auto ar = lc.a.row(b);
          auto dar = da.row(b);
          for (std::size_t i = 0; i < T; ++i) {
            const auto g = d.row(b * T + i);
            const auto h = lc.hn.row(b * T + i);
            auto dh = dhn.row(b * T + i);
            for (std::size_t c = 0; c < C; ++c) {
              dh[c] = g[c] * ar[c];
              dar[c] += g[c] * h[c];
            }
          }
        }
        for (std::size_t i = 0; i < da.size(); ++i) {
          const S a = lc.a.values()[i];
          da.values()[i] *= a * (S(1) - a);
        }
        Tensor<S> ds1, dgpool;
        affine_backward(lc.s1, blk(p, li, 6), da, gblk(p, grad, li, 6), gblk(p, grad, li, 7), &ds1);
        activate_backward<S>(lc.u1.values(), ds1.values(), true);
        affine_backward(lc.g, blk(p, li, 4), ds1, gblk(p, grad, li, 4), gblk(p, grad, li, 5), &dgpool);
        for (std::size_t b = 0; b < batch; ++b) {
          const auto dg = dgpool.row(b);
          for (std::size_t i = 0; i < T; ++i) {
            auto dh = dhn.row(b * T + i);
            for (std::size_t c = 0; c < C; ++c) dh[c] += dg[c] / static_cast<S>(T);
          }
        }
        Tensor<S> dm;
        layer_norm_backward(dhn, lc.xhat, lc.inv_std, blk(p, li, 2), gblk(p, grad, li, 2), gblk(p, grad, li, 3), dm);
        activate_backward<S>(lc.z.values(), dm.values(), true);
        conv_backward(p, li, lc, batch, in, l.kernel, 1, dm, grad, first ? nullptr : &dx, 0);
        break;
      }
      case LayerKind::Bottleneck: {
        activate_backward<S>(lc.z.values(), d.values(), l.activation == Activation::Swish);
        pointwise_backward(lc.input, blk(p, li, 0), d, gblk(p, grad, li, 0), gblk(p, grad, li, 1), first ? nullptr : &dx);
        break;
      }
      case LayerKind::Flatten: {
        dx = Tensor<S>(batch * static_cast<std::size_t>(in.rows), static_cast<std::size_t>(in.cols),
                       std::vector<S>(d.values().begin(), d.values().end()));
        break;
      }
      case LayerKind::Dense: {
        dropout_backward<S>(d.values(), lc.mask);
        Tensor<S> dact;
        if (l.layer_norm)
          layer_norm_backward(d, lc.xhat, lc.inv_std, blk(p, li, 2), gblk(p, grad, li, 2), gblk(p, grad, li, 3), dact);
        else
          dact = d;
        activate_backward<S>(lc.z.values(), dact.values(), l.activation == Activation::Swish);
        affine_backward(lc.input, blk(p, li, 0), dact, gblk(p, grad, li, 0), gblk(p, grad, li, 1), first ? nullptr : &dx);
        break;
      }
      case LayerKind::Output: {
        // d is already the gradient w.r.t. the pre-activation.
        affine_backward(lc.input, blk(p, li, 0), d, gblk(p, grad, li, 0), gblk(p, grad, li, 1), first ? nullptr : &dx);
        break;
      }
    }
    return dx;
  }

  void conv_backward(const Parameters<S>& p, std::size_t li, const LayerCache<S>& lc, std::size_t batch, LayerShape in,
                     int kernel, int stride, const Tensor<S>& dz, std::vector<S>& grad, Tensor<S>* dx,
                     std::size_t block0) const {
    const auto nf = dz.cols();
    const ConvGeometry g{batch, static_cast<std::size_t>(in.rows), static_cast<std::size_t>(in.cols), kernel, stride};
    auto dW = gblk(p, grad, li, block0);
    auto db = gblk(p, grad, li, block0 + 1);
    as_matrix(dW, nf, g.patch()).noalias() += dz.matrix().transpose() * lc.col.matrix();
    add_column_sums(db, dz);
    if (dx) {
      Tensor<S> dcol(dz.rows(), g.patch());
      dcol.matrix().noalias() = dz.matrix() * as_matrix(blk(p, li, block0), nf, g.patch());
      dx->resize(batch * g.length, g.in_channels);
      col2im_add(dcol, g, *dx);
    }
  }

  NetworkSpec spec_;
  std::vector<LayerShape> in_shapes_;
  std::vector<std::size_t> first_block_;
  std::size_t block_count_ = 0;
};

}  // namespace circscatter::nn
