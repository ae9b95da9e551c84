#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "circscatter/dataset.hpp"
#include "circscatter/error.hpp"

namespace circscatter::nn {

enum class LayerKind : int { CircConv, Attention, Bottleneck, Flatten, Dense, Output };
enum class Activation : int { Swish, Identity, Softmax };

/// One layer of the network description. Fields not used by a kind stay at defaults.
struct LayerSpec {
  LayerKind kind = LayerKind::Flatten;
  int filters = 0;    ///< CircConv N_f, Bottleneck N_b
  int kernel = 1;     ///< CircConv K, Attention K_mix
  int stride = 1;     ///< CircConv S
  int reduction = 1;  ///< Attention r
  int units = 0;      ///< Dense / Output width
  double dropout = 0.0;
  double l2 = 0.0;
  bool layer_norm = false;
  Activation activation = Activation::Swish;

  static constexpr LayerSpec conv(int filters, int kernel, int stride, Activation act = Activation::Swish) {
    LayerSpec s;
    s.kind = LayerKind::CircConv;
    s.filters = filters;
    s.kernel = kernel;
    s.stride = stride;
    s.activation = act;
    return s;
  }
  static constexpr LayerSpec attention(int mix_kernel, int reduction) {
    LayerSpec s;
    s.kind = LayerKind::Attention;
    s.kernel = mix_kernel;
    s.reduction = reduction;
    return s;
  }
  static constexpr LayerSpec bottleneck(int channels, Activation act = Activation::Swish) {
    LayerSpec s;
    s.kind = LayerKind::Bottleneck;
    s.filters = channels;
    s.activation = act;
    return s;
  }
  static constexpr LayerSpec flatten() { return LayerSpec{}; }
  static constexpr LayerSpec dense(int units, double dropout = 0.0, double l2 = 0.0, bool layer_norm = true,
                                   Activation act = Activation::Swish) {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.units = units;
    s.dropout = dropout;
    s.l2 = l2;
    s.layer_norm = layer_norm;
    s.activation = act;
    return s;
  }
  static constexpr LayerSpec output(int units, Activation act) {
    LayerSpec s;
    s.kind = LayerKind::Output;
    s.units = units;
    s.activation = act;
    return s;
  }

  friend constexpr bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Activation shape after a layer: rows x cols per sample (rows = 1 after Flatten).
struct LayerShape {
  int rows = 0;
  int cols = 0;
  friend constexpr bool operator==(const LayerShape&, const LayerShape&) = default;
};

constexpr int ceil_div(int a, int b) noexcept { return (a + b - 1) / b; }

/// Trainable parameter count of one layer given its input shape.
constexpr std::size_t layer_param_count(const LayerSpec& l, LayerShape in) noexcept {
  const auto c = static_cast<std::size_t>(in.cols);
  switch (l.kind) {
    case LayerKind::CircConv:
      return static_cast<std::size_t>(l.filters) * (static_cast<std::size_t>(l.kernel) * c + 1);
    case LayerKind::Attention: {
      const std::size_t h = c / static_cast<std::size_t>(l.reduction);
      return c * static_cast<std::size_t>(l.kernel) * c + c  // spatial mixing conv
             + 2 * c                                         // layer norm gain/shift
             + h * c + h + c * h + c;                        // excitation MLP
    }
    case LayerKind::Bottleneck: return c * static_cast<std::size_t>(l.filters) + static_cast<std::size_t>(l.filters);
    case LayerKind::Flatten: return 0;
    case LayerKind::Dense:
    case LayerKind::Output: {
      const auto u = static_cast<std::size_t>(l.units);
      return u * c + u + (l.kind == LayerKind::Dense && l.layer_norm ? 2 * u : 0);
    }
  }
  return 0;
}

/// Result of walking a layer list from an input shape. `error` is empty when consistent.
struct Propagation {
  std::array<LayerShape, 32> shapes{};  ///< output shape of each layer
  std::size_t count = 0;
  std::size_t params = 0;
  int flatten_dim = 0;
  int output_dim = 0;
  std::string_view error;
  int error_layer = -1;
};

/// Shape propagation and structural validation; usable in constant expressions.
constexpr Propagation propagate(std::span<const LayerSpec> layers, int T0, int C0) {
  Propagation p;
  LayerShape cur{T0, C0};
  bool flattened = false;
  int flattens = 0;
  auto bad = [&](std::size_t i, std::string_view why) {
    p.error = why;
    p.error_layer = static_cast<int>(i);
    return p;
  };
  if (T0 < 1 || C0 < 1) return bad(0, "input shape must be positive");
  if (layers.size() > p.shapes.size()) return bad(0, "too many layers");
  if (layers.empty()) return bad(0, "empty network");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    LayerShape next = cur;
    switch (l.kind) {
      case LayerKind::CircConv:
        if (flattened) return bad(i, "convolution after flatten");
        if (l.filters < 1 || l.kernel < 1 || l.stride < 1) return bad(i, "convolution sizes must be >= 1");
        if (l.activation == Activation::Softmax) return bad(i, "softmax is only valid on the output layer");
        if (l.kernel > cur.rows + l.kernel - 1) return bad(i, "kernel longer than padded input");
        next = {ceil_div(cur.rows, l.stride), l.filters};
        break;
      case LayerKind::Attention:
        if (flattened) return bad(i, "attention after flatten");
        if (l.kernel < 1 || l.reduction < 1) return bad(i, "attention sizes must be >= 1");
        if (cur.cols % l.reduction != 0) return bad(i, "channel count not divisible by reduction factor");
        break;
      case LayerKind::Bottleneck:
        if (flattened) return bad(i, "bottleneck after flatten");
        if (l.filters < 1) return bad(i, "bottleneck width must be >= 1");
        if (l.activation == Activation::Softmax) return bad(i, "softmax is only valid on the output layer");
        next = {cur.rows, l.filters};
        break;
      case LayerKind::Flatten:
        ++flattens;
        if (flattened) return bad(i, "second flatten");
        flattened = true;
        next = {1, cur.rows * cur.cols};
        p.flatten_dim = next.cols;
        break;
      case LayerKind::Dense:
        if (!flattened) return bad(i, "dense layer before flatten");
        if (l.units < 1) return bad(i, "dense width must be >= 1");
        if (!(l.dropout >= 0.0 && l.dropout < 1.0)) return bad(i, "dropout must lie in [0, 1)");
        if (!(l.l2 >= 0.0)) return bad(i, "l2 factor must be non-negative");
        if (l.activation == Activation::Softmax) return bad(i, "softmax is only valid on the output layer");
        if (l.layer_norm && l.units < 2) return bad(i, "layer norm needs at least 2 units");
        next = {1, l.units};
        break;
      case LayerKind::Output:
        if (!flattened) return bad(i, "output layer before flatten");
        if (i + 1 != layers.size()) return bad(i, "output layer must be last");
        if (l.units < 1) return bad(i, "output width must be >= 1");
        if (l.activation == Activation::Swish) return bad(i, "output activation must be softmax or identity");
        next = {1, l.units};
        p.output_dim = l.units;
        break;
    }
    p.params += layer_param_count(l, cur);
    p.shapes[i] = next;
    cur = next;
    p.count = i + 1;
  }
  if (flattens != 1) return bad(layers.size() - 1, "network needs exactly one flatten");
  if (layers.back().kind != LayerKind::Output) return bad(layers.size() - 1, "network must end with an output layer");
  return p;
}

/// Layer list plus input shape and task.
struct NetworkSpec {
  std::string name;
  int T0 = 32;
  int C0 = 2;
  Task task = Task::Classification;
  std::vector<LayerSpec> layers;

  Propagation shapes() const { return propagate(layers, T0, C0); }

  void validate() const {
    const auto p = shapes();
    if (!p.error.empty())
      fail(ErrorCode::InvalidSpec, "network '" + name + "' layer " + std::to_string(p.error_layer) + ": " +
                                       std::string(p.error));
    const auto out = layers.back().activation;
    if ((task == Task::Classification) != (out == Activation::Softmax))
      fail(ErrorCode::InvalidSpec, "classification networks end in softmax, regression networks in identity");
  }

  std::size_t param_count() const { return shapes().params; }
  int output_dim() const { return layers.empty() ? 0 : layers.back().units; }
  InputLayout input_layout() const { return {T0, C0}; }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

// ---------------------------------------------------------------------------
// Architecture presets
// ---------------------------------------------------------------------------

namespace presets {

using L = LayerSpec;
inline constexpr auto kId = Activation::Identity;
inline constexpr auto kSoftmax = Activation::Softmax;

/// Shape classifier on (32, 2) electric-field input.
inline constexpr std::array kAp1{L::conv(64, 5, 1), L::conv(64, 5, 2), L::conv(64, 7, 1), L::bottleneck(16),
                                 L::flatten(),      L::dense(128, 0.2), L::dense(64, 0.1),  L::output(3, kSoftmax)};
/// Peanut regressor on (32, 2).
inline constexpr std::array kAp2{L::conv(64, 5, 1), L::conv(64, 5, 2), L::bottleneck(16), L::flatten(),
                                 L::dense(64),      L::output(5, kId)};
/// Kite regressor on (32, 2).
inline constexpr std::array kAp4{L::conv(64, 5, 1), L::conv(64, 5, 2), L::bottleneck(16), L::flatten(),
                                 L::dense(64),      L::output(6, kId)};
/// Star regressor, fixed impedance, on (128, 4).
inline constexpr std::array kAp7{L::conv(128, 5, 1), L::conv(128, 5, 2), L::conv(128, 15, 1), L::conv(128, 31, 1),
                                 L::bottleneck(64),  L::flatten(),       L::dense(256, 0.1),  L::dense(128),
                                 L::output(13, kId)};
/// Star regressor with channel attention, on (128, 8) from two incidences.
inline constexpr std::array kAp10{L::conv(128, 5, 1),        L::conv(128, 5, 2),       L::conv(128, 15, 1),
                                  L::conv(128, 31, 1),       L::attention(3, 8),       L::bottleneck(64),
                                  L::flatten(),              L::dense(512, 0.3, 1e-4), L::dense(256, 0.2, 1e-4),
                                  L::dense(128, 0.1, 1e-4),  L::output(14, kId)};

inline constexpr auto kAp1Shapes = propagate(kAp1, 32, 2);
inline constexpr auto kAp2Shapes = propagate(kAp2, 32, 2);
inline constexpr auto kAp4Shapes = propagate(kAp4, 32, 2);
inline constexpr auto kAp7Shapes = propagate(kAp7, 128, 4);
inline constexpr auto kAp10Shapes = propagate(kAp10, 128, 8);

// Inter-layer shapes listed in the architecture tables.
static_assert(kAp1Shapes.error.empty());
static_assert(kAp1Shapes.shapes[0] == LayerShape{32, 64} && kAp1Shapes.shapes[1] == LayerShape{16, 64});
static_assert(kAp1Shapes.shapes[2] == LayerShape{16, 64} && kAp1Shapes.shapes[3] == LayerShape{16, 16});
static_assert(kAp1Shapes.flatten_dim == 256 && kAp1Shapes.output_dim == 3);
static_assert(kAp2Shapes.error.empty());
static_assert(kAp2Shapes.shapes[0] == LayerShape{32, 64} && kAp2Shapes.shapes[1] == LayerShape{16, 64});
static_assert(kAp2Shapes.shapes[2] == LayerShape{16, 16});
static_assert(kAp2Shapes.flatten_dim == 256 && kAp2Shapes.output_dim == 5);
static_assert(kAp4Shapes.error.empty() && kAp4Shapes.flatten_dim == 256 && kAp4Shapes.output_dim == 6);
static_assert(kAp7Shapes.error.empty());
static_assert(kAp7Shapes.shapes[0] == LayerShape{128, 128} && kAp7Shapes.shapes[1] == LayerShape{64, 128});
static_assert(kAp7Shapes.shapes[2] == LayerShape{64, 128} && kAp7Shapes.shapes[3] == LayerShape{64, 128});
static_assert(kAp7Shapes.shapes[4] == LayerShape{64, 64});
static_assert(kAp7Shapes.flatten_dim == 4096 && kAp7Shapes.output_dim == 13);
static_assert(kAp10Shapes.error.empty());
static_assert(kAp10Shapes.shapes[3] == LayerShape{64, 128} && kAp10Shapes.shapes[4] == LayerShape{64, 128});
static_assert(kAp10Shapes.shapes[5] == LayerShape{64, 64});
static_assert(kAp10Shapes.flatten_dim == 4096 && kAp10Shapes.output_dim == 14);

// Parameter counts, including conv biases and layer-norm gain/shift pairs.
inline constexpr std::size_t kAp1Params = 92755;
inline constexpr std::size_t kAp2Params = 39189;
inline constexpr std::size_t kAp4Params = 39254;
inline constexpr std::size_t kAp7Params = 1931085;
inline constexpr std::size_t kAp10Params = 3168734;
static_assert(kAp1Shapes.params == kAp1Params);
static_assert(kAp2Shapes.params == kAp2Params);
static_assert(kAp4Shapes.params == kAp4Params);
static_assert(kAp7Shapes.params == kAp7Params);
static_assert(kAp10Shapes.params == kAp10Params);

}  // namespace presets

inline constexpr std::array<std::string_view, 5> kPresetNames{"ap1", "ap2", "ap4", "ap7", "ap10"};

inline NetworkSpec make_preset(std::string_view name) {
  auto build = [&](std::span<const LayerSpec> layers, int T0, int C0, Task task) {
    return NetworkSpec{std::string(name), T0, C0, task, std::vector<LayerSpec>(layers.begin(), layers.end())};
  };
  if (name == "ap1") return build(presets::kAp1, 32, 2, Task::Classification);
  if (name == "ap2") return build(presets::kAp2, 32, 2, Task::Regression);
  if (name == "ap4") return build(presets::kAp4, 32, 2, Task::Regression);
  if (name == "ap7") return build(presets::kAp7, 128, 4, Task::Regression);
  if (name == "ap10") return build(presets::kAp10, 128, 8, Task::Regression);
  fail(ErrorCode::InvalidSpec, "unknown preset '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

NLOHMANN_JSON_SERIALIZE_ENUM(LayerKind, {{LayerKind::CircConv, "circ_conv"},
                                         {LayerKind::Attention, "attention"},
                                         {LayerKind::Bottleneck, "bottleneck"},
                                         {LayerKind::Flatten, "flatten"},
                                         {LayerKind::Dense, "dense"},
                                         {LayerKind::Output, "output"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Activation,
                             {{Activation::Swish, "swish"}, {Activation::Identity, "identity"}, {Activation::Softmax, "softmax"}})

inline void to_json(nlohmann::json& j, const LayerSpec& l) {
  j = {{"kind", l.kind}};
  switch (l.kind) {
    case LayerKind::CircConv:
      j["filters"] = l.filters, j["kernel"] = l.kernel, j["stride"] = l.stride, j["activation"] = l.activation;
      break;
    case LayerKind::Attention: j["kernel"] = l.kernel, j["reduction"] = l.reduction; break;
    case LayerKind::Bottleneck: j["filters"] = l.filters, j["activation"] = l.activation; break;
    case LayerKind::Flatten: break;
    case LayerKind::Dense:
      j["units"] = l.units, j["dropout"] = l.dropout, j["l2"] = l.l2, j["layer_norm"] = l.layer_norm;
      j["activation"] = l.activation;
      break;
    case LayerKind::Output: j["units"] = l.units, j["activation"] = l.activation; break;
  }
}

inline void from_json(const nlohmann::json& j, LayerSpec& l) {
  l = LayerSpec{};
  l.kind = j.at("kind").get<LayerKind>();
  l.filters = j.value("filters", 0);
  l.kernel = j.value("kernel", 1);
  l.stride = j.value("stride", 1);
  l.reduction = j.value("reduction", 1);
  l.units = j.value("units", 0);
  l.dropout = j.value("dropout", 0.0);
  l.l2 = j.value("l2", 0.0);
  l.layer_norm = j.value("layer_norm", false);
  l.activation = j.value("activation", l.kind == LayerKind::Output ? Activation::Identity : Activation::Swish);
}

inline void to_json(nlohmann::json& j, const NetworkSpec& s) {
  j = {{"name", s.name}, {"T0", s.T0}, {"C0", s.C0}, {"task", std::string(task_name(s.task))}, {"layers", s.layers}};
}

inline void from_json(const nlohmann::json& j, NetworkSpec& s) {
  s.name = j.value("name", std::string("custom"));
  s.T0 = j.at("T0").get<int>();
  s.C0 = j.at("C0").get<int>();
  const auto task = j.at("task").get<std::string>();
  if (task != "class" && task != "reg") fail(ErrorCode::Parse, "unknown task '" + task + "'");
  s.task = task == "class" ? Task::Classification : Task::Regression;
  s.layers = j.at("layers").get<std::vector<LayerSpec>>();
}

}  // namespace circscatter::nn
