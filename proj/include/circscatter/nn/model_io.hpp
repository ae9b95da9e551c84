#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "circscatter/error.hpp"
#include "circscatter/nn/network.hpp"
#include "circscatter/nn/spec.hpp"

namespace circscatter::nn {

inline constexpr std::string_view kModelMagic = "cscmodel-v1";

template <class S>
constexpr std::string_view dtype_name() {
  static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
  return std::is_same_v<S, float> ? "f32" : "f64";
}

namespace detail {

template <class T>
void write_le(std::ostream& out, T v) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits = std::bit_cast<U>(v);
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <class T>
T read_le(std::istream& in) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  unsigned char buf[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(U))) fail(ErrorCode::Parse, "model file truncated");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(buf[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

}  // namespace detail

/// Magic line, one JSON line with the spec, dtype and count, then the parameters as raw
/// little-endian values in block order.
template <class S>
void write_model(std::ostream& out, const NetworkSpec& spec, const Parameters<S>& params) {
  if (params.size() != spec.param_count()) fail(ErrorCode::ShapeMismatch, "parameters do not match the spec");
  const nlohmann::json meta{{"spec", spec}, {"dtype", dtype_name<S>()}, {"count", params.size()}};
  out << kModelMagic << '\n' << meta.dump() << '\n';
  for (S v : params.values) detail::write_le(out, v);
}

template <class S>
struct LoadedModel {
  NetworkSpec spec;
  Parameters<S> params;
};

template <class S>
LoadedModel<S> read_model(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kModelMagic) fail(ErrorCode::Parse, "not a model file (bad magic line)");
  if (!std::getline(in, line)) fail(ErrorCode::Parse, "model file has no header");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("model header: ") + e.what());
  }
  LoadedModel<S> m;
  try {
    m.spec = meta.at("spec").get<NetworkSpec>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("model spec: ") + e.what());
  }
  m.spec.validate();
  if (meta.value("dtype", std::string()) != dtype_name<S>())
    fail(ErrorCode::Parse, "model dtype " + meta.value("dtype", std::string("?")) + " does not match the reader");
  const auto count = meta.at("count").get<std::size_t>();
  if (count != m.spec.param_count()) fail(ErrorCode::Parse, "model parameter count does not match its spec");
  m.params.blocks = param_layout(m.spec);
  m.params.values.resize(count);
  for (auto& v : m.params.values) v = detail::read_le<S>(in);
  if (in.peek() != std::char_traits<char>::eof()) fail(ErrorCode::Parse, "trailing bytes after model parameters");
  return m;
}

template <class S>
void save_model(const std::string& path, const NetworkSpec& spec, const Parameters<S>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write model file " + path);
  write_model(out, spec, params);
  if (!out) fail(ErrorCode::Io, "failed writing model file " + path);
}

template <class S>
LoadedModel<S> load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open model file " + path);
  return read_model<S>(in);
}

}  // namespace circscatter::nn
