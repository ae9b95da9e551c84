#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "circscatter/error.hpp"
#include "circscatter/geometry.hpp"

namespace circscatter {

struct FarField {
  std::vector<std::complex<double>> e;
  std::vector<std::complex<double>> h;
};

/// Measurement directions t_j = 2 pi j / T0.
inline std::vector<double> measurement_angles(int T0) {
  std::vector<double> t(static_cast<std::size_t>(T0));
  for (int j = 0; j < T0; ++j) t[static_cast<std::size_t>(j)] = 2.0 * std::numbers::pi * j / T0;
  return t;
}

/// Deterministic Born/Kirchhoff-type surrogate for the far-field patterns, evaluated
/// at explicit measurement directions. Trapezoidal quadrature on the boundary grid:
///
///   e(t) = sin(theta)/sqrt(eps0) / (1 + lambda) * sum_k exp(i k0 (d - xhat).x_k) w_k
///   h(t) = lambda / (1 + lambda) * sum_k exp(i k0 (d - xhat).x_k) (n_k . xhat) w_k
///
/// with w_k = |x'(tau_k)| dtau and n_k the outward unit normal.
inline FarField surrogate_farfield_at(const BoundaryShape& shape, const ScatterConfig& config, double phi,
                                      std::span<const double> angles) {
  const auto curve = sample_curve(shape, config.boundary_points);
  const double kappa = config.kappa0();
  const double dtau = 2.0 * std::numbers::pi / config.boundary_points;
  const double lambda = shape.impedance;
  const std::complex<double> e_scale = std::sin(config.theta) / std::sqrt(config.eps0) / (1.0 + lambda);
  const std::complex<double> h_scale = lambda / (1.0 + lambda);
  const Vec2 d{std::cos(phi), std::sin(phi)};

  std::vector<Vec2> normals;
  std::vector<double> weights;
  normals.reserve(curve.size());
  weights.reserve(curve.size());
  for (const auto& cp : curve) {
    const double speed = norm(cp.derivative);
    weights.push_back(speed * dtau);
    normals.push_back({cp.derivative.y / speed, -cp.derivative.x / speed});
  }

  FarField out;
  out.e.resize(angles.size());
  out.h.resize(angles.size());
  for (std::size_t j = 0; j < angles.size(); ++j) {
    const Vec2 xhat{std::cos(angles[j]), std::sin(angles[j])};
    const Vec2 q = d - xhat;
    std::complex<double> se{}, sh{};
    for (std::size_t k = 0; k < curve.size(); ++k) {
      const double arg = kappa * dot(q, curve[k].point);
      const std::complex<double> phase(std::cos(arg), std::sin(arg));
      se += phase * weights[k];
      sh += phase * (dot(normals[k], xhat) * weights[k]);
    }
    out.e[j] = e_scale * se;
    out.h[j] = h_scale * sh;
  }
  return out;
}

/// Surrogate far field on the T0-point measurement grid.
inline FarField surrogate_farfield(const BoundaryShape& shape, const ScatterConfig& config, double phi) {
  bool known = false;
  for (double p : config.phis) known = known || std::abs(p - phi) < 1e-12;
  if (!known) fail(ErrorCode::InvalidConfig, "incidence angle " + std::to_string(phi) + " not in configuration");
  const auto t = measurement_angles(config.T0);
  return surrogate_farfield_at(shape, config, phi, t);
}

// ---------------------------------------------------------------------------
// Channel layouts
// ---------------------------------------------------------------------------

enum class FieldKind { E, H };
enum class FieldPart { Re, Im };

struct ChannelSpec {
  FieldKind field;
  FieldPart part;
  double phi;

  friend bool operator==(const ChannelSpec&, const ChannelSpec&) = default;
};

/// Ordered channel list; one of the three standard assemblies.
struct ChannelLayout {
  std::vector<ChannelSpec> channels;

  int size() const noexcept { return static_cast<int>(channels.size()); }

  static ChannelLayout for_channels(int C0) {
    const double pi = std::numbers::pi;
    auto block = [](double phi, bool magnetic) {
      std::vector<ChannelSpec> b{{FieldKind::E, FieldPart::Re, phi}, {FieldKind::E, FieldPart::Im, phi}};
      if (magnetic) {
        b.push_back({FieldKind::H, FieldPart::Re, phi});
        b.push_back({FieldKind::H, FieldPart::Im, phi});
      }
      return b;
    };
    switch (C0) {
      case 2: return {block(0.0, false)};
      case 4: return {block(0.0, true)};
      case 8: {
        auto c = block(0.0, true);
        auto b = block(pi, true);
        c.insert(c.end(), b.begin(), b.end());
        return {c};
      }
      default: fail(ErrorCode::InvalidConfig, "no channel layout for C0=" + std::to_string(C0));
    }
  }

  friend bool operator==(const ChannelLayout&, const ChannelLayout&) = default;
};

struct IncidentField {
  double phi;
  FarField field;
};

/// Channel-major concatenation: features[c * T0 + i] is channel c at angle index i.
inline std::vector<double> assemble_channels(std::span<const IncidentField> fields, const ChannelLayout& layout,
                                             int T0) {
  std::vector<double> out(static_cast<std::size_t>(layout.size()) * static_cast<std::size_t>(T0));
  for (int c = 0; c < layout.size(); ++c) {
    const auto& spec = layout.channels[static_cast<std::size_t>(c)];
    const IncidentField* src = nullptr;
    for (const auto& f : fields)
      if (std::abs(f.phi - spec.phi) < 1e-12) src = &f;
    if (!src) fail(ErrorCode::LayoutMismatch, "no far field for incidence " + std::to_string(spec.phi));
    const auto& values = spec.field == FieldKind::E ? src->field.e : src->field.h;
    if (static_cast<int>(values.size()) != T0)
      fail(ErrorCode::LayoutMismatch, "far field has " + std::to_string(values.size()) + " angles, expected " +
                                          std::to_string(T0));
    for (int i = 0; i < T0; ++i) {
      const auto v = values[static_cast<std::size_t>(i)];
      out[static_cast<std::size_t>(c * T0 + i)] = spec.part == FieldPart::Re ? v.real() : v.imag();
    }
  }
  return out;
}

/// Input layout of one model: measurement count and channel count.
struct InputLayout {
  int T0 = 32;
  int C0 = 2;

  friend auto operator<=>(const InputLayout&, const InputLayout&) = default;
};

inline constexpr InputLayout kSupersetLayout{128, 8};

/// Extracts a sub-layout from superset (C0=8, T0=128) features. The standard layouts
/// are prefixes of the superset channel order; angles are subsampled by T/T0.
inline std::vector<double> project_layout(std::span<const double> superset, InputLayout to) {
  const int T = kSupersetLayout.T0;
  if (superset.size() != static_cast<std::size_t>(T * kSupersetLayout.C0))
    fail(ErrorCode::LayoutMismatch, "superset features must have length 1024");
  if (T % to.T0 != 0 || to.C0 > kSupersetLayout.C0)
    fail(ErrorCode::LayoutMismatch, "cannot derive layout T0=" + std::to_string(to.T0) + " C0=" + std::to_string(to.C0));
  const int stride = T / to.T0;
  std::vector<double> out(static_cast<std::size_t>(to.T0 * to.C0));
  for (int c = 0; c < to.C0; ++c)
    for (int i = 0; i < to.T0; ++i)
      out[static_cast<std::size_t>(c * to.T0 + i)] = superset[static_cast<std::size_t>(c * T + i * stride)];
  return out;
}

}  // namespace circscatter
