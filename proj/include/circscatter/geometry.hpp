#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "circscatter/error.hpp"
#include "circscatter/random.hpp"

namespace circscatter {

/// Number of Fourier modes in the star-shaped radial function.
inline constexpr int kStarModes = 5;

/// Validation limits for an admissible inner boundary.
inline constexpr double kMaxBoundaryNorm = 0.75;
inline constexpr double kMinRadius = 0.02;
inline constexpr double kCenterLimit = 0.2;
inline constexpr double kMinImpedance = 0.1;
inline constexpr double kMaxImpedance = 10.0;
inline constexpr int kMaxSamplingRejections = 1000;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend constexpr Vec2 operator+(Vec2 a, Vec2 b) noexcept { return {a.x + b.x, a.y + b.y}; }
  friend constexpr Vec2 operator-(Vec2 a, Vec2 b) noexcept { return {a.x - b.x, a.y - b.y}; }
  friend constexpr Vec2 operator*(double s, Vec2 a) noexcept { return {s * a.x, s * a.y}; }
  friend constexpr bool operator==(Vec2, Vec2) = default;
};

inline double dot(Vec2 a, Vec2 b) noexcept { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) noexcept { return std::hypot(a.x, a.y); }

// ---------------------------------------------------------------------------
// Scattering configuration
// ---------------------------------------------------------------------------

struct ScatterConfig {
  double omega = 5.0;
  double theta = std::numbers::pi / 6.0;
  std::vector<double> phis{0.0};
  double eps0 = 1.0;
  double mu0 = 1.0;
  double eps1 = 2.0;
  double mu1 = 1.0;
  double outer_radius = 0.8;
  int boundary_points = 128;
  int T0 = 32;
  int C0 = 2;

  /// Exterior wavenumber, kappa0^2 = omega^2 mu0 eps0 (1 - cos^2 theta).
  double kappa0() const {
    const double c = std::cos(theta);
    return std::sqrt(omega * omega * mu0 * eps0 * (1.0 - c * c));
  }

  void validate() const {
    if (!(theta > 0.0 && theta < std::numbers::pi)) fail(ErrorCode::InvalidConfig, "theta must lie in (0, pi)");
    if (!(omega > 0.0 && eps0 > 0.0 && mu0 > 0.0)) fail(ErrorCode::InvalidConfig, "omega, eps0, mu0 must be positive");
    if (T0 != 32 && T0 != 128) fail(ErrorCode::InvalidConfig, "T0 must be 32 or 128");
    if (C0 != 2 && C0 != 4 && C0 != 8) fail(ErrorCode::InvalidConfig, "C0 must be 2, 4 or 8");
    if (boundary_points < 4) fail(ErrorCode::InvalidGrid, "boundary grid needs at least 4 points");
    if (phis.empty()) fail(ErrorCode::InvalidConfig, "at least one incidence angle is required");
    for (double phi : phis) {
      if (std::abs(phi) > 1e-12 && std::abs(phi - std::numbers::pi) > 1e-12)
        fail(ErrorCode::InvalidConfig, "incidence angles must be 0 or pi");
    }
    if (C0 == 8 && phis.size() != 2) fail(ErrorCode::InvalidConfig, "C0 = 8 requires two incidence angles");
    const double k = kappa0();
    const double c = std::cos(theta);
    const double expected = omega * omega * mu0 * eps0 * (1.0 - c * c);
    if (std::abs(k * k - expected) > 1e-12 * std::max(1.0, expected))
      fail(ErrorCode::InvalidConfig, "inconsistent exterior wavenumber");
  }
};

/// Equidistant parameter grid tau_k = 2 pi k / T.
inline std::vector<double> boundary_grid(int T) {
  if (T < 4) fail(ErrorCode::InvalidGrid, "boundary grid needs at least 4 points, got " + std::to_string(T));
  std::vector<double> tau(static_cast<std::size_t>(T));
  for (int k = 0; k < T; ++k) tau[static_cast<std::size_t>(k)] = 2.0 * std::numbers::pi * k / T;
  return tau;
}

// ---------------------------------------------------------------------------
// Boundary shapes
// ---------------------------------------------------------------------------

enum class ShapeClass : int { Peanut = 1, Kite = 2, Star = 3 };

inline constexpr std::array<ShapeClass, 3> kAllShapeClasses{ShapeClass::Peanut, ShapeClass::Kite, ShapeClass::Star};

constexpr int coeff_count(ShapeClass c) noexcept {
  switch (c) {
    case ShapeClass::Peanut: return 2;
    case ShapeClass::Kite: return 3;
    case ShapeClass::Star: return 1 + 2 * kStarModes;
  }
  return 0;
}

constexpr bool is_radial(ShapeClass c) noexcept { return c != ShapeClass::Kite; }

constexpr std::string_view class_name(ShapeClass c) noexcept {
  switch (c) {
    case ShapeClass::Peanut: return "peanut";
    case ShapeClass::Kite: return "kite";
    case ShapeClass::Star: return "star";
  }
  return "?";
}

inline ShapeClass class_from_label(int label) {
  if (label < 1 || label > 3) fail(ErrorCode::Parse, "unknown shape class tag " + std::to_string(label));
  return static_cast<ShapeClass>(label);
}

inline ShapeClass class_from_name(std::string_view name) {
  for (ShapeClass c : kAllShapeClasses)
    if (class_name(c) == name) return c;
  fail(ErrorCode::Parse, "unknown shape class '" + std::string(name) + "'");
}

/// One inner obstacle. Coefficient order: peanut (alpha, beta); kite (alpha, beta, gamma);
/// star (alpha0, alpha1..alpha5, beta1..beta5).
struct BoundaryShape {
  ShapeClass cls = ShapeClass::Peanut;
  std::vector<double> coeffs;
  Vec2 center;
  double impedance = 1.0;

  friend bool operator==(const BoundaryShape&, const BoundaryShape&) = default;
};

inline BoundaryShape make_circle(double radius, Vec2 center = {}, double impedance = 1.0) {
  BoundaryShape s{ShapeClass::Star, std::vector<double>(coeff_count(ShapeClass::Star), 0.0), center, impedance};
  s.coeffs[0] = radius;
  return s;
}

struct CurvePoint {
  Vec2 point;
  Vec2 derivative;
};

namespace detail {

inline void require_coeffs(const BoundaryShape& s) {
  if (static_cast<int>(s.coeffs.size()) != coeff_count(s.cls))
    fail(ErrorCode::ShapeMismatch, std::string(class_name(s.cls)) + " expects " + std::to_string(coeff_count(s.cls)) +
                                       " coefficients, got " + std::to_string(s.coeffs.size()));
}

struct Radial {
  double rho;
  double drho;
};

inline Radial peanut_radial(std::span<const double> c, double tau) noexcept {
  const double ct = std::cos(tau), st = std::sin(tau);
  const double rho2 = c[0] * ct * ct + c[1] * st * st;
  const double rho = std::sqrt(rho2);  // NaN when rho2 < 0
  return {rho, (c[1] - c[0]) * st * ct / rho};
}

inline Radial star_radial(std::span<const double> c, double tau) noexcept {
  double sum = 0.0, dsum = 0.0;
  for (int q = 1; q <= kStarModes; ++q) {
    const double a = c[static_cast<std::size_t>(q)];
    const double b = c[static_cast<std::size_t>(kStarModes + q)];
    const double cq = std::cos(q * tau), sq = std::sin(q * tau);
    sum += a * cq + b * sq;
    dsum += q * (b * cq - a * sq);
  }
  const double scale = c[0] / (2.0 * kStarModes);
  return {c[0] + scale * sum, scale * dsum};
}

/// Radial function for the radial classes, evaluated without any sign checks.
inline Radial radial(const BoundaryShape& s, double tau) noexcept {
  return s.cls == ShapeClass::Peanut ? peanut_radial(s.coeffs, tau) : star_radial(s.coeffs, tau);
}

inline CurvePoint eval_unchecked(const BoundaryShape& s, double tau) noexcept {
  const double ct = std::cos(tau), st = std::sin(tau);
  if (s.cls == ShapeClass::Kite) {
    const double a = s.coeffs[0], b = s.coeffs[1], g = s.coeffs[2];
    return {{a * ct + b * std::cos(2.0 * tau) + s.center.x, g * st + s.center.y},
            {-a * st - 2.0 * b * std::sin(2.0 * tau), g * ct}};
  }
  const auto [rho, drho] = radial(s, tau);
  return {{rho * ct + s.center.x, rho * st + s.center.y}, {drho * ct - rho * st, drho * st + rho * ct}};
}

}  // namespace detail

/// Point x(tau) and analytic derivative x'(tau) of the boundary curve.
/// Kite uses the cos(2 tau) second term and the star uses sin(q tau) sine terms.
inline CurvePoint eval_curve(const BoundaryShape& shape, double tau) {
  detail::require_coeffs(shape);
  if (is_radial(shape.cls)) {
    const double rho = detail::radial(shape, tau).rho;
    if (!(rho > 0.0))
      fail(ErrorCode::DegenerateShape,
           std::string(class_name(shape.cls)) + " radial function is non-positive at tau=" + std::to_string(tau));
  }
  return detail::eval_unchecked(shape, tau);
}

/// Curve samples on the T-point grid; throws on degenerate shapes.
inline std::vector<CurvePoint> sample_curve(const BoundaryShape& shape, int T) {
  const auto tau = boundary_grid(T);
  std::vector<CurvePoint> out;
  out.reserve(tau.size());
  for (double t : tau) out.push_back(eval_curve(shape, t));
  return out;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

struct ShapeDiagnostic {
  bool valid = true;
  std::string reason;
  double min_rho = 0.0;
  double max_norm = 0.0;
  bool simple = true;
};

namespace detail {

inline double cross(Vec2 o, Vec2 a, Vec2 b) noexcept { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

inline bool on_segment(Vec2 p, Vec2 a, Vec2 b) noexcept {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

inline bool segments_intersect(Vec2 a, Vec2 b, Vec2 c, Vec2 d) noexcept {
  const double d1 = cross(c, d, a), d2 = cross(c, d, b);
  const double d3 = cross(a, b, c), d4 = cross(a, b, d);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) return true;
  if (d1 == 0 && on_segment(a, c, d)) return true;
  if (d2 == 0 && on_segment(b, c, d)) return true;
  if (d3 == 0 && on_segment(c, a, b)) return true;
  if (d4 == 0 && on_segment(d, a, b)) return true;
  return false;
}

}  // namespace detail

/// True iff the closed polygon through the points has no two non-adjacent edges that meet.
inline bool is_simple_polygon(std::span<const Vec2> pts) {
  const std::size_t n = pts.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = pts[i], b = pts[(i + 1) % n];
    for (std::size_t j = i + 2; j < n; ++j) {
      if (i == 0 && j == n - 1) continue;  // adjacent through the closing edge
      if (detail::segments_intersect(a, b, pts[j], pts[(j + 1) % n])) return false;
    }
  }
  return true;
}

/// Checks coefficient count, center and impedance ranges, the radial floor, the
/// containment radius and simplicity of the grid polygon.
inline ShapeDiagnostic validate_shape(const BoundaryShape& shape, const ScatterConfig& config) {
  ShapeDiagnostic diag;
  auto reject = [&](std::string why) {
    if (diag.valid) diag.reason = std::move(why);
    diag.valid = false;
  };
  if (static_cast<int>(shape.coeffs.size()) != coeff_count(shape.cls)) {
    reject("wrong coefficient count");
    return diag;
  }
  for (double v : shape.coeffs)
    if (!std::isfinite(v)) {
      reject("non-finite coefficient");
      return diag;
    }
  if (std::abs(shape.center.x) > kCenterLimit || std::abs(shape.center.y) > kCenterLimit)
    reject("center outside [-0.2, 0.2]^2");
  if (!(shape.impedance >= kMinImpedance && shape.impedance <= kMaxImpedance)) reject("impedance outside [0.1, 10]");

  const auto tau = boundary_grid(config.boundary_points);
  std::vector<Vec2> pts;
  pts.reserve(tau.size());
  diag.min_rho = std::numeric_limits<double>::infinity();
  for (double t : tau) {
    if (is_radial(shape.cls)) {
      const double rho = detail::radial(shape, t).rho;
      diag.min_rho = std::isnan(rho) ? -std::numeric_limits<double>::infinity() : std::min(diag.min_rho, rho);
    }
    pts.push_back(detail::eval_unchecked(shape, t).point);
  }
  if (is_radial(shape.cls) && !(diag.min_rho > kMinRadius)) {
    reject("radial function below floor");
    return diag;
  }
  for (Vec2 p : pts) diag.max_norm = std::max(diag.max_norm, norm(p));
  if (!(diag.max_norm < kMaxBoundaryNorm)) reject("boundary leaves the admissible disc");
  diag.simple = is_simple_polygon(pts);
  if (!diag.simple) reject("self-intersecting boundary");
  return diag;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

struct CoeffRange {
  double lo;
  double hi;
};

/// Uniform sampling box per coefficient.
inline std::vector<CoeffRange> sampling_ranges(ShapeClass c) {
  switch (c) {
    case ShapeClass::Peanut: return {{0.02, 0.20}, {0.02, 0.20}};
    case ShapeClass::Kite: return {{0.15, 0.35}, {0.05, 0.15}, {0.15, 0.35}};
    case ShapeClass::Star: {
      std::vector<CoeffRange> r{{0.10, 0.40}};
      r.resize(coeff_count(c), CoeffRange{-1.0, 1.0});
      return r;
    }
  }
  return {};
}

/// Rejection-samples a valid shape. With `fixed_impedance` set, no impedance draw is made.
inline BoundaryShape sample_shape(ShapeClass cls, Rng& rng, const ScatterConfig& config,
                                  std::optional<double> fixed_impedance = std::nullopt) {
  const auto ranges = sampling_ranges(cls);
  for (int attempt = 0; attempt < kMaxSamplingRejections; ++attempt) {
    BoundaryShape s{cls, {}, {}, 0.0};
    s.coeffs.reserve(ranges.size());
    for (const auto& r : ranges) s.coeffs.push_back(uniform(rng, r.lo, r.hi));
    s.center.x = uniform(rng, -kCenterLimit, kCenterLimit);
    s.center.y = uniform(rng, -kCenterLimit, kCenterLimit);
    s.impedance = fixed_impedance ? *fixed_impedance : uniform(rng, kMinImpedance, kMaxImpedance);
    if (validate_shape(s, config).valid) return s;
  }
  fail(ErrorCode::SamplingStuck, std::string("no valid ") + std::string(class_name(cls)) + " after " +
                                     std::to_string(kMaxSamplingRejections) + " draws");
}

/// RMS distance between the two curves at matched grid parameters.
inline double boundary_discrepancy(const BoundaryShape& a, const BoundaryShape& b, int T) {
  const auto tau = boundary_grid(T);
  double acc = 0.0;
  for (double t : tau) {
    const Vec2 d = detail::eval_unchecked(a, t).point - detail::eval_unchecked(b, t).point;
    acc += dot(d, d);
  }
  return std::sqrt(acc / T);
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const BoundaryShape& s) {
  j = nlohmann::json{{"class", static_cast<int>(s.cls)},
                     {"coeffs", s.coeffs},
                     {"center", {s.center.x, s.center.y}},
                     {"impedance", s.impedance}};
}

inline void from_json(const nlohmann::json& j, BoundaryShape& s) {
  s.cls = class_from_label(j.at("class").get<int>());
  s.coeffs = j.at("coeffs").get<std::vector<double>>();
  const auto c = j.at("center").get<std::vector<double>>();
  if (c.size() != 2) fail(ErrorCode::Parse, "shape center must have two components");
  s.center = {c[0], c[1]};
  s.impedance = j.at("impedance").get<double>();
  detail::require_coeffs(s);
}

}  // namespace circscatter
