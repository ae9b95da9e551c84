#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "circscatter/geometry.hpp"

using namespace circscatter;
using Catch::Approx;

namespace {

BoundaryShape peanut(double a, double b, Vec2 c = {}) { return {ShapeClass::Peanut, {a, b}, c, 1.0}; }
BoundaryShape kite(double a, double b, double g, Vec2 c = {}) { return {ShapeClass::Kite, {a, b, g}, c, 1.0}; }

// Central difference of the curve point, used as an independent derivative oracle.
Vec2 fd_derivative(const BoundaryShape& s, double tau, double h = 1e-6) {
  const Vec2 up = eval_curve(s, tau + h).point, down = eval_curve(s, tau - h).point;
  return {(up.x - down.x) / (2 * h), (up.y - down.y) / (2 * h)};
}

}  // namespace

TEST_CASE("boundary grid") {
  const auto t4 = boundary_grid(4);
  REQUIRE(t4.size() == 4);
  CHECK(t4[0] == 0.0);
  CHECK(t4[1] == Approx(std::numbers::pi / 2));
  CHECK(t4[2] == Approx(std::numbers::pi));
  CHECK(t4[3] == Approx(3 * std::numbers::pi / 2));

  const auto t128 = boundary_grid(128);
  REQUIRE(t128.size() == 128);
  for (std::size_t k = 1; k < t128.size(); ++k) CHECK(t128[k] - t128[k - 1] == Approx(2 * std::numbers::pi / 128));

  CHECK_THROWS_AS(boundary_grid(2), Error);
  try {
    boundary_grid(3);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidGrid);
  }
}

TEST_CASE("scatter config") {
  ScatterConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.kappa0() == Approx(2.5).epsilon(1e-14));
  c.T0 = 64;
  CHECK_THROWS_AS(c.validate(), Error);
  c.T0 = 128;
  c.C0 = 8;
  CHECK_THROWS_AS(c.validate(), Error);
  c.phis = {0.0, std::numbers::pi};
  CHECK_NOTHROW(c.validate());
  c.theta = 0.0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("curve evaluation examples") {
  SECTION("unit peanut is the unit circle") {
    for (double t : {0.0, 0.3, 1.7, 4.0}) CHECK(norm(eval_curve(peanut(1, 1), t).point) == Approx(1.0).epsilon(1e-15));
  }
  SECTION("star without harmonics is a circle") {
    const auto s = make_circle(0.3, {}, 1.0);
    for (double t : boundary_grid(16)) CHECK(norm(eval_curve(s, t).point) == Approx(0.3).epsilon(1e-15));
  }
  SECTION("kite at tau = 0") {
    const auto s = kite(0.3, 0.1, 0.25);
    const auto p = eval_curve(s, 0.0);
    CHECK(p.point.x == Approx(0.4).epsilon(1e-15));
    CHECK(p.point.y == Approx(0.0).margin(1e-15));
    CHECK(p.derivative.x == Approx(0.0).margin(1e-15));
    CHECK(p.derivative.y == Approx(0.25).epsilon(1e-15));
    const Vec2 fd = fd_derivative(s, 0.0);
    CHECK(fd.x == Approx(0.0).margin(1e-8));
    CHECK(fd.y == Approx(0.25).epsilon(1e-8));
  }
  SECTION("non-positive radius is an error") {
    try {
      eval_curve(peanut(-0.1, -0.1), 0.0);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DegenerateShape);
    }
  }
}

TEST_CASE("analytic derivatives match finite differences") {
  Rng rng = make_rng(11, 0);
  const ScatterConfig cfg;
  for (ShapeClass c : kAllShapeClasses) {
    const auto s = sample_shape(c, rng, cfg);
    for (int i = 0; i < 20; ++i) {
      const double t = uniform(rng, 0.0, 2 * std::numbers::pi);
      const Vec2 a = eval_curve(s, t).derivative, n = fd_derivative(s, t);
      const double rel = norm(a - n) / std::max(norm(a), 1e-12);
      CHECK(rel < 1e-6);
    }
  }
}

TEST_CASE("radial curves close exactly") {
  Rng rng = make_rng(3, 1);
  for (ShapeClass c : {ShapeClass::Peanut, ShapeClass::Star}) {
    const auto s = sample_shape(c, rng, ScatterConfig{});
    const auto a = eval_curve(s, 0.0).point, b = eval_curve(s, 2 * std::numbers::pi).point;
    CHECK(a.x == Approx(b.x).margin(1e-15));
    CHECK(a.y == Approx(b.y).margin(1e-15));
  }
}

TEST_CASE("shape validation examples") {
  const ScatterConfig cfg;
  CHECK(validate_shape(make_circle(0.3, {}, 1.0), cfg).valid);

  // Center (0.6, 0.6) is outside the sampling box and the curve leaves the 0.75 disc.
  const auto far = validate_shape(make_circle(0.3, {0.6, 0.6}, 1.0), cfg);
  CHECK_FALSE(far.valid);
  CHECK(far.max_norm > kMaxBoundaryNorm);

  // Inside [-1, 1] the harmonics cannot drive the star radius negative, so the degenerate
  // star needs amplitudes beyond the sampling box.
  BoundaryShape star{ShapeClass::Star, std::vector<double>(11, 0.0), {}, 1.0};
  star.coeffs[0] = 0.3;
  for (int q = 1; q <= 5; ++q) star.coeffs[static_cast<std::size_t>(q)] = -4.0;
  const auto d = validate_shape(star, cfg);
  CHECK_FALSE(d.valid);
  CHECK(d.min_rho < 0.0);

  // At the extremes of the box the radius stays above 0.29 alpha0.
  for (int q = 1; q <= 10; ++q) star.coeffs[static_cast<std::size_t>(q)] = -1.0;
  CHECK(validate_shape(star, cfg).min_rho > 0.29 * 0.3);

  BoundaryShape wrong{ShapeClass::Kite, {0.3, 0.1}, {}, 1.0};
  CHECK_FALSE(validate_shape(wrong, cfg).valid);
  CHECK_FALSE(validate_shape(kite(0.3, 0.1, 0.25, {0.0, 0.0}), cfg).reason.size() > 0);
  BoundaryShape bad_lambda = make_circle(0.3, {}, 20.0);
  CHECK_FALSE(validate_shape(bad_lambda, cfg).valid);
}

TEST_CASE("simple polygon test") {
  const std::vector<Vec2> square{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  CHECK(is_simple_polygon(square));
  const std::vector<Vec2> bowtie{{0, 0}, {1, 1}, {1, 0}, {0, 1}};
  CHECK_FALSE(is_simple_polygon(bowtie));
}

TEST_CASE("sampling is deterministic and valid") {
  const ScatterConfig cfg;
  for (ShapeClass c : kAllShapeClasses) {
    Rng a = make_rng(42, 7), b = make_rng(42, 7);
    const auto sa = sample_shape(c, a, cfg), sb = sample_shape(c, b, cfg);
    CHECK(sa.coeffs == sb.coeffs);
    CHECK(sa.center == sb.center);
    CHECK(sa.impedance == sb.impedance);
  }
  Rng rng = make_rng(5, 0);
  const auto fixed = sample_shape(ShapeClass::Star, rng, cfg, 2.0);
  CHECK(fixed.impedance == 2.0);
}

TEST_CASE("star draws stay inside the admissible disc", "[slow]") {
  const ScatterConfig cfg;
  Rng rng = make_rng(2024, 0);
  for (int i = 0; i < 10000; ++i) {
    const auto s = sample_shape(ShapeClass::Star, rng, cfg);
    double mx = 0.0;
    for (const auto& p : sample_curve(s, cfg.boundary_points)) mx = std::max(mx, norm(p.point));
    REQUIRE(mx < kMaxBoundaryNorm);
  }
}

TEST_CASE("kite rejection rate below one half", "[slow]") {
  const ScatterConfig cfg;
  const auto ranges = sampling_ranges(ShapeClass::Kite);
  Rng rng = make_rng(99, 0);
  int rejected = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    BoundaryShape s{ShapeClass::Kite, {}, {}, 0.0};
    for (const auto& r : ranges) s.coeffs.push_back(uniform(rng, r.lo, r.hi));
    s.center = {uniform(rng, -kCenterLimit, kCenterLimit), uniform(rng, -kCenterLimit, kCenterLimit)};
    s.impedance = uniform(rng, kMinImpedance, kMaxImpedance);
    rejected += !validate_shape(s, cfg).valid;
  }
  const double rate = static_cast<double>(rejected) / draws;
  INFO("kite rejection rate " << rate);
  CHECK(rate < 0.5);
}

TEST_CASE("boundary discrepancy") {
  Rng rng = make_rng(8, 0);
  const ScatterConfig cfg;
  const auto p = sample_shape(ShapeClass::Peanut, rng, cfg);
  CHECK(boundary_discrepancy(p, p, 128) == 0.0);
  CHECK(boundary_discrepancy(make_circle(0.2, {}, 1), make_circle(0.3, {}, 1), 128) == Approx(0.1).epsilon(1e-12));
  auto shifted = p;
  shifted.center.x += 0.05;
  CHECK(boundary_discrepancy(p, shifted, 128) == Approx(0.05).epsilon(1e-12));

  // Pseudometric properties over sampled triples.
  for (int i = 0; i < 50; ++i) {
    const auto a = sample_shape(ShapeClass::Star, rng, cfg);
    const auto b = sample_shape(ShapeClass::Kite, rng, cfg);
    const auto c = sample_shape(ShapeClass::Peanut, rng, cfg);
    const double ab = boundary_discrepancy(a, b, 128), ba = boundary_discrepancy(b, a, 128);
    CHECK(ab == ba);
    CHECK(ab <= boundary_discrepancy(a, c, 128) + boundary_discrepancy(c, b, 128) + 1e-15);
  }
}

TEST_CASE("shape JSON round trip is bit exact") {
  Rng rng = make_rng(77, 0);
  for (ShapeClass c : kAllShapeClasses) {
    const auto s = sample_shape(c, rng, ScatterConfig{});
    nlohmann::json j = s;
    const auto back = nlohmann::json::parse(j.dump()).get<BoundaryShape>();
    CHECK(back.cls == s.cls);
    CHECK(back.coeffs == s.coeffs);
    CHECK(back.center == s.center);
    CHECK(back.impedance == s.impedance);
  }
  CHECK_THROWS_AS(nlohmann::json::parse(R"({"class":4,"coeffs":[],"center":[0,0],"impedance":1})").get<BoundaryShape>(),
                  Error);
}
