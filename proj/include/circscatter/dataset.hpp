#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "circscatter/error.hpp"
#include "circscatter/parallel.hpp"
#include "circscatter/farfield.hpp"
#include "circscatter/geometry.hpp"
#include "circscatter/random.hpp"

namespace circscatter {

enum class Task { Classification, Regression };

constexpr std::string_view task_name(Task t) noexcept { return t == Task::Classification ? "class" : "reg"; }

/// Regression target length: coefficients, center, and the impedance unless it is fixed.
constexpr int target_count(ShapeClass c, bool fixed_impedance) noexcept {
  return coeff_count(c) + 2 + (fixed_impedance ? 0 : 1);
}

struct DatasetHeader {
  int T0 = 32;
  int C0 = 2;
  int P = 0;  ///< regression target length; 0 for classification
  Task task = Task::Classification;
  std::vector<ShapeClass> classes;
  std::optional<double> fixed_impedance;

  std::size_t feature_size() const noexcept { return static_cast<std::size_t>(T0) * static_cast<std::size_t>(C0); }
  InputLayout layout() const noexcept { return {T0, C0}; }

  friend bool operator==(const DatasetHeader&, const DatasetHeader&) = default;
};

/// Row-major sample store. `features` is N x (C0*T0) channel-major per row;
/// `targets` is N x P for regression; `labels` holds class tags for classification.
struct Dataset {
  DatasetHeader header;
  std::vector<double> features;
  std::vector<double> targets;
  std::vector<int> labels;
  std::vector<std::string> shape_ids;

  std::size_t size() const noexcept { return shape_ids.size(); }

  std::span<const double> feature_row(std::size_t i) const noexcept {
    const auto d = header.feature_size();
    return {features.data() + i * d, d};
  }
  std::span<double> feature_row(std::size_t i) noexcept {
    const auto d = header.feature_size();
    return {features.data() + i * d, d};
  }
  std::span<const double> target_row(std::size_t i) const noexcept {
    const auto p = static_cast<std::size_t>(header.P);
    return {targets.data() + i * p, p};
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Flat regression target vector for a shape.
inline std::vector<double> shape_targets(const BoundaryShape& s, bool fixed_impedance) {
  std::vector<double> t = s.coeffs;
  t.push_back(s.center.x);
  t.push_back(s.center.y);
  if (!fixed_impedance) t.push_back(s.impedance);
  return t;
}

/// Inverse of shape_targets; the impedance comes from `fixed_impedance` when set.
inline BoundaryShape shape_from_targets(ShapeClass cls, std::span<const double> t, std::optional<double> fixed_impedance) {
  const auto n = static_cast<std::size_t>(coeff_count(cls));
  if (t.size() != static_cast<std::size_t>(target_count(cls, fixed_impedance.has_value())))
    fail(ErrorCode::ShapeMismatch, "target vector of length " + std::to_string(t.size()) + " does not describe a " +
                                       std::string(class_name(cls)));
  BoundaryShape s{cls, std::vector<double>(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(n)), {t[n], t[n + 1]}, 0.0};
  s.impedance = fixed_impedance ? *fixed_impedance : t[n + 2];
  return s;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

struct GenerationSpec {
  std::vector<ShapeClass> classes{ShapeClass::Peanut, ShapeClass::Kite, ShapeClass::Star};
  std::size_t count = 0;
  ScatterConfig config;
  std::optional<double> fixed_impedance;
  Task task = Task::Classification;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

/// One generated obstacle with its far-field features in the requested layout.
struct GeneratedSample {
  BoundaryShape shape;
  std::vector<double> features;
};

inline std::string make_shape_id(ShapeClass c, std::uint64_t seed, std::size_t index) {
  return std::string(class_name(c)) + "-" + std::to_string(seed) + "-" + std::to_string(index);
}

/// Draws sample `index` of a generation run; a pure function of (spec, index).
inline GeneratedSample generate_sample(const GenerationSpec& spec, std::size_t index) {
  const ShapeClass cls = spec.classes[index % spec.classes.size()];
  Rng rng = make_rng(spec.seed, index);
  GeneratedSample out;
  out.shape = sample_shape(cls, rng, spec.config, spec.fixed_impedance);
  std::vector<IncidentField> fields;
  for (double phi : spec.config.phis) fields.push_back({phi, surrogate_farfield(out.shape, spec.config, phi)});
  out.features = assemble_channels(fields, ChannelLayout::for_channels(spec.config.C0), spec.config.T0);
  return out;
}


/// Shapes plus features; the shapes are kept so reconstructions can be compared to truth.
struct GeneratedSet {
  Dataset dataset;
  std::vector<BoundaryShape> shapes;
};

inline GeneratedSet generate_with_shapes(const GenerationSpec& spec) {
  if (spec.count < 1) fail(ErrorCode::TooSmall, "dataset size must be at least 1");
  if (spec.classes.empty()) fail(ErrorCode::InvalidConfig, "no shape classes requested");
  spec.config.validate();
  if (spec.task == Task::Regression && spec.classes.size() != 1)
    fail(ErrorCode::InvalidConfig, "regression datasets hold a single shape class");

  std::vector<GeneratedSample> samples(spec.count);
  detail::parallel_for(spec.count, spec.threads, [&](std::size_t i) { samples[i] = generate_sample(spec, i); });

  GeneratedSet out;
  Dataset& ds = out.dataset;
  ds.header.T0 = spec.config.T0;
  ds.header.C0 = spec.config.C0;
  ds.header.task = spec.task;
  ds.header.classes = spec.classes;
  ds.header.fixed_impedance = spec.fixed_impedance;
  ds.header.P = spec.task == Task::Regression ? target_count(spec.classes.front(), spec.fixed_impedance.has_value()) : 0;
  ds.features.reserve(spec.count * ds.header.feature_size());
  for (std::size_t i = 0; i < spec.count; ++i) {
    const auto& s = samples[i];
    ds.features.insert(ds.features.end(), s.features.begin(), s.features.end());
    if (spec.task == Task::Regression) {
      const auto t = shape_targets(s.shape, spec.fixed_impedance.has_value());
      ds.targets.insert(ds.targets.end(), t.begin(), t.end());
    } else {
      ds.labels.push_back(static_cast<int>(s.shape.cls));
    }
    ds.shape_ids.push_back(make_shape_id(s.shape.cls, spec.seed, i));
    out.shapes.push_back(s.shape);
  }
  return out;
}

inline Dataset generate_dataset(const GenerationSpec& spec) { return generate_with_shapes(spec).dataset; }

/// Subset of rows in the given order.
inline Dataset select_rows(const Dataset& ds, std::span<const std::size_t> rows) {
  Dataset out;
  out.header = ds.header;
  for (std::size_t r : rows) {
    const auto f = ds.feature_row(r);
    out.features.insert(out.features.end(), f.begin(), f.end());
    if (ds.header.task == Task::Regression) {
      const auto t = ds.target_row(r);
      out.targets.insert(out.targets.end(), t.begin(), t.end());
    } else {
      out.labels.push_back(ds.labels[r]);
    }
    out.shape_ids.push_back(ds.shape_ids[r]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
};

/// Seeded 80/10/10 permutation split; validation and test take round(N/10) each.
inline DatasetSplit split_dataset(std::size_t n, std::uint64_t seed) {
  if (n < 10) fail(ErrorCode::TooSmall, "need at least 10 samples to split, got " + std::to_string(n));
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = make_rng(seed, 0x5EEDULL);
  // Fisher-Yates with an explicit bounded draw, independent of std::shuffle's implementation.
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(perm[i], perm[j]);
  }
  const auto tenth = static_cast<std::size_t>(std::llround(static_cast<double>(n) / 10.0));
  const std::size_t n_train = n - 2 * tenth;
  DatasetSplit s;
  s.seed = seed;
  s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.valid.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                 perm.begin() + static_cast<std::ptrdiff_t>(n_train + tenth));
  s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + tenth), perm.end());
  return s;
}

// ---------------------------------------------------------------------------
// Standardization and noise
// ---------------------------------------------------------------------------

inline constexpr double kStdFloor = 1e-12;

/// Per-column affine scaling fitted on training rows.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> std;

  std::size_t dim() const noexcept { return mean.size(); }

  /// Fits on the listed rows of a row-major matrix with `dim` columns.
  static Standardizer fit(std::span<const double> matrix, std::size_t dim, std::span<const std::size_t> rows) {
    if (rows.size() < 2) fail(ErrorCode::TooSmall, "standardizer needs at least 2 training rows");
    Standardizer s;
    s.mean.assign(dim, 0.0);
    s.std.assign(dim, 0.0);
    const double n = static_cast<double>(rows.size());
    for (std::size_t r : rows)
      for (std::size_t j = 0; j < dim; ++j) s.mean[j] += matrix[r * dim + j];
    for (auto& m : s.mean) m /= n;
    for (std::size_t r : rows)
      for (std::size_t j = 0; j < dim; ++j) {
        const double d = matrix[r * dim + j] - s.mean[j];
        s.std[j] += d * d;
      }
    for (auto& v : s.std) v = std::max(std::sqrt(v / n), kStdFloor);
    return s;
  }

  static Standardizer fit_all(std::span<const double> matrix, std::size_t dim) {
    std::vector<std::size_t> rows(matrix.size() / dim);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return fit(matrix, dim, rows);
  }

  void apply(std::span<double> row_major) const {
    for (std::size_t i = 0; i < row_major.size(); ++i) {
      const std::size_t j = i % dim();
      row_major[i] = (row_major[i] - mean[j]) / std[j];
    }
  }

  void invert(std::span<double> row_major) const {
    for (std::size_t i = 0; i < row_major.size(); ++i) {
      const std::size_t j = i % dim();
      row_major[i] = row_major[i] * std[j] + mean[j];
    }
  }

  friend bool operator==(const Standardizer&, const Standardizer&) = default;
};

inline void to_json(nlohmann::json& j, const Standardizer& s) { j = {{"mean", s.mean}, {"std", s.std}}; }
inline void from_json(const nlohmann::json& j, Standardizer& s) {
  s.mean = j.at("mean").get<std::vector<double>>();
  s.std = j.at("std").get<std::vector<double>>();
  if (s.mean.size() != s.std.size()) fail(ErrorCode::Parse, "standardizer mean/std length mismatch");
}

/// Adds eta * N(0, 1) to every entry of already standardized features.
inline void add_noise(std::span<double> scaled, double eta, Rng& rng) {
  if (!(eta >= 0.0)) fail(ErrorCode::InvalidLevel, "noise level must be non-negative");
  if (eta == 0.0) return;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : scaled) v += eta * normal(rng);
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

inline double parse_double(std::string_view tok, std::size_t line) {
  double v = 0.0;
  const auto* first = tok.data();
  const auto* last = tok.data() + tok.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    fail(ErrorCode::Parse, "line " + std::to_string(line) + ": bad number '" + std::string(tok) + "'");
  return v;
}

inline long parse_int(std::string_view tok, std::size_t line) {
  long v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    fail(ErrorCode::Parse, "line " + std::to_string(line) + ": bad integer '" + std::string(tok) + "'");
  return v;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string header_line(const DatasetHeader& h) {
  std::string line = "circscatter-v1 T0=" + std::to_string(h.T0) + " C0=" + std::to_string(h.C0) +
                     " P=" + std::to_string(h.P) + " task=" + std::string(task_name(h.task)) + " classes=";
  for (std::size_t i = 0; i < h.classes.size(); ++i) {
    if (i) line += ',';
    line += std::to_string(static_cast<int>(h.classes[i]));
  }
  if (h.fixed_impedance) line += " fixed_lambda=" + format_double(*h.fixed_impedance);
  return line;
}

inline DatasetHeader parse_header(std::string_view line) {
  const auto toks = split(line, ' ');
  if (toks.empty() || toks[0] != "circscatter-v1") fail(ErrorCode::Parse, "line 1: missing circscatter-v1 magic");
  DatasetHeader h;
  bool have_t = false, have_c = false, have_p = false, have_task = false, have_classes = false;
  for (std::size_t i = 1; i < toks.size(); ++i) {
    const auto eq = toks[i].find('=');
    if (eq == std::string_view::npos) fail(ErrorCode::Parse, "line 1: malformed header field '" + std::string(toks[i]) + "'");
    const auto key = toks[i].substr(0, eq), val = toks[i].substr(eq + 1);
    if (key == "T0") h.T0 = static_cast<int>(parse_int(val, 1)), have_t = true;
    else if (key == "C0") h.C0 = static_cast<int>(parse_int(val, 1)), have_c = true;
    else if (key == "P") h.P = static_cast<int>(parse_int(val, 1)), have_p = true;
    else if (key == "task") {
      if (val == "class") h.task = Task::Classification;
      else if (val == "reg") h.task = Task::Regression;
      else fail(ErrorCode::Parse, "line 1: unknown task '" + std::string(val) + "'");
      have_task = true;
    } else if (key == "classes") {
      for (auto c : split(val, ',')) h.classes.push_back(class_from_label(static_cast<int>(parse_int(c, 1))));
      have_classes = true;
    } else if (key == "fixed_lambda") {
      h.fixed_impedance = parse_double(val, 1);
    } else {
      fail(ErrorCode::Parse, "line 1: unknown header field '" + std::string(key) + "'");
    }
  }
  if (!(have_t && have_c && have_p && have_task && have_classes)) fail(ErrorCode::Parse, "line 1: incomplete header");
  if (h.T0 < 1 || h.C0 < 1 || h.P < 0 || h.classes.empty()) fail(ErrorCode::Parse, "line 1: invalid header values");
  if (h.task == Task::Regression && h.P < 1) fail(ErrorCode::Parse, "line 1: regression header needs P >= 1");
  return h;
}

}  // namespace detail

/// Text format: header line, then one CSV row per sample holding the features,
/// the label (classification) or P targets (regression), and the shape id.
inline void write_dataset_text(std::ostream& os, const Dataset& ds) {
  os << detail::header_line(ds.header) << '\n';
  const auto d = ds.header.feature_size();
  std::string row;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    row.clear();
    const auto f = ds.feature_row(i);
    for (std::size_t j = 0; j < d; ++j) {
      row += detail::format_double(f[j]);
      row += ',';
    }
    if (ds.header.task == Task::Classification) {
      row += std::to_string(ds.labels[i]);
      row += ',';
    } else {
      for (double t : ds.target_row(i)) {
        row += detail::format_double(t);
        row += ',';
      }
    }
    row += ds.shape_ids[i];
    os << row << '\n';
  }
}

inline Dataset read_dataset_text(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) fail(ErrorCode::Parse, "line 1: empty dataset file");
  Dataset ds;
  ds.header = detail::parse_header(line);
  const auto d = ds.header.feature_size();
  const std::size_t n_targets = ds.header.task == Task::Classification ? 1 : static_cast<std::size_t>(ds.header.P);
  const std::size_t expected = d + n_targets + 1;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto toks = detail::split(line, ',');
    if (toks.size() != expected)
      fail(ErrorCode::Parse, "line " + std::to_string(lineno) + ": expected " + std::to_string(expected) +
                                 " fields, found " + std::to_string(toks.size()));
    for (std::size_t j = 0; j < d; ++j) ds.features.push_back(detail::parse_double(toks[j], lineno));
    if (ds.header.task == Task::Classification) {
      const int label = static_cast<int>(detail::parse_int(toks[d], lineno));
      if (label < 1 || label > 3)
        fail(ErrorCode::Parse, "line " + std::to_string(lineno) + ": unknown class tag " + std::to_string(label));
      ds.labels.push_back(label);
    } else {
      for (std::size_t j = 0; j < n_targets; ++j) ds.targets.push_back(detail::parse_double(toks[d + j], lineno));
    }
    ds.shape_ids.emplace_back(toks.back());
  }
  return ds;
}

namespace detail {

inline constexpr char kBinaryMagic[4] = {'C', 'S', 'C', '1'};

template <class T>
void put(std::ostream& os, T v) {
  static_assert(std::endian::native == std::endian::little, "binary container assumes a little-endian host");
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) fail(ErrorCode::Parse, "truncated binary dataset");
  return v;
}

}  // namespace detail

/// Binary container: magic "CSC1", u32 header fields, u64 count, then per sample the
/// features (f64), label (i32) or targets (f64), and a length-prefixed shape id.
inline void write_dataset_binary(std::ostream& os, const Dataset& ds) {
  using detail::put;
  os.write(detail::kBinaryMagic, 4);
  const auto& h = ds.header;
  put<std::uint32_t>(os, static_cast<std::uint32_t>(h.T0));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(h.C0));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(h.P));
  put<std::uint32_t>(os, h.task == Task::Classification ? 0u : 1u);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(h.classes.size()));
  for (auto c : h.classes) put<std::uint32_t>(os, static_cast<std::uint32_t>(c));
  put<std::uint32_t>(os, h.fixed_impedance ? 1u : 0u);
  put<double>(os, h.fixed_impedance.value_or(0.0));
  put<std::uint64_t>(os, ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.feature_row(i)) put<double>(os, v);
    if (h.task == Task::Classification) put<std::int32_t>(os, ds.labels[i]);
    else
      for (double v : ds.target_row(i)) put<double>(os, v);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.shape_ids[i].size()));
    os.write(ds.shape_ids[i].data(), static_cast<std::streamsize>(ds.shape_ids[i].size()));
  }
}

inline Dataset read_dataset_binary(std::istream& is) {
  using detail::get;
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, detail::kBinaryMagic, 4) != 0)
    fail(ErrorCode::Parse, "missing CSC1 magic");
  Dataset ds;
  auto& h = ds.header;
  h.T0 = static_cast<int>(get<std::uint32_t>(is));
  h.C0 = static_cast<int>(get<std::uint32_t>(is));
  h.P = static_cast<int>(get<std::uint32_t>(is));
  h.task = get<std::uint32_t>(is) == 0 ? Task::Classification : Task::Regression;
  const auto nc = get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < nc; ++i) h.classes.push_back(class_from_label(static_cast<int>(get<std::uint32_t>(is))));
  const bool fixed = get<std::uint32_t>(is) != 0;
  const double lambda = get<double>(is);
  if (fixed) h.fixed_impedance = lambda;
  const auto n = get<std::uint64_t>(is);
  const auto d = h.feature_size();
  for (std::uint64_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) ds.features.push_back(get<double>(is));
    if (h.task == Task::Classification) {
      const int label = get<std::int32_t>(is);
      if (label < 1 || label > 3) fail(ErrorCode::Parse, "sample " + std::to_string(i) + ": unknown class tag");
      ds.labels.push_back(label);
    } else {
      for (int j = 0; j < h.P; ++j) ds.targets.push_back(get<double>(is));
    }
    const auto len = get<std::uint32_t>(is);
    std::string id(len, '\0');
    if (!is.read(id.data(), len)) fail(ErrorCode::Parse, "truncated binary dataset");
    ds.shape_ids.push_back(std::move(id));
  }
  return ds;
}

/// Reads either container; the binary one is recognised by its magic bytes.
inline Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::Io, "cannot open dataset " + path.string());
  char magic[4] = {};
  is.read(magic, 4);
  is.clear();
  is.seekg(0);
  if (std::memcmp(magic, detail::kBinaryMagic, 4) == 0) return read_dataset_binary(is);
  return read_dataset_text(is);
}

/// Writes the binary container for a ".bin" extension and the text format otherwise.
inline void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::Io, "cannot write dataset " + path.string());
  if (path.extension() == ".bin") write_dataset_binary(os, ds);
  else write_dataset_text(os, ds);
  if (!os) fail(ErrorCode::Io, "write failed for " + path.string());
}

}  // namespace circscatter
