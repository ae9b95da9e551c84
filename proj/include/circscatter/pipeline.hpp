#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "circscatter/dataset.hpp"
#include "circscatter/error.hpp"
#include "circscatter/farfield.hpp"
#include "circscatter/geometry.hpp"
#include "circscatter/nn/model_io.hpp"
#include "circscatter/nn/network.hpp"
#include "circscatter/training.hpp"

namespace circscatter {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Trained models and the registry
// ---------------------------------------------------------------------------

/// A network with everything needed to apply it to raw far-field features.
struct TrainedModel {
  NetworkSpec spec;
  Parameters<float> params;
  Standardizer feature_scaler;
  std::optional<Standardizer> target_scaler;  ///< regression only
  std::vector<ShapeClass> classes;            ///< output order (classifier) or the single regressed class
  std::optional<double> fixed_impedance;
  std::uint64_t seed = 0;

  InputLayout layout() const noexcept { return spec.input_layout(); }
  Task task() const noexcept { return spec.task; }

  /// Raw channel-major features in, probabilities or original-unit targets out.
  std::vector<double> predict(std::span<const double> raw) const {
    if (raw.size() != static_cast<std::size_t>(spec.T0 * spec.C0))
      fail(ErrorCode::LayoutMismatch, "features do not match model layout T0=" + std::to_string(spec.T0) +
                                          " C0=" + std::to_string(spec.C0));
    std::vector<double> x(raw.begin(), raw.end());
    feature_scaler.apply(x);
    const Network<float> net(spec);
    const auto y = net.predict(params, x, 1);
    std::vector<double> out(y.values().begin(), y.values().end());
    if (target_scaler) target_scaler->invert(out);
    return out;
  }

  void validate() const {
    spec.validate();
    if (params.size() != spec.param_count()) fail(ErrorCode::ShapeMismatch, "model parameters do not match spec");
    if (feature_scaler.dim() != static_cast<std::size_t>(spec.T0 * spec.C0))
      fail(ErrorCode::LayoutMismatch, "feature standardizer does not match model input");
    if (spec.task == Task::Classification) {
      if (classes.size() != static_cast<std::size_t>(spec.output_dim()))
        fail(ErrorCode::ShapeMismatch, "classifier output count does not match its class list");
    } else {
      if (classes.size() != 1) fail(ErrorCode::InvalidConfig, "a regressor covers exactly one shape class");
      if (target_count(classes.front(), fixed_impedance.has_value()) != spec.output_dim())
        fail(ErrorCode::ShapeMismatch, std::string(class_name(classes.front())) + " regressor needs " +
                                           std::to_string(target_count(classes.front(), fixed_impedance.has_value())) +
                                           " outputs");
      if (!target_scaler || target_scaler->dim() != static_cast<std::size_t>(spec.output_dim()))
        fail(ErrorCode::ShapeMismatch, "target standardizer does not match regressor output");
    }
  }
};

inline nlohmann::json scaler_json(const TrainedModel& m) {
  nlohmann::json j;
  j["features"] = m.feature_scaler;
  if (m.target_scaler) j["targets"] = *m.target_scaler;
  std::vector<std::string> names;
  for (auto c : m.classes) names.emplace_back(class_name(c));
  j["classes"] = names;
  if (m.fixed_impedance) j["fixed_lambda"] = *m.fixed_impedance;
  j["seed"] = m.seed;
  return j;
}

inline void write_json_file(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) fail(ErrorCode::Io, "failed writing " + path.string());
}

inline nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, path.string() + ": " + e.what());
  }
}

/// Writes `<stem>.model` and `<stem>.scaler.json` into `dir`.
inline void save_trained(const fs::path& dir, const std::string& stem, const TrainedModel& m) {
  m.validate();
  fs::create_directories(dir);
  nn::save_model((dir / (stem + ".model")).string(), m.spec, m.params);
  write_json_file(dir / (stem + ".scaler.json"), scaler_json(m));
}

inline TrainedModel load_trained(const fs::path& dir, const std::string& stem) {
  auto loaded = nn::load_model<float>((dir / (stem + ".model")).string());
  const auto j = read_json_file(dir / (stem + ".scaler.json"));
  TrainedModel m;
  m.spec = std::move(loaded.spec);
  m.params = std::move(loaded.params);
  try {
    m.feature_scaler = j.at("features").get<Standardizer>();
    if (j.contains("targets")) m.target_scaler = j.at("targets").get<Standardizer>();
    for (const auto& n : j.at("classes")) m.classes.push_back(class_from_name(n.get<std::string>()));
    if (j.contains("fixed_lambda")) m.fixed_impedance = j.at("fixed_lambda").get<double>();
    m.seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, stem + ".scaler.json: " + e.what());
  }
  m.validate();
  return m;
}

/// Classifier plus one regressor per shape class. Immutable once assembled.
struct ModelRegistry {
  std::optional<TrainedModel> classifier;
  std::map<ShapeClass, TrainedModel> regressors;

  void add_regressor(TrainedModel m) {
    m.validate();
    if (m.task() != Task::Regression) fail(ErrorCode::InvalidConfig, "regressor slot needs a regression model");
    const ShapeClass c = m.classes.front();
    regressors[c] = std::move(m);
  }

  void set_classifier(TrainedModel m) {
    m.validate();
    if (m.task() != Task::Classification) fail(ErrorCode::InvalidConfig, "classifier slot needs a classification model");
    classifier = std::move(m);
  }

  void save(const fs::path& dir) const {
    fs::create_directories(dir);
    nlohmann::json manifest{{"format", "circscatter-registry-v1"}};
    auto describe = [](const TrainedModel& m) {
      nlohmann::json d{{"preset", m.spec.name}, {"T0", m.spec.T0}, {"C0", m.spec.C0},
                       {"task", std::string(task_name(m.spec.task))}, {"seed", m.seed}};
      std::vector<std::string> names;
      for (auto c : m.classes) names.emplace_back(class_name(c));
      d["classes"] = names;
      if (m.fixed_impedance) d["fixed_lambda"] = *m.fixed_impedance;
      return d;
    };
    if (classifier) {
      save_trained(dir, "classifier", *classifier);
      manifest["models"]["classifier"] = describe(*classifier);
    }
    for (const auto& [cls, m] : regressors) {
      const std::string stem(class_name(cls));
      save_trained(dir, stem, m);
      manifest["models"][stem] = describe(m);
    }
    write_json_file(dir / "manifest.json", manifest);
  }

  static ModelRegistry load(const fs::path& dir) {
    const auto manifest = read_json_file(dir / "manifest.json");
    ModelRegistry r;
    if (!manifest.contains("models")) return r;
    for (const auto& [stem, _] : manifest.at("models").items()) {
      auto m = load_trained(dir, stem);
      if (stem == "classifier")
        r.set_classifier(std::move(m));
      else
        r.add_regressor(std::move(m));
    }
    return r;
  }
};

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

/// Raw features of one obstacle, keyed by input layout.
using FeatureSet = std::map<InputLayout, std::vector<double>>;

/// All layouts needed by `registry`, derived from superset (C0=8, T0=128) features.
inline FeatureSet features_from_superset(std::span<const double> superset, std::span<const InputLayout> layouts) {
  FeatureSet out;
  for (const auto& l : layouts) out[l] = project_layout(superset, l);
  out[kSupersetLayout] = std::vector<double>(superset.begin(), superset.end());
  return out;
}

inline std::vector<InputLayout> required_layouts(const ModelRegistry& r) {
  std::vector<InputLayout> out;
  if (r.classifier) out.push_back(r.classifier->layout());
  for (const auto& [_, m] : r.regressors) out.push_back(m.layout());
  return out;
}

struct InverseSolution {
  ShapeClass cls = ShapeClass::Peanut;
  std::vector<ShapeClass> class_order;
  std::vector<double> probabilities;
  std::vector<double> raw_outputs;  ///< regressor output in original units
  BoundaryShape shape;
  bool out_of_range = false;  ///< predicted parameters outside the sampling ranges or invalid geometry
  std::string diagnostic;
  std::string classifier_preset;
  std::string regressor_preset;
  InputLayout classifier_layout;
  InputLayout regressor_layout;
};

inline const std::vector<double>& require_layout(const FeatureSet& f, InputLayout l) {
  const auto it = f.find(l);
  if (it == f.end())
    fail(ErrorCode::LayoutMissing, "no features for layout T0=" + std::to_string(l.T0) + " C0=" + std::to_string(l.C0));
  return it->second;
}

/// Range and geometry diagnostic for a predicted shape; empty when it is in range and valid.
inline std::string prediction_diagnostic(const BoundaryShape& s) {
  const auto ranges = sampling_ranges(s.cls);
  for (std::size_t i = 0; i < ranges.size() && i < s.coeffs.size(); ++i)
    if (s.coeffs[i] < ranges[i].lo || s.coeffs[i] > ranges[i].hi)
      return "coefficient " + std::to_string(i) + " outside sampling range";
  const auto d = validate_shape(s, ScatterConfig{});
  return d.valid ? std::string() : d.reason;
}

/// Runs the regressor of `cls` on the matching features. No clamping of the output.
inline InverseSolution regress_as(const ModelRegistry& r, ShapeClass cls, const FeatureSet& features) {
  const auto it = r.regressors.find(cls);
  if (it == r.regressors.end())
    fail(ErrorCode::LayoutMissing, "no regressor for class " + std::string(class_name(cls)));
  const auto& m = it->second;
  InverseSolution s;
  s.cls = cls;
  s.raw_outputs = m.predict(require_layout(features, m.layout()));
  s.shape = shape_from_targets(cls, s.raw_outputs, m.fixed_impedance);
  s.diagnostic = prediction_diagnostic(s.shape);
  s.out_of_range = !s.diagnostic.empty();
  s.regressor_preset = m.spec.name;
  s.regressor_layout = m.layout();
  return s;
}

/// Classify, then route to the predicted class's regressor.
inline InverseSolution infer(const ModelRegistry& r, const FeatureSet& features) {
  if (!r.classifier) fail(ErrorCode::InvalidConfig, "registry has no classifier");
  const auto& c = *r.classifier;
  const auto probs = c.predict(require_layout(features, c.layout()));
  const auto arg = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  InverseSolution s = regress_as(r, c.classes[arg], features);
  s.class_order = c.classes;
  s.probabilities = probs;
  s.classifier_preset = c.spec.name;
  s.classifier_layout = c.layout();
  return s;
}

inline nlohmann::json to_json(const InverseSolution& s) {
  nlohmann::json j;
  j["class"] = std::string(class_name(s.cls));
  nlohmann::json probs = nlohmann::json::object();
  for (std::size_t i = 0; i < s.class_order.size(); ++i) probs[std::string(class_name(s.class_order[i]))] = s.probabilities[i];
  j["probabilities"] = probs;
  j["shape"] = s.shape;
  j["out_of_range"] = s.out_of_range;
  if (!s.diagnostic.empty()) j["diagnostic"] = s.diagnostic;
  j["classifier"] = {{"preset", s.classifier_preset}, {"T0", s.classifier_layout.T0}, {"C0", s.classifier_layout.C0}};
  j["regressor"] = {{"preset", s.regressor_preset}, {"T0", s.regressor_layout.T0}, {"C0", s.regressor_layout.C0}};
  return j;
}

// ---------------------------------------------------------------------------
// Curves
// ---------------------------------------------------------------------------

struct Polyline {
  std::vector<Vec2> points;
  bool degenerate = false;  ///< radial function non-positive somewhere
};

/// Boundary points on the T-point grid, also for degenerate predictions. A peanut whose
/// squared radius goes negative is drawn through its center at those angles.
inline Polyline reconstruct_curve(const BoundaryShape& shape, int T) {
  detail::require_coeffs(shape);
  Polyline out;
  for (double t : boundary_grid(T)) {
    if (is_radial(shape.cls)) {
      double rho = detail::radial(shape, t).rho;
      if (!(rho > 0.0)) {
        out.degenerate = true;
        if (!std::isfinite(rho)) rho = 0.0;
      }
      out.points.push_back({rho * std::cos(t) + shape.center.x, rho * std::sin(t) + shape.center.y});
    } else {
      out.points.push_back(detail::eval_unchecked(shape, t).point);
    }
  }
  return out;
}

inline double rms_distance(std::span<const Vec2> a, std::span<const Vec2> b, std::size_t shift = 0) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const Vec2 d = a[k] - b[(k + shift) % b.size()];
    acc += dot(d, d);
  }
  return std::sqrt(acc / static_cast<double>(a.size()));
}

/// Matched-tau RMS distance minimized over cyclic re-indexings of the second curve. Used
/// when the two shapes come from different parametrizations.
inline double aligned_discrepancy(const BoundaryShape& a, const BoundaryShape& b, int T) {
  const auto pa = reconstruct_curve(a, T).points, pb = reconstruct_curve(b, T).points;
  double best = rms_distance(pa, pb, 0);
  for (std::size_t s = 1; s < pb.size(); ++s) best = std::min(best, rms_distance(pa, pb, s));
  return best;
}

struct CurveComparison {
  std::vector<double> tau;
  std::vector<Vec2> truth;
  std::vector<Vec2> predicted;
  double discrepancy = 0.0;
  bool degenerate = false;
};

inline CurveComparison compare_curves(const BoundaryShape& truth, const BoundaryShape& predicted, int T) {
  CurveComparison c;
  c.tau = boundary_grid(T);
  c.truth = reconstruct_curve(truth, T).points;
  const auto p = reconstruct_curve(predicted, T);
  c.predicted = p.points;
  c.degenerate = p.degenerate;
  c.discrepancy = rms_distance(c.truth, c.predicted);
  return c;
}

inline void write_curve_csv(const fs::path& path, const CurveComparison& c) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write curve file " + path.string());
  out << "tau,x_true,y_true,x_pred,y_pred\n";
  using detail::format_double;
  for (std::size_t k = 0; k < c.tau.size(); ++k)
    out << format_double(c.tau[k]) << ',' << format_double(c.truth[k].x) << ',' << format_double(c.truth[k].y) << ','
        << format_double(c.predicted[k].x) << ',' << format_double(c.predicted[k].y) << '\n';
  if (!out) fail(ErrorCode::Io, "failed writing " + path.string());
}

inline CurveComparison read_curve_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open curve file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "tau,x_true,y_true,x_pred,y_pred")
    fail(ErrorCode::Parse, path.string() + ": unexpected curve header");
  CurveComparison c;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::array<double, 5> v{};
    std::size_t start = 0;
    for (std::size_t i = 0; i < 5; ++i) {
      const std::size_t end = i < 4 ? line.find(',', start) : line.size();
      if (end == std::string::npos) fail(ErrorCode::Parse, path.string() + ": line " + std::to_string(lineno) + " has too few fields");
      v[i] = detail::parse_double(std::string_view(line).substr(start, end - start), lineno);
      start = end + 1;
    }
    c.tau.push_back(v[0]);
    c.truth.push_back({v[1], v[2]});
    c.predicted.push_back({v[3], v[4]});
  }
  if (!c.tau.empty()) c.discrepancy = rms_distance(c.truth, c.predicted);
  return c;
}

// ---------------------------------------------------------------------------
// Histograms
// ---------------------------------------------------------------------------

struct Histogram {
  std::vector<double> edges;  ///< bins + 1 edges
  std::vector<std::size_t> counts;
};

inline Histogram make_histogram(std::span<const double> values, std::size_t bins = 30) {
  Histogram h;
  if (values.empty() || bins == 0) return h;
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  double lo = *mn, hi = *mx;
  if (hi <= lo) hi = lo + 1.0;
  h.edges.resize(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) h.edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  h.counts.assign(bins, 0);
  for (double v : values) {
    auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
    ++h.counts[std::min(b, bins - 1)];
  }
  return h;
}

inline void write_histogram_csv(const fs::path& path, const Histogram& h) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out << "bin_lo,bin_hi,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    out << detail::format_double(h.edges[i]) << ',' << detail::format_double(h.edges[i + 1]) << ',' << h.counts[i] << '\n';
}

// ---------------------------------------------------------------------------
// Experiment suites
// ---------------------------------------------------------------------------

enum class Suite { Classification, Peanut, Kite, StarFixed, StarVariable };

struct SuiteInfo {
  Suite suite;
  std::string_view name;
  int C0;
  int T0;
  std::vector<double> phis;
  std::size_t full_count;
  std::string_view preset;
  Task task;
  std::vector<ShapeClass> classes;
  std::optional<double> fixed_impedance;
};

inline constexpr double kFixedImpedance = 2.0;

inline SuiteInfo suite_info(Suite s) {
  const double pi = std::numbers::pi;
  switch (s) {
    case Suite::Classification:
      return {s, "classification", 2, 32, {0.0}, 90000, "ap1", Task::Classification,
              {ShapeClass::Peanut, ShapeClass::Kite, ShapeClass::Star}, std::nullopt};
    case Suite::Peanut: return {s, "peanut", 2, 32, {0.0}, 30000, "ap2", Task::Regression, {ShapeClass::Peanut}, std::nullopt};
    case Suite::Kite: return {s, "kite", 2, 32, {0.0}, 30000, "ap4", Task::Regression, {ShapeClass::Kite}, std::nullopt};
    case Suite::StarFixed:
      return {s, "star_fixed", 4, 128, {0.0}, 80000, "ap7", Task::Regression, {ShapeClass::Star}, kFixedImpedance};
    case Suite::StarVariable:
      return {s, "star_variable", 8, 128, {0.0, pi}, 120000, "ap10", Task::Regression, {ShapeClass::Star}, std::nullopt};
  }
  fail(ErrorCode::InvalidConfig, "unknown suite");
}

inline constexpr std::array kAllSuites{Suite::Classification, Suite::Peanut, Suite::Kite, Suite::StarFixed,
                                       Suite::StarVariable};

inline Suite suite_from_name(std::string_view name) {
  for (Suite s : kAllSuites)
    if (suite_info(s).name == name) return s;
  fail(ErrorCode::InvalidConfig, "unknown suite '" + std::string(name) + "'");
}

/// round(scale * N) samples of the suite's class(es) and layout.
inline GenerationSpec suite_generation(Suite s, double scale, std::uint64_t seed, unsigned threads = 1) {
  if (!(scale > 0.0 && scale <= 1.0)) fail(ErrorCode::InvalidConfig, "scale must lie in (0, 1]");
  const auto info = suite_info(s);
  GenerationSpec g;
  g.classes = info.classes;
  g.count = static_cast<std::size_t>(std::llround(scale * static_cast<double>(info.full_count)));
  g.config.T0 = info.T0;
  g.config.C0 = info.C0;
  g.config.phis = info.phis;
  g.fixed_impedance = info.fixed_impedance;
  g.task = info.task;
  g.seed = seed;
  g.threads = threads;
  return g;
}

struct ExperimentConfig {
  Suite suite = Suite::Classification;
  double scale = 1.0;
  std::uint64_t seed = 0;
  TrainConfig train;            ///< starts from the preset values; callers override fields
  std::vector<double> noise_levels = kDefaultNoiseLevels;
  int noise_trials = 5;
  std::string out_dir;          ///< outputs are written here when non-empty
  std::optional<std::string> data_path;  ///< load this dataset instead of generating one
  unsigned threads = 1;
  std::size_t histogram_bins = 30;
  int curve_points = 128;
};

inline ExperimentConfig default_experiment(Suite s) {
  ExperimentConfig c;
  c.suite = s;
  c.train = preset_train_config(suite_info(s).preset);
  return c;
}

struct ExperimentResult {
  TrainedModel model;
  TrainHistory history;
  DatasetSplit split;
  std::optional<ClassificationReport> classification;
  std::optional<RegressionReport> regression;
  std::vector<NoiseLevelResult> sweep;
  std::map<std::string, CurveComparison> curves;  ///< max / min / random error samples
  std::optional<Histogram> error_histogram;
  double seconds = 0.0;
};

inline nlohmann::json to_json(const TrainHistory& h) {
  return {{"epochs", h.epochs.size()}, {"best_epoch", h.best_epoch}, {"best_valid_loss", h.best_valid_loss},
          {"early_stopped", h.early_stopped}};
}

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j{{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"max_epochs", c.max_epochs},
                   {"min_delta", c.min_delta},         {"patience", c.patience},      {"seed", c.seed},
                   {"shard_size", c.shard_size}};
  j["clip"] = c.clip ? nlohmann::json(*c.clip) : nlohmann::json();
  return j;
}

/// Generate (or load) the suite's data, split, standardize on the training rows, train
/// the matching preset, then evaluate on the test rows with a noise sweep and, for
/// regression suites, error histogram and max/min/random reconstructions.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const EpochCallback& on_epoch = {}) {
  const auto start = std::chrono::steady_clock::now();
  const auto info = suite_info(cfg.suite);
  Dataset ds = cfg.data_path ? read_dataset(*cfg.data_path)
                             : generate_dataset(suite_generation(cfg.suite, cfg.scale, cfg.seed, cfg.threads));
  if (ds.header.T0 != info.T0 || ds.header.C0 != info.C0 || ds.header.task != info.task)
    fail(ErrorCode::LayoutMismatch, "dataset layout does not match suite " + std::string(info.name));

  ExperimentResult res;
  res.split = split_dataset(ds.size(), cfg.seed);
  auto& m = res.model;
  m.spec = nn::make_preset(info.preset);
  m.classes = ds.header.classes;
  m.fixed_impedance = ds.header.fixed_impedance;
  m.seed = cfg.seed;
  m.feature_scaler = Standardizer::fit(ds.features, ds.header.feature_size(), res.split.train);
  if (info.task == Task::Regression)
    m.target_scaler = Standardizer::fit(ds.targets, static_cast<std::size_t>(ds.header.P), res.split.train);

  const auto all = make_training_data(ds, m.feature_scaler, m.target_scaler ? &*m.target_scaler : nullptr);
  const auto train_d = subset(all, res.split.train);
  const auto valid_d = subset(all, res.split.valid);
  const auto test_d = subset(all, res.split.test);

  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  tc.threads = cfg.threads;
  auto trained = train<float>(m.spec, nn::init_parameters<float>(m.spec, cfg.seed), train_d, valid_d, tc, on_epoch);
  m.params = std::move(trained.params);
  res.history = std::move(trained.history);

  const Network<float> net(m.spec);
  if (info.task == Task::Classification) {
    res.classification = evaluate_classification(net, m.params, test_d, cfg.threads);
    res.sweep = noise_sweep(net, m.params, test_d, cfg.noise_levels, cfg.seed, cfg.noise_trials, nullptr, cfg.threads);
  } else {
    res.regression = evaluate_regression(net, m.params, test_d, *m.target_scaler, cfg.threads);
    res.sweep = noise_sweep(net, m.params, test_d, cfg.noise_levels, cfg.seed, cfg.noise_trials, &*m.target_scaler,
                            cfg.threads);
    const auto& err = res.regression->sample_error;
    res.error_histogram = make_histogram(err, cfg.histogram_bins);

    auto pred = predict_all(net, m.params, test_d, cfg.threads);
    m.target_scaler->invert(pred);
    const auto P = static_cast<std::size_t>(ds.header.P);
    const ShapeClass cls = ds.header.classes.front();
    auto curve_for = [&](std::size_t i) {
      const auto truth = shape_from_targets(cls, ds.target_row(res.split.test[i]), ds.header.fixed_impedance);
      const auto guess = shape_from_targets(cls, std::span<const double>(pred).subspan(i * P, P), ds.header.fixed_impedance);
      return compare_curves(truth, guess, cfg.curve_points);
    };
    if (!err.empty()) {
      const auto imax = static_cast<std::size_t>(std::max_element(err.begin(), err.end()) - err.begin());
      const auto imin = static_cast<std::size_t>(std::min_element(err.begin(), err.end()) - err.begin());
      Rng pick = make_rng(cfg.seed, 0xC0CEULL);
      res.curves["max"] = curve_for(imax);
      res.curves["min"] = curve_for(imin);
      res.curves["random"] = curve_for(static_cast<std::size_t>(pick() % err.size()));
    }
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (!cfg.out_dir.empty()) {
    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    const std::string stem = info.task == Task::Classification ? "classifier" : std::string(class_name(m.classes.front()));
    save_trained(out, stem, m);
    res.history.write_csv((out / "history.csv").string());
    nlohmann::json report{{"suite", std::string(info.name)}, {"preset", std::string(info.preset)},
                          {"samples", ds.size()},             {"seed", cfg.seed},
                          {"train", to_json(tc)},             {"history", to_json(res.history)},
                          {"seconds", res.seconds}};
    report["split"] = {{"train", res.split.train.size()}, {"valid", res.split.valid.size()}, {"test", res.split.test.size()}};
    if (res.classification) report["test"] = to_json(*res.classification, m.classes);
    if (res.regression) report["test"] = to_json(*res.regression);
    report["noise"] = to_json(res.sweep);
    write_json_file(out / "report.json", report);
    if (res.error_histogram) write_histogram_csv(out / "error_histogram.csv", *res.error_histogram);
    for (const auto& [name, c] : res.curves) write_curve_csv(out / ("curve_" + name + ".csv"), c);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Misclassification analysis
// ---------------------------------------------------------------------------

struct MisclassifiedSample {
  std::size_t index = 0;
  std::string shape_id;
  ShapeClass truth = ShapeClass::Peanut;
  ShapeClass predicted = ShapeClass::Peanut;
  BoundaryShape reconstruction;
  double discrepancy = 0.0;
  bool degenerate = false;
};

struct MisclassificationReport {
  std::size_t total = 0;
  std::array<std::array<std::size_t, 3>, 3> counts{};  ///< [true][predicted], classes in tag order
  std::vector<MisclassifiedSample> entries;
};

/// Runs the full pipeline on every sample and lists the misclassified ones together with
/// the reconstruction produced by the wrongly chosen regressor.
inline MisclassificationReport misclassification_report(const ModelRegistry& r, std::span<const FeatureSet> features,
                                                        std::span<const BoundaryShape> truth,
                                                        std::span<const std::string> ids, int T = 128) {
  if (features.size() != truth.size() || ids.size() != truth.size())
    fail(ErrorCode::ShapeMismatch, "features, shapes and ids must have equal length");
  MisclassificationReport rep;
  rep.total = truth.size();
  auto idx = [](ShapeClass c) { return static_cast<std::size_t>(c) - 1; };
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto sol = infer(r, features[i]);
    ++rep.counts[idx(truth[i].cls)][idx(sol.cls)];
    if (sol.cls == truth[i].cls) continue;
    MisclassifiedSample e;
    e.index = i;
    e.shape_id = ids[i];
    e.truth = truth[i].cls;
    e.predicted = sol.cls;
    e.reconstruction = sol.shape;
    e.discrepancy = aligned_discrepancy(truth[i], sol.shape, T);
    e.degenerate = reconstruct_curve(sol.shape, T).degenerate;
    rep.entries.push_back(std::move(e));
  }
  return rep;
}

inline nlohmann::json to_json(const MisclassificationReport& r) {
  nlohmann::json j{{"total", r.total}, {"misclassified", r.entries.size()}};
  nlohmann::json counts = nlohmann::json::object();
  for (ShapeClass t : kAllShapeClasses)
    for (ShapeClass p : kAllShapeClasses)
      counts[std::string(class_name(t)) + "->" + std::string(class_name(p))] =
          r.counts[static_cast<std::size_t>(t) - 1][static_cast<std::size_t>(p) - 1];
  j["counts"] = counts;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : r.entries)
    entries.push_back({{"index", e.index},
                       {"shape_id", e.shape_id},
                       {"true", std::string(class_name(e.truth))},
                       {"predicted", std::string(class_name(e.predicted))},
                       {"reconstruction", e.reconstruction},
                       {"discrepancy", e.discrepancy},
                       {"degenerate", e.degenerate}});
  j["entries"] = entries;
  return j;
}

}  // namespace circscatter
