// Command-line driver: data generation, training, evaluation, reconstruction and the
// two-stage inverse pipeline.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "circscatter/circscatter.hpp"

namespace cs = circscatter;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kValidation = 2, kNumeric = 3, kIo = 4 };

/// Every flag any command accepts. Values not given on the command line may come from
/// the --config JSON file; flags win.
struct Options {
  std::string config;
  std::string suite = "classification";
  std::string preset;
  std::string data;
  std::string out = "run";
  std::string model;
  std::string registry;
  std::string shapes;
  std::string classifier, peanut, kite, star;
  std::uint64_t seed = 0;
  double scale = 1.0;
  std::vector<double> noise_levels = cs::kDefaultNoiseLevels;
  int trials = 5;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<std::size_t> batch;
  std::optional<int> patience;
  std::optional<double> min_delta;
  std::optional<double> clip;
  std::optional<double> fixed_lambda;
  bool superset = false;
  int curve_points = 128;
};

void add_flag(CLI::App* cmd, Options& o, const std::string& name) {
  if (name == "config") cmd->add_option("--config", o.config, "JSON file with option values (flags win)");
  if (name == "suite") cmd->add_option("--suite", o.suite, "classification|peanut|kite|star_fixed|star_variable");
  if (name == "preset") cmd->add_option("--preset", o.preset, "ap1|ap2|ap4|ap7|ap10");
  if (name == "data") cmd->add_option("--data", o.data, "dataset file");
  if (name == "out") cmd->add_option("--out", o.out, "output path");
  if (name == "model") cmd->add_option("--model", o.model, "model file (<stem>.model with <stem>.scaler.json)");
  if (name == "registry") cmd->add_option("--registry", o.registry, "registry directory");
  if (name == "shapes") cmd->add_option("--shapes", o.shapes, "ground-truth shapes JSON written by generate");
  if (name == "seed") cmd->add_option("--seed", o.seed, "run seed");
  if (name == "scale") cmd->add_option("--scale", o.scale, "dataset scale factor in (0, 1]");
  if (name == "noise-levels") cmd->add_option("--noise-levels", o.noise_levels, "noise levels eta")->delimiter(',');
  if (name == "trials") cmd->add_option("--trials", o.trials, "noise draws per level");
  if (name == "epochs") cmd->add_option("--epochs", o.epochs, "maximum epochs");
  if (name == "lr") cmd->add_option("--lr", o.lr, "learning rate");
  if (name == "batch") cmd->add_option("--batch", o.batch, "batch size");
  if (name == "patience") cmd->add_option("--patience", o.patience, "early-stopping patience");
  if (name == "min-delta") cmd->add_option("--min-delta", o.min_delta, "early-stopping minimum improvement");
  if (name == "clip") cmd->add_option("--clip", o.clip, "global gradient-norm clip threshold");
  if (name == "fixed-lambda") cmd->add_option("--fixed-lambda", o.fixed_lambda, "fix the impedance to this value");
  if (name == "superset") cmd->add_flag("--superset", o.superset, "generate the C0=8, T0=128 superset layout");
  if (name == "curve-points") cmd->add_option("--curve-points", o.curve_points, "points per reconstructed curve");
}

/// Fills options absent from the command line with values from the config file.
void merge_config(CLI::App* cmd, Options& o) {
  if (o.config.empty()) return;
  json j;
  {
    std::ifstream in(o.config);
    if (!in) cs::fail(cs::ErrorCode::Io, "cannot open config " + o.config);
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      cs::fail(cs::ErrorCode::Parse, o.config + ": " + e.what());
    }
  }
  auto given = [&](const std::string& flag) {
    for (const CLI::Option* opt : cmd->get_options())
      if (opt->get_name() == "--" + flag) return opt->count() > 0;
    return true;
  };
  auto take = [&](const std::string& flag, auto& field) {
    std::string key = flag;
    std::replace(key.begin(), key.end(), '-', '_');
    if (!j.contains(key) || given(flag)) return;
    using T = std::decay_t<decltype(field)>;
    try {
      if constexpr (requires { typename T::value_type; field.has_value(); })
        field = j.at(key).get<typename T::value_type>();
      else
        field = j.at(key).get<T>();
    } catch (const json::exception& e) {
      cs::fail(cs::ErrorCode::InvalidConfig, "config key '" + key + "': " + e.what());
    }
  };
  take("suite", o.suite);
  take("preset", o.preset);
  take("data", o.data);
  take("out", o.out);
  take("model", o.model);
  take("registry", o.registry);
  take("shapes", o.shapes);
  take("seed", o.seed);
  take("scale", o.scale);
  take("noise-levels", o.noise_levels);
  take("trials", o.trials);
  take("epochs", o.epochs);
  take("lr", o.lr);
  take("batch", o.batch);
  take("patience", o.patience);
  take("min-delta", o.min_delta);
  take("clip", o.clip);
  take("fixed-lambda", o.fixed_lambda);
  take("superset", o.superset);
  take("curve-points", o.curve_points);
}

json options_json(const Options& o, const std::string& command) {
  json j{{"command", command}, {"suite", o.suite}, {"preset", o.preset}, {"data", o.data}, {"out", o.out},
         {"model", o.model},   {"registry", o.registry}, {"seed", o.seed}, {"scale", o.scale},
         {"noise_levels", o.noise_levels}, {"trials", o.trials}, {"superset", o.superset}};
  auto opt = [&](const char* k, const auto& v) {
    if (v) j[k] = *v;
  };
  opt("epochs", o.epochs);
  opt("lr", o.lr);
  opt("batch", o.batch);
  opt("patience", o.patience);
  opt("min_delta", o.min_delta);
  opt("clip", o.clip);
  opt("fixed_lambda", o.fixed_lambda);
  return j;
}

/// Copies the effective configuration into the output directory.
void archive(const fs::path& dir, const Options& o, const std::string& command) {
  fs::create_directories(dir);
  cs::write_json_file(dir / "run_config.json", options_json(o, command));
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) cs::fail(cs::ErrorCode::InvalidConfig, std::string("missing --") + what);
  if (!fs::exists(path)) cs::fail(cs::ErrorCode::Io, std::string(what) + " not found: " + path);
}

cs::TrainConfig train_config(const Options& o, const std::string& preset) {
  auto c = cs::preset_train_config(preset);
  if (o.epochs) c.max_epochs = *o.epochs;
  if (o.lr) c.learning_rate = *o.lr;
  if (o.batch) c.batch_size = *o.batch;
  if (o.patience) c.patience = *o.patience;
  if (o.min_delta) c.min_delta = *o.min_delta;
  if (o.clip) c.clip = *o.clip;
  c.seed = o.seed;
  c.threads = cs::thread_budget();
  c.validate();
  return c;
}

/// Model path "<dir>/<stem>.model" to (dir, stem).
cs::TrainedModel load_model_file(const std::string& path) {
  require_file(path, "model");
  const fs::path p(path);
  return cs::load_trained(p.parent_path().empty() ? fs::path(".") : p.parent_path(), p.stem().string());
}

void print_epoch(const cs::EpochRecord& e) {
  std::printf("epoch %4d  train %.6g  valid %.6g", e.epoch, e.train_loss, e.valid_loss);
  if (e.valid_accuracy) std::printf("  valid_acc %.4f", *e.valid_accuracy);
  std::printf("\n");
  std::fflush(stdout);
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_generate(const Options& o) {
  const auto suite = cs::suite_from_name(o.suite);
  auto spec = cs::suite_generation(suite, o.scale, o.seed, cs::thread_budget());
  if (o.fixed_lambda) spec.fixed_impedance = *o.fixed_lambda;
  if (o.superset) {
    spec.config.T0 = cs::kSupersetLayout.T0;
    spec.config.C0 = cs::kSupersetLayout.C0;
    spec.config.phis = {0.0, std::numbers::pi};
  }
  const auto set = cs::generate_with_shapes(spec);
  const fs::path out(o.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  cs::write_dataset(out, set.dataset);
  json shapes = json::array();
  for (std::size_t i = 0; i < set.shapes.size(); ++i) shapes.push_back({{"id", set.dataset.shape_ids[i]}, {"shape", set.shapes[i]}});
  cs::write_json_file(out.string() + ".shapes.json", shapes);
  json manifest = options_json(o, "generate");
  manifest["samples"] = set.dataset.size();
  manifest["T0"] = set.dataset.header.T0;
  manifest["C0"] = set.dataset.header.C0;
  manifest["task"] = std::string(cs::task_name(set.dataset.header.task));
  cs::write_json_file(out.string() + ".manifest.json", manifest);
  std::printf("wrote %zu samples (T0=%d C0=%d) to %s\n", set.dataset.size(), set.dataset.header.T0,
              set.dataset.header.C0, out.string().c_str());
  return kOk;
}

int cmd_train(const Options& o) {
  require_file(o.data, "data");
  if (o.preset.empty()) cs::fail(cs::ErrorCode::InvalidConfig, "missing --preset");
  const auto spec = cs::nn::make_preset(o.preset);
  const auto ds = cs::read_dataset(o.data);
  if (ds.header.layout() != spec.input_layout() || ds.header.task != spec.task ||
      (spec.task == cs::Task::Regression ? ds.header.P : static_cast<int>(ds.header.classes.size())) != spec.output_dim())
    cs::fail(cs::ErrorCode::LayoutMismatch,
             "preset " + o.preset + " expects T0=" + std::to_string(spec.T0) + " C0=" + std::to_string(spec.C0) + ", " +
                 std::string(cs::task_name(spec.task)) + " with " + std::to_string(spec.output_dim()) +
                 " outputs; dataset has T0=" + std::to_string(ds.header.T0) + " C0=" + std::to_string(ds.header.C0) +
                 ", " + std::string(cs::task_name(ds.header.task)) + " with " +
                 std::to_string(ds.header.task == cs::Task::Regression ? ds.header.P
                                                                       : static_cast<int>(ds.header.classes.size())) +
                 " outputs");
  const auto tc = train_config(o, o.preset);
  const fs::path out(o.out);
  archive(out, o, "train");

  const auto split = cs::split_dataset(ds.size(), o.seed);
  cs::TrainedModel m;
  m.spec = spec;
  m.classes = ds.header.classes;
  m.fixed_impedance = ds.header.fixed_impedance;
  m.seed = o.seed;
  m.feature_scaler = cs::Standardizer::fit(ds.features, ds.header.feature_size(), split.train);
  if (spec.task == cs::Task::Regression)
    m.target_scaler = cs::Standardizer::fit(ds.targets, static_cast<std::size_t>(ds.header.P), split.train);
  const auto all = cs::make_training_data(ds, m.feature_scaler, m.target_scaler ? &*m.target_scaler : nullptr);
  const auto tr = cs::subset(all, split.train), va = cs::subset(all, split.valid), te = cs::subset(all, split.test);

  auto result = cs::train<float>(spec, cs::nn::init_parameters<float>(spec, o.seed), tr, va, tc,
                                 [](const cs::EpochRecord& e) { print_epoch(e); return true; });
  m.params = std::move(result.params);
  const std::string stem = spec.task == cs::Task::Classification ? "classifier" : std::string(cs::class_name(m.classes.front()));
  cs::save_trained(out, stem, m);
  result.history.write_csv((out / "history.csv").string());

  const cs::Network<float> net(spec);
  json report{{"preset", o.preset}, {"data", o.data}, {"train", cs::to_json(tc)}, {"history", cs::to_json(result.history)}};
  if (spec.task == cs::Task::Classification) {
    const auto r = cs::evaluate_classification(net, m.params, te, tc.threads);
    report["test"] = cs::to_json(r, m.classes);
    std::printf("test accuracy %.4f\n", r.accuracy);
  } else {
    const auto r = cs::evaluate_regression(net, m.params, te, *m.target_scaler, tc.threads);
    report["test"] = cs::to_json(r);
    std::printf("test R2 %.6f  RMSE %.6g\n", r.r2.value_or(std::nan("")), r.rmse);
  }
  cs::write_json_file(out / "report.json", report);
  return kOk;
}

/// Standardized rows of `ds` for model `m`; the whole file is treated as evaluation data.
cs::TrainingData model_data(const cs::TrainedModel& m, const cs::Dataset& ds) {
  if (ds.header.layout() != m.layout() || ds.header.task != m.task())
    cs::fail(cs::ErrorCode::LayoutMismatch, "dataset layout or task does not match the model");
  if (m.task() == cs::Task::Classification && ds.header.classes != m.classes)
    cs::fail(cs::ErrorCode::LayoutMismatch, "dataset class list differs from the classifier's");
  if (m.task() == cs::Task::Regression && ds.header.classes != m.classes)
    cs::fail(cs::ErrorCode::LayoutMismatch, "dataset shape class differs from the regressor's");
  return cs::make_training_data(ds, m.feature_scaler, m.target_scaler ? &*m.target_scaler : nullptr);
}

int cmd_evaluate(const Options& o) {
  const auto m = load_model_file(o.model);
  require_file(o.data, "data");
  const auto d = model_data(m, cs::read_dataset(o.data));
  const cs::Network<float> net(m.spec);
  json report{{"model", o.model}, {"data", o.data}};
  if (m.task() == cs::Task::Classification) {
    const auto r = cs::evaluate_classification(net, m.params, d, cs::thread_budget());
    report["test"] = cs::to_json(r, m.classes);
    std::printf("accuracy %.4f\n", r.accuracy);
    for (std::size_t i = 0; i < m.classes.size(); ++i)
      std::printf("  %-7s recall %s\n", std::string(cs::class_name(m.classes[i])).c_str(),
                  r.recall[i] ? std::to_string(*r.recall[i]).c_str() : "absent");
  } else {
    const auto r = cs::evaluate_regression(net, m.params, d, *m.target_scaler, cs::thread_budget());
    report["test"] = cs::to_json(r);
    std::printf("R2 %.6f  RMSE %.6g\n", r.r2.value_or(std::nan("")), r.rmse);
    for (std::size_t j = 0; j < r.dim; ++j)
      std::printf("  param %2zu  R2 %s  RMSE %.6g\n", j, r.param_r2[j] ? std::to_string(*r.param_r2[j]).c_str() : "absent",
                  r.param_rmse[j]);
  }
  archive(o.out, o, "evaluate");
  cs::write_json_file(fs::path(o.out) / "evaluation.json", report);
  return kOk;
}

int cmd_sweep(const Options& o) {
  const auto m = load_model_file(o.model);
  require_file(o.data, "data");
  const auto d = model_data(m, cs::read_dataset(o.data));
  const cs::Network<float> net(m.spec);
  // The clean baseline comes first unless the user already listed it.
  std::vector<double> levels;
  if (std::ranges::find(o.noise_levels, 0.0) == o.noise_levels.end()) levels.push_back(0.0);
  levels.insert(levels.end(), o.noise_levels.begin(), o.noise_levels.end());
  const auto sweep = cs::noise_sweep(net, m.params, d, levels, o.seed, o.trials,
                                     m.target_scaler ? &*m.target_scaler : nullptr, cs::thread_budget());
  for (const auto& s : sweep) {
    if (m.task() == cs::Task::Classification) {
      std::printf("noise %6.2f%%  accuracy %.4f", 100.0 * s.level, s.accuracy);
      for (std::size_t k = 0; k < s.recall.size(); ++k)
        std::printf("  %s %s", std::string(cs::class_name(m.classes[k])).c_str(),
                    s.recall[k] ? std::to_string(*s.recall[k]).c_str() : "absent");
    } else {
      std::printf("noise %6.2f%%  R2 %.6f  RMSE %.6g", 100.0 * s.level, s.r2, s.rmse);
    }
    std::printf("\n");
  }
  archive(o.out, o, "sweep");
  cs::write_json_file(fs::path(o.out) / "sweep.json", cs::to_json(sweep));
  return kOk;
}

int cmd_reconstruct(const Options& o) {
  const auto m = load_model_file(o.model);
  if (m.task() != cs::Task::Regression) cs::fail(cs::ErrorCode::InvalidConfig, "reconstruct needs a regression model");
  require_file(o.data, "data");
  const auto ds = cs::read_dataset(o.data);
  const auto d = model_data(m, ds);
  const cs::Network<float> net(m.spec);
  auto pred = cs::predict_all(net, m.params, d, cs::thread_budget());
  m.target_scaler->invert(pred);
  const auto rep = cs::regression_report(pred, ds.targets, static_cast<std::size_t>(ds.header.P));
  const auto& err = rep.sample_error;
  if (err.empty()) cs::fail(cs::ErrorCode::TooSmall, "dataset is empty");
  const auto P = static_cast<std::size_t>(ds.header.P);
  const auto cls = m.classes.front();
  cs::Rng pick = cs::make_rng(o.seed, 0xC0CEULL);
  const std::vector<std::pair<std::string, std::size_t>> chosen{
      {"max", static_cast<std::size_t>(std::max_element(err.begin(), err.end()) - err.begin())},
      {"min", static_cast<std::size_t>(std::min_element(err.begin(), err.end()) - err.begin())},
      {"random", static_cast<std::size_t>(pick() % err.size())}};
  archive(o.out, o, "reconstruct");
  json summary = json::object();
  for (const auto& [name, i] : chosen) {
    const auto truth = cs::shape_from_targets(cls, ds.target_row(i), ds.header.fixed_impedance);
    const auto guess = cs::shape_from_targets(cls, std::span<const double>(pred).subspan(i * P, P), ds.header.fixed_impedance);
    const auto c = cs::compare_curves(truth, guess, o.curve_points);
    const auto file = fs::path(o.out) / ("curve_" + name + ".csv");
    cs::write_curve_csv(file, c);
    summary[name] = {{"index", i}, {"shape_id", ds.shape_ids[i]}, {"error", err[i]}, {"discrepancy", c.discrepancy},
                     {"degenerate", c.degenerate}, {"truth", truth}, {"predicted", guess}};
    std::printf("%-6s sample %zu  error %.6g  curve discrepancy %.6g%s -> %s\n", name.c_str(), i, err[i], c.discrepancy,
                c.degenerate ? " (degenerate)" : "", file.string().c_str());
  }
  cs::write_json_file(fs::path(o.out) / "reconstruct.json", summary);
  return kOk;
}

int cmd_gradcheck(const Options& o) {
  using L = cs::nn::LayerSpec;
  const cs::nn::NetworkSpec spec{"gradcheck", 16, 4, cs::Task::Classification,
                                 {L::conv(6, 5, 1), L::conv(8, 4, 2), L::attention(3, 4), L::bottleneck(3), L::flatten(),
                                  L::dense(6, 0.2, 1e-3), L::output(3, cs::nn::Activation::Softmax)}};
  const auto r = cs::grad_check(spec, o.seed);
  std::printf("parameters %zu  max_rel_err %.3e  max_abs_err %.3e\n", r.parameters, r.max_rel_error, r.max_abs_error);
  std::printf("max_rel_err < 1e-4: %s\n", r.passed ? "PASS" : "FAIL");
  return r.passed ? kOk : kNumeric;
}

int cmd_experiment(const Options& o) {
  const auto suite = cs::suite_from_name(o.suite);
  auto cfg = cs::default_experiment(suite);
  cfg.scale = o.scale;
  cfg.seed = o.seed;
  cfg.train = train_config(o, std::string(cs::suite_info(suite).preset));
  cfg.noise_levels = o.noise_levels;
  cfg.noise_trials = o.trials;
  cfg.out_dir = o.out;
  cfg.threads = cs::thread_budget();
  cfg.curve_points = o.curve_points;
  if (!o.data.empty()) {
    require_file(o.data, "data");
    cfg.data_path = o.data;
  }
  archive(o.out, o, "experiment");
  const auto r = cs::run_experiment(cfg, [](const cs::EpochRecord& e) { print_epoch(e); return true; });
  if (r.classification) std::printf("test accuracy %.4f\n", r.classification->accuracy);
  if (r.regression) std::printf("test R2 %.6f  RMSE %.6g\n", r.regression->r2.value_or(std::nan("")), r.regression->rmse);
  std::printf("outputs in %s (%.1f s)\n", o.out.c_str(), r.seconds);
  return kOk;
}

int cmd_registry(const Options& o) {
  cs::ModelRegistry r;
  if (!o.classifier.empty()) r.set_classifier(load_model_file(o.classifier));
  for (const auto* path : {&o.peanut, &o.kite, &o.star})
    if (!path->empty()) r.add_regressor(load_model_file(*path));
  r.save(o.out);
  std::printf("registry written to %s\n", o.out.c_str());
  return kOk;
}

int cmd_infer(const Options& o) {
  require_file(o.registry, "registry");
  const auto reg = cs::ModelRegistry::load(o.registry);
  require_file(o.data, "data");
  const auto ds = cs::read_dataset(o.data);
  const auto layouts = cs::required_layouts(reg);
  const bool superset = ds.header.layout() == cs::kSupersetLayout;

  std::vector<cs::FeatureSet> features(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i)
    features[i] = superset ? cs::features_from_superset(ds.feature_row(i), layouts)
                           : cs::FeatureSet{{ds.header.layout(), std::vector<double>(ds.feature_row(i).begin(),
                                                                                      ds.feature_row(i).end())}};
  archive(o.out, o, "infer");
  json solutions = json::array();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto j = cs::to_json(cs::infer(reg, features[i]));
    j["shape_id"] = ds.shape_ids[i];
    solutions.push_back(std::move(j));
  }
  cs::write_json_file(fs::path(o.out) / "solutions.json", solutions);
  std::printf("%zu solutions written\n", ds.size());

  if (!o.shapes.empty()) {
    require_file(o.shapes, "shapes");
    const auto sj = cs::read_json_file(o.shapes);
    std::vector<cs::BoundaryShape> truth;
    for (const auto& e : sj) truth.push_back(e.at("shape").get<cs::BoundaryShape>());
    if (truth.size() != ds.size()) cs::fail(cs::ErrorCode::ShapeMismatch, "shapes file does not match the dataset");
    const auto rep = cs::misclassification_report(reg, features, truth, ds.shape_ids);
    cs::write_json_file(fs::path(o.out) / "misclassification.json", cs::to_json(rep));
    std::printf("%zu of %zu misclassified\n", rep.entries.size(), rep.total);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Divide-and-conquer inverse scattering: classify the obstacle, then regress its boundary"};
  app.require_subcommand(1);
  Options o;

  struct Command {
    const char* name;
    const char* help;
    std::vector<std::string> flags;
    int (*run)(const Options&);
  };
  const std::vector<Command> commands{
      {"generate", "generate a surrogate far-field dataset", {"suite", "scale", "seed", "out", "fixed-lambda", "superset"}, cmd_generate},
      {"train", "train a preset on a dataset",
       {"preset", "data", "out", "seed", "epochs", "lr", "batch", "patience", "min-delta", "clip"}, cmd_train},
      {"evaluate", "evaluate a model on a dataset", {"model", "data", "out"}, cmd_evaluate},
      {"sweep", "noise sweep of a model", {"model", "data", "out", "seed", "noise-levels", "trials"}, cmd_sweep},
      {"reconstruct", "max/min/random boundary reconstructions", {"model", "data", "out", "seed", "curve-points"}, cmd_reconstruct},
      {"gradcheck", "finite-difference gradient check", {"seed"}, cmd_gradcheck},
      {"experiment", "generate, train and evaluate one suite",
       {"suite", "scale", "seed", "out", "data", "epochs", "lr", "batch", "patience", "min-delta", "clip", "noise-levels",
        "trials", "curve-points"},
       cmd_experiment},
      {"registry", "assemble trained models into a registry directory", {"out"}, cmd_registry},
      {"infer", "run the two-stage pipeline on a dataset", {"registry", "data", "out", "shapes"}, cmd_infer},
  };
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_flag(sub, o, "config");
    for (const auto& f : c.flags) add_flag(sub, o, f);
    if (std::string(c.name) == "registry") {
      sub->add_option("--classifier", o.classifier, "classifier model file");
      sub->add_option("--peanut", o.peanut, "peanut regressor model file");
      sub->add_option("--kite", o.kite, "kite regressor model file");
      sub->add_option("--star", o.star, "star regressor model file");
    }
    subs.emplace_back(sub, &c);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kValidation;
  }

  try {
    for (const auto& [sub, cmd] : subs) {
      if (!sub->parsed()) continue;
      merge_config(sub, o);
      return cmd->run(o);
    }
  } catch (const cs::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    switch (e.category()) {
      case cs::ErrorCategory::Numeric: return kNumeric;
      case cs::ErrorCategory::Io: return kIo;
      default: return kValidation;
    }
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidation;
  }
  return kValidation;
}
