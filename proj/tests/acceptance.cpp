// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any fails.
// `--quick` skips the three training criteria (reported as SKIP) for fast iteration.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>

#include "support.hpp"

using namespace circscatter;
using namespace circscatter::nn;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradTol = 1e-4;
constexpr double kGradBudgetSec = 120.0;
constexpr int kShiftTrials = 100;
constexpr double kShiftConvTol = 1e-10;
constexpr double kShiftAttentionTol = 1e-6;
constexpr double kShiftBudgetSec = 60.0;
// 27000 samples, 280 epochs: about 37 minutes on one core. At 9000 and 18000 samples the
// star recall stayed near 0.95 and 0.97 after 300 epochs.
constexpr double kClassScale = 0.3;
constexpr int kClassMaxEpochs = 280;
// The preset rate (1e-5) barely moves the classifier within the epoch cap; this run uses a
// larger rate with the rest of the preset unchanged. 1e-3 was tried and did worse.
constexpr double kClassLearningRate = 3e-4;
constexpr double kMinAccuracy = 0.95;
constexpr double kMinStarRecall = 0.98;
constexpr double kPeanutScale = 1.0 / 3.0;
constexpr double kMinR2 = 0.90;
constexpr double kTrainBudgetSec = 45.0 * 60.0;
constexpr double kMonotoneTol = 0.005;
constexpr double kMetricTol = 1e-12;
constexpr std::uint64_t kSeed = 7;

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%2d] %-4s %s: %s\n", id, pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += !pass;
}

void skip(int id, const std::string& name) {
  std::printf("[%2d] SKIP %s: --quick\n", id, name.c_str());
  std::fflush(stdout);
}

template <class... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void run_guarded(int id, const std::string& name, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(id, name, false, std::string("exception: ") + e.what());
  }
}

void gradient_check() {
  const auto t0 = Clock::now();
  using L = LayerSpec;
  const std::vector<NetworkSpec> specs{
      {"conv", 6, 2, Task::Regression, {L::conv(3, 3, 1), L::flatten(), L::output(2, Activation::Identity)}},
      {"conv_strided", 7, 2, Task::Regression, {L::conv(3, 4, 2), L::flatten(), L::output(2, Activation::Identity)}},
      {"attention", 6, 4, Task::Regression, {L::attention(3, 2), L::flatten(), L::output(2, Activation::Identity)}},
      {"bottleneck", 6, 3, Task::Regression, {L::bottleneck(2), L::flatten(), L::output(2, Activation::Identity)}},
      {"dense", 4, 2, Task::Regression, {L::flatten(), L::dense(5, 0.3, 1e-2), L::output(2, Activation::Identity)}},
      {"softmax", 4, 2, Task::Classification, {L::flatten(), L::output(3, Activation::Softmax)}},
      testsupport::tiny_spec(Task::Classification),
      testsupport::tiny_spec(Task::Regression)};
  double worst = 0.0;
  std::string worst_name;
  std::size_t params = 0;
  for (const auto& s : specs) {
    GradCheckOptions opt;
    opt.tolerance = kGradTol;
    const auto r = grad_check(s, kSeed, opt);
    params += r.parameters;
    if (r.max_rel_error >= worst) worst = r.max_rel_error, worst_name = s.name;
  }
  const double sec = since(t0);
  report(1, "gradient check", worst < kGradTol && sec < kGradBudgetSec,
         fmt("%zu nets, %zu params, max rel err %.3g (%s) < %.0e, %.1fs < %.0fs", specs.size(), params, worst,
             worst_name.c_str(), kGradTol, sec, kGradBudgetSec));
}

void shift_behaviour() {
  const auto t0 = Clock::now();
  Rng rng = make_rng(kSeed, 0x5417);
  double conv = 0.0, att = 0.0;
  for (int i = 0; i < kShiftTrials; ++i) {
    const auto t = testsupport::shift_trial(rng);
    conv = std::max(conv, t.conv_error);
    att = std::max(att, t.attention_error);
  }
  const double sec = since(t0);
  report(2, "shift equivariance", conv < kShiftConvTol && att < kShiftAttentionTol && sec < kShiftBudgetSec,
         fmt("%d configs, conv err %.2g < %.0e, attention err %.2g < %.0e, %.1fs < %.0fs", kShiftTrials, conv,
             kShiftConvTol, att, kShiftAttentionTol, sec, kShiftBudgetSec));
}

void preset_shapes() {
  // The inter-layer shapes and counts are static_asserts in the library; this line repeats
  // the count check at run time through the public spec API.
  const std::pair<const char*, std::size_t> expected[]{{"ap1", presets::kAp1Params},
                                                       {"ap2", presets::kAp2Params},
                                                       {"ap4", presets::kAp4Params},
                                                       {"ap7", presets::kAp7Params},
                                                       {"ap10", presets::kAp10Params}};
  bool ok = true;
  std::string detail;
  for (const auto& [name, count] : expected) {
    const auto spec = make_preset(name);
    const auto blocks = param_layout(spec);
    const std::size_t laid_out = blocks.back().offset + blocks.back().size;
    ok = ok && spec.param_count() == count && laid_out == count;
    detail += fmt("%s=%zu ", name, spec.param_count());
  }
  report(3, "preset shapes and parameter counts", ok, detail + "(static_asserts compiled)");
}

void length_law() {
  std::size_t cases = 0, bad = 0;
  for (int T = 1; T <= 256; ++T)
    for (int K = 1; K <= 31; ++K)
      for (int S : {1, 2, 4}) {
        const Tensor<double> x(static_cast<std::size_t>(T), 1, 1.0);
        const std::vector<double> W(static_cast<std::size_t>(K), 1.0), b(1, 0.0);
        const auto y = circular_conv_forward<double>(x, W, b, K, S);
        const auto expect = static_cast<std::size_t>((T + S - 1) / S);
        ++cases;
        // Every output sums K ones from the periodic extension.
        bool good = y.rows() == expect;
        for (std::size_t i = 0; good && i < y.rows(); ++i) good = y(i, 0) == static_cast<double>(K);
        bad += !good;
      }
  report(4, "conv output length ceil(T/S)", bad == 0, fmt("%zu cases, %zu mismatches", cases, bad));
}

void conv_oracle() {
  const Tensor<double> x(4, 1, std::vector<double>{1, 2, 3, 4});
  const std::vector<double> W{1, 0, -1}, b{0};
  const auto y = circular_conv_forward<double>(x, W, b, 3, 1);
  const std::vector<double> expect{2, -2, -2, 2};
  const std::vector<double> got(y.values().begin(), y.values().end());
  report(5, "conv oracle [1,2,3,4]*[1,0,-1]", got == expect,
         fmt("got [%g, %g, %g, %g]", got[0], got[1], got[2], got[3]));
}

void metric_oracles() {
  Rng rng = make_rng(kSeed, 0x3E7);
  double worst = 0.0;
  auto track = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 20 + rng() % 200;
    std::vector<int> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng() % 3);
      pred[i] = rng() % 4 == 0 ? static_cast<int>(rng() % 3) : truth[i];
    }
    const auto r = classification_report(truth, pred, 3);
    track(r.accuracy, testsupport::oracle_accuracy(truth, pred));
    double weighted = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      if (!r.recall[k]) continue;
      track(*r.recall[k], testsupport::oracle_recall(truth, pred, static_cast<int>(k)));
      weighted += *r.recall[k] * static_cast<double>(r.support[k]) / static_cast<double>(n);
      double row = 0.0;
      for (double v : r.confusion[k]) row += v;
      track(row, 1.0);
    }
    track(r.accuracy, weighted);

    const std::size_t dim = 1 + rng() % 6;
    std::vector<double> yt(n * dim), yp(n * dim), ymean(n * dim);
    for (std::size_t i = 0; i < yt.size(); ++i) {
      yt[i] = uniform(rng, -2, 2);
      yp[i] = yt[i] + uniform(rng, -0.3, 0.3);
    }
    for (std::size_t j = 0; j < dim; ++j) {
      double m = 0.0;
      for (std::size_t i = 0; i < n; ++i) m += yt[i * dim + j];
      for (std::size_t i = 0; i < n; ++i) ymean[i * dim + j] = m / static_cast<double>(n);
    }
    const auto rr = regression_report(yp, yt, dim);
    track(*rr.r2, testsupport::oracle_r2(yp, yt, dim));
    track(rr.rmse, testsupport::oracle_rmse(yp, yt, dim));
    track(*regression_report(ymean, yt, dim).r2, 0.0);
    const auto perfect = regression_report(yt, yt, dim);
    track(*perfect.r2, 1.0);
    track(perfect.rmse, 0.0);
  }
  // Hand-computed case: truth (1,2,3), prediction (1,2,4): SSE 1, SST 2, R2 = 0.5, RMSE = 1/sqrt(3).
  const std::vector<double> t{1, 2, 3}, p{1, 2, 4};
  const auto hand = regression_report(p, t, 1);
  track(*hand.r2, 0.5);
  track(hand.rmse, 1.0 / std::sqrt(3.0));
  report(9, "metric oracles", worst <= kMetricTol,
         fmt("R2 mean=0, R2 perfect=1, RMSE perfect=0, confusion rows=1, accuracy=weighted recall, oracle match; "
             "max deviation %.2g <= %.0e",
             worst, kMetricTol));
}

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

bool same_history(const TrainHistory& a, const TrainHistory& b) {
  if (a.epochs.size() != b.epochs.size() || a.best_epoch != b.best_epoch) return false;
  for (std::size_t i = 0; i < a.epochs.size(); ++i)
    if (std::memcmp(&a.epochs[i].train_loss, &b.epochs[i].train_loss, sizeof(double)) != 0 ||
        std::memcmp(&a.epochs[i].valid_loss, &b.epochs[i].valid_loss, sizeof(double)) != 0)
      return false;
  return true;
}

std::string model_bytes(const ExperimentResult& r) {
  std::stringstream ss;
  write_model(ss, r.model.spec, r.model.params);
  return ss.str();
}

void determinism() {
  bool data_ok = true;
  for (Suite s : {Suite::Classification, Suite::StarVariable}) {
    auto g = suite_generation(s, 0.002, kSeed, 1);
    std::stringstream sa, sb, sc;
    write_dataset_binary(sa, generate_dataset(g));
    write_dataset_binary(sb, generate_dataset(g));
    g.threads = 3;
    write_dataset_binary(sc, generate_dataset(g));
    data_ok = data_ok && sa.str() == sb.str() && sa.str() == sc.str();
  }
  auto cfg = default_experiment(Suite::Kite);
  cfg.scale = 0.01;
  cfg.seed = kSeed;
  cfg.train.max_epochs = 3;
  cfg.noise_trials = 1;
  cfg.threads = 1;
  const auto r1 = run_experiment(cfg);
  const auto r2 = run_experiment(cfg);
  cfg.threads = 3;
  const auto r3 = run_experiment(cfg);
  const bool hist_ok = same_history(r1.history, r2.history) && same_history(r1.history, r3.history);
  const bool model_ok = model_bytes(r1) == model_bytes(r2) && model_bytes(r1) == model_bytes(r3);
  report(10, "determinism", data_ok && hist_ok && model_ok,
         fmt("datasets %s, histories %s, models %s (two single-threaded runs, plus a 3-thread run)",
             data_ok ? "identical" : "differ", hist_ok ? "identical" : "differ", model_ok ? "identical" : "differ"));
}

void early_stopping_contract() {
  // Validation rows repeat the training features with targets scaled by one half. Starting
  // near zero output, predictions approach the training targets, so the validation loss
  // falls until they pass the halfway point and rises afterwards.
  GenerationSpec g = suite_generation(Suite::Peanut, 0.01, kSeed);
  const auto ds = generate_dataset(g);
  const auto fs_ = Standardizer::fit_all(ds.features, ds.header.feature_size());
  const auto ts = Standardizer::fit_all(ds.targets, static_cast<std::size_t>(ds.header.P));
  const auto train_d = make_training_data(ds, fs_, &ts);
  auto valid_d = train_d;
  for (auto& v : valid_d.targets) v *= 0.5;
  // No dropout or L2 and one full batch per epoch keep the trajectory smooth.
  using L = LayerSpec;
  const NetworkSpec spec{"es", static_cast<int>(ds.header.T0), static_cast<int>(ds.header.C0), Task::Regression,
                         {L::flatten(), L::dense(16), L::output(ds.header.P, Activation::Identity)}};
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.batch_size = train_d.size();
  tc.patience = 8;
  tc.max_epochs = 2000;
  tc.seed = kSeed;
  const auto init = init_parameters<float>(spec, kSeed);
  const auto res = train<float>(spec, init, train_d, valid_d, tc);
  const auto& h = res.history;
  double hist_min = h.epochs.front().valid_loss;
  int k = 1;
  for (const auto& e : h.epochs)
    if (e.valid_loss < hist_min) hist_min = e.valid_loss, k = e.epoch;
  bool worsening = static_cast<int>(h.epochs.size()) > k;
  for (std::size_t i = static_cast<std::size_t>(k); i < h.epochs.size(); ++i)
    worsening = worsening && h.epochs[i].valid_loss > h.epochs[i - 1].valid_loss;
  const Network<float> net(spec);
  const double returned = evaluate_loss(net, res.params, valid_d);
  tc.max_epochs = k;
  const auto replay = train<float>(spec, init, train_d, valid_d, tc);
  const bool snapshot_ok = same_bits(replay.params.values, res.params.values);
  const bool loss_ok = returned == hist_min && h.best_valid_loss == hist_min && h.best_epoch == k;
  report(11, "early-stopping contract", worsening && snapshot_ok && loss_ok && h.early_stopped,
         fmt("k=%d, %zu epochs run, valid loss strictly worse after k: %s, snapshot %s epoch-k weights, "
             "history min %.17g %s returned %.17g",
             k, h.epochs.size(), worsening ? "yes" : "no", snapshot_ok ? "equals" : "differs from", hist_min,
             returned == hist_min ? "==" : "!=", returned));
}

std::vector<NoiseLevelResult> classification_sweep, peanut_sweep;
const std::vector<double> kSweepLevels{0.0, 0.005, 0.01, 0.02, 0.05};

void classification_run() {
  auto cfg = default_experiment(Suite::Classification);
  cfg.scale = kClassScale;
  cfg.seed = kSeed;
  cfg.train.learning_rate = kClassLearningRate;
  cfg.train.max_epochs = kClassMaxEpochs;
  cfg.noise_levels = kSweepLevels;
  cfg.noise_trials = 5;
  cfg.threads = thread_budget();
  cfg.out_dir = "acceptance_artifacts/classification";
  const auto res = run_experiment(cfg);
  classification_sweep = res.sweep;
  const auto& c = *res.classification;
  const double star = c.recall[2].value_or(0.0);
  report(6, "classification accuracy and star recall",
         c.accuracy >= kMinAccuracy && star >= kMinStarRecall && res.seconds <= kTrainBudgetSec,
         fmt("N=%zu, %zu epochs (best %d), lr %.0e, test acc %.4f >= %.2f, star recall %.4f >= %.2f, %.0fs <= %.0fs",
             res.split.train.size() + res.split.valid.size() + res.split.test.size(), res.history.epochs.size(),
             res.history.best_epoch, kClassLearningRate, c.accuracy, kMinAccuracy, star, kMinStarRecall, res.seconds,
             kTrainBudgetSec));
}

void peanut_run() {
  auto cfg = default_experiment(Suite::Peanut);
  cfg.scale = kPeanutScale;
  cfg.seed = kSeed;
  cfg.noise_levels = kSweepLevels;
  cfg.noise_trials = 5;
  cfg.threads = thread_budget();
  cfg.out_dir = "acceptance_artifacts/peanut";
  const auto res = run_experiment(cfg);
  peanut_sweep = res.sweep;
  const double r2 = res.regression->r2.value_or(-1.0);
  report(7, "peanut regression R2", r2 >= kMinR2 && res.seconds <= kTrainBudgetSec,
         fmt("N=%zu, %zu epochs (best %d), test R2 %.4f >= %.2f, rmse %.4g, %.0fs <= %.0fs",
             res.split.train.size() + res.split.valid.size() + res.split.test.size(), res.history.epochs.size(),
             res.history.best_epoch, r2, kMinR2, res.regression->rmse, res.seconds, kTrainBudgetSec));
}

void noise_monotonicity() {
  if (classification_sweep.size() != kSweepLevels.size() || peanut_sweep.size() != kSweepLevels.size()) {
    report(8, "noise monotonicity", false, "training runs did not produce sweeps");
    return;
  }
  bool ok = true;
  std::string acc = "acc", r2 = "R2";
  for (std::size_t i = 0; i < kSweepLevels.size(); ++i) {
    acc += fmt(" %.4f", classification_sweep[i].accuracy);
    r2 += fmt(" %.4f", peanut_sweep[i].r2);
    if (i > 0) {
      ok = ok && classification_sweep[i].accuracy <= classification_sweep[i - 1].accuracy + kMonotoneTol;
      ok = ok && peanut_sweep[i].r2 <= peanut_sweep[i - 1].r2 + kMonotoneTol;
    }
  }
  report(8, "noise monotonicity", ok, acc + "; " + r2 + fmt(" (levels 0..0.05, 5 draws, tol %.3f)", kMonotoneTol));
}

}  // namespace

int main(int argc, char** argv) {
  const bool quick = argc > 1 && std::strcmp(argv[1], "--quick") == 0;
  const auto t0 = Clock::now();
  run_guarded(1, "gradient check", gradient_check);
  run_guarded(2, "shift equivariance", shift_behaviour);
  run_guarded(3, "preset shapes and parameter counts", preset_shapes);
  run_guarded(4, "conv output length ceil(T/S)", length_law);
  run_guarded(5, "conv oracle [1,2,3,4]*[1,0,-1]", conv_oracle);
  if (quick) {
    skip(6, "classification accuracy and star recall");
    skip(7, "peanut regression R2");
    skip(8, "noise monotonicity");
  } else {
    fs::create_directories("acceptance_artifacts");
    run_guarded(6, "classification accuracy and star recall", classification_run);
    run_guarded(7, "peanut regression R2", peanut_run);
    run_guarded(8, "noise monotonicity", noise_monotonicity);
  }
  run_guarded(9, "metric oracles", metric_oracles);
  run_guarded(10, "determinism", determinism);
  run_guarded(11, "early-stopping contract", early_stopping_contract);
  std::printf("acceptance: %d failure(s), %.0fs total\n", failures, since(t0));
  return failures == 0 ? 0 : 1;
}
