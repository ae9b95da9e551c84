#include <catch_amalgamated.hpp>

#include <cstring>

#include "support.hpp"

using namespace circscatter;
using namespace circscatter::nn;
using Catch::Approx;

namespace {

struct SmallProblem {
  NetworkSpec spec;
  TrainingData train, valid;
};

// Peanut regression on (32, 2) with a narrow network; trains in well under a second per epoch.
SmallProblem small_problem(std::size_t n = 240) {
  GenerationSpec g;
  g.classes = {ShapeClass::Peanut};
  g.count = n;
  g.task = Task::Regression;
  g.seed = 21;
  const auto ds = generate_dataset(g);
  const auto split = split_dataset(n, 21);
  const auto fs = Standardizer::fit(ds.features, ds.header.feature_size(), split.train);
  const auto ts = Standardizer::fit(ds.targets, static_cast<std::size_t>(ds.header.P), split.train);
  const auto all = make_training_data(ds, fs, &ts);
  using L = LayerSpec;
  return {{"small", 32, 2, Task::Regression,
           {L::conv(8, 5, 1), L::conv(8, 5, 2), L::bottleneck(4), L::flatten(), L::dense(16, 0.1, 1e-4),
            L::output(5, Activation::Identity)}},
          subset(all, split.train),
          subset(all, split.valid)};
}

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("losses") {
  const Tensor<double> p(2, 3, std::vector<double>{0.7, 0.2, 0.1, 0.1, 0.1, 0.8});
  const Tensor<double> y(2, 3, std::vector<double>{1, 0, 0, 0, 0, 1});
  CHECK(cross_entropy(p, y) == Approx(-(std::log(0.7) + std::log(0.8)) / 2).epsilon(1e-14));
  const Tensor<double> zero(1, 2, std::vector<double>{0.0, 1.0}), hot(1, 2, std::vector<double>{1.0, 0.0});
  CHECK(std::isfinite(cross_entropy(zero, hot)));
  CHECK(cross_entropy(zero, hot) == Approx(-std::log(kProbabilityFloor)));

  const Tensor<double> a(2, 2, std::vector<double>{1, 2, 3, 4}), b(2, 2, std::vector<double>{1, 0, 0, 4});
  CHECK(mse(a, b) == Approx((4.0 + 9.0) / 2).epsilon(1e-15));

  Tensor<double> d;
  const double l = loss_and_gradient<double>(Task::Regression, a, b, 4, &d);
  CHECK(l == Approx(13.0 / 4).epsilon(1e-15));
  CHECK(d(0, 1) == Approx(2.0 * 2 / 4));
  CHECK(d(1, 0) == Approx(2.0 * 3 / 4));
  loss_and_gradient<double>(Task::Classification, p, y, 2, &d);
  CHECK(d(0, 0) == Approx((0.7 - 1.0) / 2));
  CHECK(d(1, 1) == Approx(0.1 / 2));
}

TEST_CASE("global norm clipping") {
  std::vector<double> g{3.0, 4.0};
  CHECK(clip_gradients<double>(g, 1.0) == 5.0);
  CHECK(g[0] == Approx(0.6));
  CHECK(g[1] == Approx(0.8));
  std::vector<double> small{0.3, 0.4};
  clip_gradients<double>(small, 1.0);
  CHECK(small == std::vector<double>{0.3, 0.4});
  CHECK_THROWS_AS(clip_gradients<double>(small, 0.0), Error);
}

TEST_CASE("adam first step") {
  Parameters<double> p;
  p.values = {1.0, -2.0, 0.5};
  p.blocks = {{0, ParamRole::Kernel, 0, 3, 1, 1, 0.0}};
  AdamState<double> st(3);
  const std::vector<double> g{0.5, -3.0, 0.0};
  adam_step<double>(p, g, st, 0.1);
  // After one step m_hat = g and v_hat = g^2, so the update is lr g / (|g| + eps).
  CHECK(p.values[0] == Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-7)).epsilon(1e-12));
  CHECK(p.values[1] == Approx(-2.0 + 0.1 * 3.0 / (3.0 + 1e-7)).epsilon(1e-12));
  CHECK(p.values[2] == 0.5);
  CHECK(p.version == 1);
  CHECK(st.t == 1);
}

TEST_CASE("train config presets") {
  const auto c1 = preset_train_config("ap1");
  CHECK(c1.learning_rate == 1e-5);
  CHECK(c1.batch_size == 64);
  CHECK(c1.patience == 150);
  CHECK(c1.min_delta == 1e-3);
  const auto c10 = preset_train_config("ap10");
  CHECK(c10.clip == 1.0);
  CHECK(c10.learning_rate == 5e-5);
  CHECK_FALSE(preset_train_config("ap7").clip.has_value());
  CHECK_THROWS_AS(preset_train_config("ap9"), Error);
  TrainConfig bad;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("classification report against the oracle") {
  const std::vector<int> truth{0, 0, 0, 1, 1, 2, 2, 2, 2, 1};
  const std::vector<int> pred{0, 1, 0, 1, 1, 2, 0, 2, 2, 2};
  const auto r = classification_report(truth, pred, 3);
  CHECK(r.accuracy == testsupport::oracle_accuracy(truth, pred));
  CHECK(r.accuracy == 0.7);
  for (int k = 0; k < 3; ++k) CHECK(*r.recall[static_cast<std::size_t>(k)] == testsupport::oracle_recall(truth, pred, k));
  CHECK(r.counts[2][0] == 1);
  CHECK(r.confusion[0][1] == Approx(1.0 / 3));
  CHECK(r.support == std::vector<std::size_t>{3, 3, 4});
  const auto missing = classification_report(std::vector<int>{0, 0}, std::vector<int>{0, 1}, 3);
  CHECK_FALSE(missing.recall[2].has_value());
  CHECK(argmax_rows(std::vector<double>{0.1, 0.9, 0.0, 0.5, 0.2, 0.3}, 3) == std::vector<int>{1, 0});
}

TEST_CASE("regression report against the oracle") {
  const std::vector<double> truth{1, 10, 2, 20, 3, 30, 4, 40};
  const std::vector<double> pred{1.5, 9, 2, 21, 2.5, 33, 4, 40};
  const auto r = regression_report(pred, truth, 2);
  CHECK(*r.r2 == Approx(testsupport::oracle_r2(pred, truth, 2)).epsilon(1e-14));
  CHECK(r.rmse == Approx(testsupport::oracle_rmse(pred, truth, 2)).epsilon(1e-14));
  CHECK(r.sample_error[0] == Approx(std::sqrt(0.25 + 1.0)));
  CHECK(*r.param_r2[0] == Approx(1.0 - 0.5 / 5.0));
  const auto perfect = regression_report(truth, truth, 2);
  CHECK(*perfect.r2 == 1.0);
  CHECK(perfect.rmse == 0.0);
  const std::vector<double> flat{1, 1, 1, 1};
  CHECK_FALSE(regression_report(flat, flat, 1).r2.has_value());
}

TEST_CASE("gradient check on every layer kind") {
  using L = LayerSpec;
  const std::vector<NetworkSpec> specs{
      {"conv", 6, 2, Task::Regression, {L::conv(3, 3, 1), L::flatten(), L::output(2, Activation::Identity)}},
      {"strided", 7, 2, Task::Regression, {L::conv(3, 4, 2), L::flatten(), L::output(2, Activation::Identity)}},
      {"attention", 6, 4, Task::Regression, {L::attention(3, 2), L::flatten(), L::output(2, Activation::Identity)}},
      {"bottleneck", 6, 3, Task::Regression, {L::bottleneck(2), L::flatten(), L::output(2, Activation::Identity)}},
      {"dense", 4, 2, Task::Regression, {L::flatten(), L::dense(5, 0.3, 1e-2), L::output(2, Activation::Identity)}},
      {"softmax", 4, 2, Task::Classification, {L::flatten(), L::output(3, Activation::Softmax)}},
      testsupport::tiny_spec(Task::Classification),
      testsupport::tiny_spec(Task::Regression)};
  for (const auto& s : specs) {
    const auto r = grad_check(s, 5);
    INFO(s.name << " max rel " << r.max_rel_error);
    CHECK(r.passed);
  }
}

TEST_CASE("gradient check detects a corrupted gradient") {
  GradCheckOptions opt;
  opt.corrupt = [](std::vector<double>& g) { g[3] += 0.05; };
  const auto r = grad_check(testsupport::tiny_spec(Task::Regression), 5, opt);
  CHECK_FALSE(r.passed);
  CHECK(r.worst_index == 3);
  CHECK(r.worst_layer == 0);
  CHECK_THROWS_AS(grad_check(make_preset("ap1"), 1), Error);
}

TEST_CASE("training is deterministic and thread independent") {
  const auto pb = small_problem();
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.batch_size = 48;
  c.max_epochs = 4;
  c.seed = 3;
  c.shard_size = 16;
  const auto init = init_parameters<float>(pb.spec, 3);
  const auto a = train<float>(pb.spec, init, pb.train, pb.valid, c);
  c.threads = 4;
  const auto b = train<float>(pb.spec, init, pb.train, pb.valid, c);
  CHECK(same_bits(a.params.values, b.params.values));
  REQUIRE(a.history.epochs.size() == b.history.epochs.size());
  for (std::size_t i = 0; i < a.history.epochs.size(); ++i) {
    CHECK(a.history.epochs[i].train_loss == b.history.epochs[i].train_loss);
    CHECK(a.history.epochs[i].valid_loss == b.history.epochs[i].valid_loss);
  }
  c.seed = 4;
  CHECK_FALSE(same_bits(train<float>(pb.spec, init, pb.train, pb.valid, c).params.values, a.params.values));
  // Training reduces the loss.
  CHECK(a.history.epochs.back().train_loss < a.history.epochs.front().train_loss);
}

TEST_CASE("early stopping returns the best snapshot") {
  const auto pb = small_problem();
  TrainConfig c;
  c.learning_rate = 3e-3;
  c.batch_size = 32;
  c.max_epochs = 25;
  c.patience = 4;
  c.min_delta = 1e-3;
  c.seed = 8;
  const auto init = init_parameters<float>(pb.spec, 8);
  const auto res = train<float>(pb.spec, init, pb.train, pb.valid, c);
  const auto& h = res.history;
  double best = h.epochs.front().valid_loss;
  int best_epoch = 1;
  for (const auto& e : h.epochs)
    if (e.valid_loss < best) best = e.valid_loss, best_epoch = e.epoch;
  CHECK(h.best_epoch == best_epoch);
  CHECK(h.best_valid_loss == best);
  const Network<float> net(pb.spec);
  CHECK(evaluate_loss(net, res.params, pb.valid) == best);
  // Re-running for exactly best_epoch epochs reproduces the snapshot.
  c.max_epochs = best_epoch;
  const auto rerun = train<float>(pb.spec, init, pb.train, pb.valid, c);
  CHECK(same_bits(rerun.params.values, res.params.values));
}

TEST_CASE("patience counts epochs without sufficient improvement") {
  const auto pb = small_problem(120);
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.batch_size = 64;
  c.max_epochs = 50;
  c.patience = 2;
  c.min_delta = 1e9;  // nothing after the first epoch counts as an improvement
  const auto res = train<float>(pb.spec, init_parameters<float>(pb.spec, 1), pb.train, pb.valid, c);
  CHECK(res.history.early_stopped);
  CHECK(res.history.epochs.size() == 3);
}

TEST_CASE("epoch callback can stop training") {
  const auto pb = small_problem(120);
  TrainConfig c;
  c.max_epochs = 50;
  int calls = 0;
  const auto res = train<float>(pb.spec, init_parameters<float>(pb.spec, 1), pb.train, pb.valid, c,
                                [&](const EpochRecord&) { return ++calls < 2; });
  CHECK(res.history.epochs.size() == 2);
  CHECK_FALSE(res.history.early_stopped);
}

TEST_CASE("layout mismatches are rejected before training") {
  const auto pb = small_problem(120);
  TrainConfig c;
  c.max_epochs = 1;
  const auto other = make_preset("ap7");
  CHECK_THROWS_AS(train<float>(other, init_parameters<float>(other, 1), pb.train, pb.valid, c), Error);
}

TEST_CASE("noise sweep at level zero equals clean evaluation") {
  const auto pb = small_problem(120);
  const auto p = init_parameters<float>(pb.spec, 2);
  const Network<float> net(pb.spec);
  Standardizer unit;
  unit.mean.assign(5, 0.0);
  unit.std.assign(5, 1.0);
  const auto clean = evaluate_regression(net, p, pb.valid, unit);
  const std::vector<double> levels{0.0, 0.05};
  const auto sweep = noise_sweep(net, p, pb.valid, levels, 1, 3, &unit);
  REQUIRE(sweep.size() == 2);
  CHECK(sweep[0].r2 == Approx(*clean.r2).epsilon(1e-12));
  CHECK(sweep[0].rmse == Approx(clean.rmse).epsilon(1e-12));
  CHECK(sweep[1].rmse != sweep[0].rmse);
  CHECK_THROWS_AS(noise_sweep(net, p, pb.valid, levels, 1, 3, nullptr), Error);
}
