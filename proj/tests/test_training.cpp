#include <doctest.h>

#include <cmath>

#include "cfilter/errors.hpp"
#include "cfilter/gradcheck.hpp"
#include "cfilter/network.hpp"
#include "cfilter/rng.hpp"
#include "cfilter/training.hpp"

using namespace cfilter;

namespace {

ModelSpec small_spec(std::uint64_t seed) {
  ModelSpec s;
  s.layers = {LayerSpec::flat(), LayerSpec::dense(2, 3), LayerSpec::act(ActivationKind::kTanh)};
  s.head_classes = 2;
  s.seed = seed;
  return s;
}

// Two Gaussian clouds far apart on the first axis.
LabeledSet separable(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<double> x(n * 2);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(i % 2);
    x[2 * i] = (y[i] ? 2.0 : -2.0) + 0.3 * rng.normal();
    x[2 * i + 1] = rng.normal();
  }
  return {Tensor({n, 2}, std::move(x)), std::move(y)};
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.learning_rate = std::nan("");
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("zero learning rate leaves parameters and ledger untouched") {
  auto m = build_model(small_spec(1), {2});
  const auto before = m.snapshot(all_components());
  auto ledger = TelemetryLedger::for_model(m, all_components());
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  sgd_step(m, separable(2, 8), cfg, &ledger);
  CHECK(m.snapshot(all_components()) == before);
  CHECK(ledger.steps == 1);
  for (double s : ledger.sum_abs_delta) CHECK(s == 0.0);
}

TEST_CASE("single step moves each weight by lr * |grad|") {
  auto m = build_model(small_spec(3), {2});
  const auto batch = separable(4, 6);
  auto probe = m;
  set_trainable(probe, all_components());
  batch_loss(probe, batch, LossKind::kCrossEntropy).backward();
  std::vector<double> grads;
  for (auto id : probe.param_ids()) {
    const auto& l = probe.layer(id.layer);
    const auto wn = l.weight.numel();
    grads.push_back(id.offset < wn ? l.weight.grad()[id.offset] : l.bias.grad()[id.offset - wn]);
  }

  auto ledger = TelemetryLedger::for_model(m, all_components());
  TrainConfig cfg;
  cfg.learning_rate = 0.125;
  const auto before = m.snapshot(all_components());
  sgd_step(m, batch, cfg, &ledger);
  const auto after = m.snapshot(all_components());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    CHECK(after[i] == before[i] - 0.125 * grads[i]);
    CHECK(ledger.sum_abs_delta[i] == std::abs(after[i] - before[i]));
  }
}

TEST_CASE("ledger equals the snapshot-diff oracle bit for bit") {
  for (double momentum : {0.0, 0.9}) {
    CAPTURE(momentum);
    auto m = build_model(small_spec(5), {2});
    const auto data = separable(6, 40);
    TrainConfig cfg;
    cfg.learning_rate = 0.3;
    cfg.momentum = momentum;
    const ComponentSet tracked{Component::kClassifier};
    auto ledger = TelemetryLedger::for_model(m, tracked);
    std::vector<double> oracle(m.param_count(tracked), 0.0);
    Sgd opt(cfg);
    Rng rng(7);
    for (int step = 0; step < 50; ++step) {
      std::vector<std::size_t> idx(5);
      for (auto& i : idx) i = rng.below(data.size());
      const auto before = m.snapshot(tracked);
      opt.step(m, data.subset(idx), &ledger);
      const auto after = m.snapshot(tracked);
      for (std::size_t i = 0; i < oracle.size(); ++i) oracle[i] += std::abs(after[i] - before[i]);
    }
    CHECK(ledger.steps == 50);
    CHECK(ledger.sum_abs_delta == oracle);
    CHECK(ledger.ids == m.param_ids(tracked));
    const auto pi = finalize_pi(ledger);
    for (std::size_t i = 0; i < oracle.size(); ++i) CHECK(pi.pi[i] == oracle[i] / 50.0);
  }
}

TEST_CASE("finalize_pi arithmetic and errors") {
  TelemetryLedger l;
  l.ids = {{1, 0}, {1, 1}};
  l.sum_abs_delta = {2.0, 0.0};
  l.steps = 4;
  const auto pi = finalize_pi(l);
  CHECK(pi.pi == std::vector<double>{0.5, 0.0});
  CHECK(pi.steps == 4);
  l.steps = 0;
  CHECK_THROWS_AS(finalize_pi(l), Error);
}

TEST_CASE("replaying a step sequence keeps pi") {
  auto m = build_model(small_spec(8), {2});
  const auto batch = separable(9, 10);
  TrainConfig cfg;
  cfg.learning_rate = 0.2;
  const ComponentSet tracked{Component::kClassifier};

  auto run = [&](int repeats) {
    auto ledger = TelemetryLedger::for_model(m, tracked);
    for (int r = 0; r < repeats; ++r) {
      Model copy = m;
      for (int s = 0; s < 3; ++s) sgd_step(copy, batch, cfg, &ledger);
    }
    return finalize_pi(ledger);
  };
  const auto once = run(1);
  const auto twice = run(2);
  CHECK(twice.steps == 2 * once.steps);
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(twice.pi[i] == doctest::Approx(once.pi[i]).epsilon(1e-14));
}

TEST_CASE("pi scales with the learning rate for a single step") {
  const auto batch = separable(10, 12);
  auto pi_for = [&](double lr) {
    auto m = build_model(small_spec(11), {2});
    auto ledger = TelemetryLedger::for_model(m, {Component::kClassifier});
    TrainConfig cfg;
    cfg.learning_rate = lr;
    sgd_step(m, batch, cfg, &ledger);
    return finalize_pi(ledger);
  };
  const auto base = pi_for(0.01);
  for (double c : {0.5, 3.0}) {
    const auto scaled = pi_for(0.01 * c);
    for (std::size_t i = 0; i < base.size(); ++i) {
      CHECK(scaled.pi[i] == doctest::Approx(c * base.pi[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("zero epochs is a no-op") {
  auto m = build_model(small_spec(1), {2});
  const auto before = m.snapshot(all_components());
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.batch_size = 4;
  auto r = train(m, separable(1, 8), cfg, {Component::kClassifier});
  CHECK(r.ledger.steps == 0);
  CHECK(r.epoch_loss.empty());
  CHECK(m.snapshot(all_components()) == before);
}

TEST_CASE("training is deterministic") {
  auto a = build_model(small_spec(2), {2});
  auto b = a;
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 3;
  cfg.shuffle_seed = 4;
  const auto data = separable(3, 64);
  auto ra = train(a, data, cfg, {Component::kClassifier});
  auto rb = train(b, data, cfg, {Component::kClassifier});
  CHECK(checkpoint_bytes(a) == checkpoint_bytes(b));
  CHECK(ra.ledger == rb.ledger);
  CHECK(ra.epoch_loss == rb.epoch_loss);
  CHECK(ra.ledger.windows.size() == 3);
}

TEST_CASE("separable toy reaches perfect training accuracy with a falling loss") {
  std::size_t increases = 0, pairs = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto m = build_model(small_spec(seed), {2});
    const auto data = separable(seed + 50, 200);
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.batch_size = 20;
    cfg.epochs = 50;
    cfg.shuffle_seed = seed;
    auto r = train(m, data, cfg, {Component::kClassifier});
    CHECK(evaluate(m, data) == 1.0);
    for (std::size_t e = 2; e < r.epoch_loss.size(); ++e) {
      ++pairs;
      increases += r.epoch_loss[e] > r.epoch_loss[e - 1];
    }
  }
  CHECK(static_cast<double>(increases) <= 0.05 * static_cast<double>(pairs));
}

TEST_CASE("train rejects bad inputs") {
  auto m = build_model(small_spec(1), {2});
  TrainConfig cfg;
  cfg.batch_size = 4;
  auto data = separable(1, 8);
  data.labels[3] = 2;
  CHECK_THROWS_AS(train(m, data, cfg, {Component::kClassifier}), ConfigError);
  cfg.batch_size = 9;
  CHECK_THROWS_AS(train(m, separable(1, 8), cfg, {Component::kClassifier}), ConfigError);
}

TEST_CASE("frozen parameters never change during training") {
  auto m = build_model(small_spec(4), {2});
  set_trainable(m, {Component::kHead});
  const auto cls = m.snapshot({Component::kClassifier});
  TrainConfig cfg;
  cfg.batch_size = 10;
  cfg.epochs = 4;
  train(m, separable(5, 50), cfg, {Component::kClassifier});
  CHECK(m.snapshot({Component::kClassifier}) == cls);
}

TEST_CASE("predict breaks ties toward the smaller class") {
  auto m = build_model(small_spec(1), {2});
  for (auto id : m.param_ids()) m.set_param(id, 0.0);
  const auto p = predict(m, separable(1, 6).x);
  for (int c : p) CHECK(c == 0);
  LabeledSet balanced = separable(1, 6);
  CHECK(evaluate(m, balanced) == 0.5);
}

TEST_CASE("ledger CSV layout") {
  TelemetryLedger l;
  l.ids = {{1, 0}, {1, 1}};
  l.sum_abs_delta = {2.0, 0.5};
  l.steps = 4;
  CHECK(ledger_csv(l) == "param_layer,param_offset,sum_abs_delta,n,pi\n1,0,2,4,0.5\n1,1,0.5,4,0.125\n");
}
