#include <doctest.h>

#include <cmath>
#include <fstream>

#include "cfilter/errors.hpp"
#include "cfilter/gradcheck.hpp"
#include "cfilter/network.hpp"
#include "cfilter/ops.hpp"
#include "cfilter/rng.hpp"
#include "cfilter/training.hpp"
#include "scratch_dir.hpp"

using namespace cfilter;

namespace {

Tensor random_batch(std::uint64_t seed, const Shape& shape) {
  Rng rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor(shape, std::move(v));
}

ModelSpec mlp_spec(std::uint64_t seed) {
  ModelSpec s;
  s.layers = {LayerSpec::flat(), LayerSpec::dense(4, 6), LayerSpec::act(ActivationKind::kRelu),
              LayerSpec::dense(6, 5), LayerSpec::act(ActivationKind::kTanh)};
  s.head_classes = 3;
  s.seed = seed;
  return s;
}

ModelSpec conv_spec(std::uint64_t seed) {
  ModelSpec s;
  s.layers = {LayerSpec::conv(1, 2, 3), LayerSpec::act(ActivationKind::kRelu),
              LayerSpec::pool2d(PoolKind::kMax, 2), LayerSpec::flat(),
              LayerSpec::dense(18, 4), LayerSpec::act(ActivationKind::kSigmoid)};
  s.head_classes = 2;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("dense model parameter count and determinism") {
  ModelSpec s;
  s.layers = {LayerSpec::dense(4, 2)};
  s.split_index = 0;
  s.seed = 7;
  CHECK_THROWS_AS(build_model(s, {4}), ConfigError);

  s.layers = {LayerSpec::flat(), LayerSpec::dense(4, 2)};
  s.split_index.reset();
  auto a = build_model(s, {4});
  auto b = build_model(s, {4});
  CHECK(a.layer(1).param_count() == 10);
  CHECK(a.snapshot(all_components()) == b.snapshot(all_components()));
  CHECK(checkpoint_bytes(a) == checkpoint_bytes(b));
}

TEST_CASE("component partition follows the split") {
  auto m = build_model(mlp_spec(1), {4});
  // flatten | dense relu dense tanh | head
  CHECK(m.spec().resolved_split() == 1);
  const auto total = m.param_count();
  CHECK(total == m.param_count({Component::kRepresentation}) +
                     m.param_count({Component::kClassifier}) + m.param_count({Component::kHead}));
  CHECK(m.param_count({Component::kClassifier}) == 4 * 6 + 6 + 6 * 5 + 5);
  CHECK(m.param_count({Component::kHead}) == 5 * 3 + 3);

  auto c = build_model(conv_spec(1), {1, 8, 8});
  CHECK(c.spec().resolved_split() == 4);
  CHECK(c.param_count({Component::kRepresentation}) == 2 * 9 + 2);
  for (auto id : c.param_ids({Component::kRepresentation})) CHECK(id.layer < 4);

  const auto ids = c.param_ids();
  for (std::size_t i = 1; i < ids.size(); ++i) CHECK(ids[i - 1] < ids[i]);
}

TEST_CASE("shape chain matches hand arithmetic") {
  // 1x8x8 -conv3-> 2x6x6 -pool2-> 2x3x3 -flatten-> 18 -> 4 -> head 2
  const auto shapes = infer_shapes(conv_spec(0), {1, 8, 8});
  REQUIRE(shapes.size() == 7);
  CHECK(shapes[0] == Shape{2, 6, 6});
  CHECK(shapes[2] == Shape{2, 3, 3});
  CHECK(shapes[3] == Shape{18});
  CHECK(shapes[4] == Shape{4});
  CHECK(shapes[6] == Shape{2});
  auto m = build_model(conv_spec(0), {1, 8, 8});
  CHECK(forward(m, random_batch(1, {3, 1, 8, 8})).shape() == Shape{3, 2});

  auto bad = conv_spec(0);
  bad.layers[4] = LayerSpec::dense(20, 4);
  CHECK_THROWS_AS(infer_shapes(bad, {1, 8, 8}), ShapeError);
  CHECK_THROWS_AS(forward(m, random_batch(1, {3, 1, 7, 7})), ShapeError);
}

TEST_CASE("forward matches a hand-rolled two-layer oracle") {
  ModelSpec s;
  s.layers = {LayerSpec::flat(), LayerSpec::dense(3, 4), LayerSpec::act(ActivationKind::kRelu)};
  s.head_classes = 2;
  s.seed = 5;
  auto m = build_model(s, {3});
  for (auto id : m.param_ids()) m.set_param(id, std::sin(1.0 + id.layer * 10 + id.offset));
  auto x = random_batch(3, {2, 3});
  auto logits = forward(m, x);
  const auto& w1 = m.layer(1).weight;
  const auto& b1 = m.layer(1).bias;
  const auto& w2 = m.layer(3).weight;
  const auto& b2 = m.layer(3).bias;
  for (std::size_t n = 0; n < 2; ++n) {
    double h[4];
    for (std::size_t j = 0; j < 4; ++j) {
      double a = b1.at(j);
      for (std::size_t i = 0; i < 3; ++i) a += x.at(n * 3 + i) * w1.at(i * 4 + j);
      h[j] = a > 0 ? a : 0;
    }
    for (std::size_t k = 0; k < 2; ++k) {
      double z = b2.at(k);
      for (std::size_t j = 0; j < 4; ++j) z += h[j] * w2.at(j * 2 + k);
      CHECK(std::abs(logits.at(n * 2 + k) - z) < 1e-12);
    }
  }
}

TEST_CASE("forward is batch independent and zero parameters give zero logits") {
  auto m = build_model(conv_spec(3), {1, 8, 8});
  auto x = random_batch(4, {4, 1, 8, 8});
  auto all = forward(m, x);
  for (std::size_t n = 0; n < 4; ++n) {
    std::vector<double> one(x.values().begin() + n * 64, x.values().begin() + (n + 1) * 64);
    auto single = forward(m, Tensor({1, 1, 8, 8}, one));
    CHECK(single.at(0) == all.at(n * 2));
    CHECK(single.at(1) == all.at(n * 2 + 1));
  }

  ModelSpec s = mlp_spec(0);
  s.layers[4] = LayerSpec::act(ActivationKind::kRelu);
  auto z = build_model(s, {4});
  for (auto id : z.param_ids()) z.set_param(id, 0.0);
  const auto logits = forward(z, random_batch(5, {3, 4}));
  for (double v : logits.values()) CHECK(v == 0.0);
}

TEST_CASE("replace_head keeps representation and classifier") {
  auto m = build_model(mlp_spec(2), {4});
  const ComponentSet body{Component::kRepresentation, Component::kClassifier};
  auto same = replace_head(m, 3, 99);
  CHECK(same.snapshot(body) == m.snapshot(body));
  CHECK(same.param_ids(body) == m.param_ids(body));

  auto five = replace_head(m, 5, 99);
  CHECK(five.num_classes() == 5);
  CHECK(forward(five, random_batch(1, {2, 4})).shape() == Shape{2, 5});
  CHECK(five.snapshot(body) == m.snapshot(body));
  CHECK(five.param_ids(body) == m.param_ids(body));

  auto twice = replace_head(replace_head(m, 2, 4), 2, 4);
  CHECK(twice.snapshot(all_components()) == replace_head(m, 2, 4).snapshot(all_components()));
  CHECK(m.num_classes() == 3);
}

TEST_CASE("model copies are deep") {
  auto m = build_model(mlp_spec(2), {4});
  Model copy = m;
  const ParamId id{1, 0};
  const double before = m.param(id);
  copy.set_param(id, before + 1.0);
  CHECK(m.param(id) == before);
}

TEST_CASE("set_trainable freezes the representation") {
  auto m = build_model(conv_spec(6), {1, 8, 8});
  LabeledSet batch{random_batch(7, {6, 1, 8, 8}), {0, 1, 1, 0, 1, 0}};
  set_trainable(m, {Component::kClassifier, Component::kHead});
  const auto rep = m.snapshot({Component::kRepresentation});
  const auto cls = m.snapshot({Component::kClassifier});
  TrainConfig cfg;
  cfg.learning_rate = 0.5;
  sgd_step(m, batch, cfg);
  CHECK(m.snapshot({Component::kRepresentation}) == rep);
  CHECK(m.snapshot({Component::kClassifier}) != cls);

  set_trainable(m, all_components());
  batch_loss(m, batch, LossKind::kCrossEntropy).backward();
  for (std::size_t i = 0; i < m.layer_count(); ++i) {
    if (m.layer(i).has_params()) CHECK(m.layer(i).weight.has_grad());
  }
  CHECK_THROWS_AS(set_trainable(m, {}), ConfigError);
}

TEST_CASE("head-only training leaves classifier telemetry at zero") {
  auto m = build_model(mlp_spec(8), {4});
  set_trainable(m, {Component::kHead});
  LabeledSet data{random_batch(9, {10, 4}), {0, 1, 2, 0, 1, 2, 0, 1, 2, 0}};
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.epochs = 1;
  auto r = train(m, data, cfg, {Component::kClassifier});
  CHECK(r.ledger.steps == 5);
  for (double p : finalize_pi(r.ledger).pi) CHECK(p == 0.0);
}

TEST_CASE("checkpoints round-trip and reject damage") {
  ScratchDir dir("checkpoint");
  auto m = build_model(conv_spec(4), {1, 8, 8});
  save_checkpoint(m, dir.file("m.cfm"));
  auto back = load_checkpoint(dir.file("m.cfm"));
  CHECK(back.spec() == m.spec());
  CHECK(back.input_shape() == m.input_shape());
  CHECK(checkpoint_bytes(back) == checkpoint_bytes(m));
  CHECK(spec_from_text(spec_to_text(m.spec())) == m.spec());

  const auto bytes = checkpoint_bytes(m);
  {
    std::ofstream out(dir.file("cut.cfm"), std::ios::binary);
    out << bytes.substr(0, bytes.size() - 5);
  }
  CHECK_THROWS_AS(load_checkpoint(dir.file("cut.cfm")), FormatError);
  {
    std::ofstream out(dir.file("magic.cfm"), std::ios::binary);
    out << "XXXX" << bytes.substr(4);
  }
  CHECK_THROWS_AS(load_checkpoint(dir.file("magic.cfm")), FormatError);
}

TEST_CASE("finite differences: every layer type, seeds 0..4") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CAPTURE(seed);
    auto mlp = build_model(mlp_spec(seed), {4});
    LabeledSet b1{random_batch(seed + 100, {5, 4}), {0, 1, 2, 1, 0}};
    auto r1 = finite_difference_check(mlp, b1, 1e-6, 1e-4);
    CHECK(r1.passed);
    CHECK(r1.checked == mlp.param_count());

    auto conv = build_model(conv_spec(seed), {1, 8, 8});
    LabeledSet b2{random_batch(seed + 200, {3, 1, 8, 8}), {0, 1, 1}};
    auto r2 = finite_difference_check(conv, b2, 1e-6, 1e-4);
    CHECK(r2.passed);
    CHECK(r2.max_rel_error < 1e-4);
  }
}

TEST_CASE("finite differences: linear squared loss is near exact") {
  ModelSpec s;
  s.layers = {LayerSpec::flat(), LayerSpec::dense(3, 2)};
  s.head_classes = 2;
  s.seed = 3;
  auto m = build_model(s, {3});
  LabeledSet b{random_batch(4, {4, 3}), {0, 1, 1, 0}};
  auto r = finite_difference_check(m, b, 1e-6, 1e-4, LossKind::kSquared);
  CHECK(r.passed);
  CHECK(r.max_rel_error < 1e-8);
}

TEST_CASE("finite differences: nothing trainable is a vacuous pass") {
  auto m = build_model(mlp_spec(1), {4});
  for (std::size_t i = 0; i < m.layer_count(); ++i) {
    if (!m.layer(i).has_params()) continue;
    m.layer(i).weight.set_requires_grad(false);
    m.layer(i).bias.set_requires_grad(false);
  }
  LabeledSet b{random_batch(4, {2, 4}), {0, 1}};
  auto r = finite_difference_check(m, b, 1e-6, 1e-4);
  CHECK(r.passed);
  CHECK(r.checked == 0);
  CHECK(r.max_rel_error == 0.0);
}
