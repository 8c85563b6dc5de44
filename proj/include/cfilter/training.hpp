#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfilter/network.hpp"

namespace cfilter {

// Samples [N x ...] with one integer label each.
struct LabeledSet {
  Tensor x;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  LabeledSet subset(std::span<const std::size_t> indices) const;
};
using Batch = LabeledSet;

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::uint64_t shuffle_seed = 0;
  double momentum = 0.0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Running sum of |post-step - pre-step| for every tracked parameter.
struct TelemetryLedger {
  ComponentSet tracked;
  std::vector<ParamId> ids;
  std::vector<double> sum_abs_delta;
  std::uint64_t steps = 0;
  // Closed per-epoch windows of the same sums, and the one being filled.
  std::vector<std::vector<double>> windows;
  std::vector<double> open_window;

  static TelemetryLedger for_model(const Model& model, const ComponentSet& tracked);
  void close_window();
  bool operator==(const TelemetryLedger&) const = default;
};

struct PiVector {
  std::vector<ParamId> ids;
  std::vector<double> pi;
  std::uint64_t steps = 0;

  std::size_t size() const { return pi.size(); }
  bool operator==(const PiVector&) const = default;
};

// Mini-batch SGD with optional heavy-ball momentum:
//   v <- momentum * v + grad;  p <- p - learning_rate * v
// With momentum 0 the update is exactly p - learning_rate * grad.
class Sgd {
 public:
  explicit Sgd(TrainConfig cfg);

  // One forward/backward/update on `batch`. Returns the batch loss.
  double step(Model& model, const Batch& batch, TelemetryLedger* ledger = nullptr);

 private:
  TrainConfig cfg_;
  std::vector<std::vector<double>> velocity_;  // per parameter tensor
};

// Single step from a fresh optimizer state.
double sgd_step(Model& model, const Batch& batch, const TrainConfig& cfg,
                TelemetryLedger* ledger = nullptr);

struct TrainResult {
  std::vector<double> epoch_loss;  // sample-weighted mean per epoch
  TelemetryLedger ledger;
};

// Shuffled mini-batch training for cfg.epochs epochs, recording telemetry for
// parameters whose component is in `track`.
TrainResult train(Model& model, const LabeledSet& data, const TrainConfig& cfg,
                  const ComponentSet& track);

// pi_i = sum_abs_delta_i / n. Throws when no steps were recorded.
PiVector finalize_pi(const TelemetryLedger& ledger);

// Argmax predictions; ties go to the smallest class index.
std::vector<int> predict(const Model& model, const Tensor& x);
double evaluate(const Model& model, const LabeledSet& data);

// CSV: param_layer,param_offset,sum_abs_delta,n,pi
std::string ledger_csv(const TelemetryLedger& ledger);

}  // namespace cfilter
