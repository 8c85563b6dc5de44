#include "cfilter/training.hpp"

#include <cmath>
#include <sstream>

#include "cfilter/ops.hpp"
#include "cfilter/rng.hpp"
#include "cfilter/textio.hpp"

namespace cfilter {

LabeledSet LabeledSet::subset(std::span<const std::size_t> indices) const {
  const std::size_t n = size();
  const std::size_t row = x.numel() / n;
  Shape shape = x.shape();
  shape[0] = indices.size();
  std::vector<double> values(indices.size() * row);
  std::vector<int> out_labels(indices.size());
  const auto src = x.values();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t j = indices[i];
    if (j >= n) throw std::out_of_range("subset index out of range");
    std::copy(src.begin() + static_cast<std::ptrdiff_t>(j * row),
              src.begin() + static_cast<std::ptrdiff_t>((j + 1) * row),
              values.begin() + static_cast<std::ptrdiff_t>(i * row));
    out_labels[i] = labels[j];
  }
  return {Tensor(std::move(shape), std::move(values)), std::move(out_labels)};
}

void TrainConfig::validate() const {
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) {
    throw ConfigError("learning_rate must be finite and non-negative");
  }
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
}

TelemetryLedger TelemetryLedger::for_model(const Model& model, const ComponentSet& tracked) {
  TelemetryLedger ledger;
  ledger.tracked = tracked;
  ledger.ids = model.param_ids(tracked);
  ledger.sum_abs_delta.assign(ledger.ids.size(), 0.0);
  ledger.open_window.assign(ledger.ids.size(), 0.0);
  return ledger;
}

void TelemetryLedger::close_window() {
  windows.push_back(open_window);
  std::fill(open_window.begin(), open_window.end(), 0.0);
}

Sgd::Sgd(TrainConfig cfg) : cfg_(cfg) { cfg_.validate(); }

double Sgd::step(Model& model, const Batch& batch, TelemetryLedger* ledger) {
  if (batch.size() == 0) throw ConfigError("sgd step on an empty batch");
  std::vector<double> before;
  if (ledger) {
    if (ledger->ids != model.param_ids(ledger->tracked)) {
      throw ConfigError("telemetry ledger does not match the model's parameters");
    }
    before = model.snapshot(ledger->tracked);
  }

  model.clear_grad();
  Tensor loss = softmax_cross_entropy(forward(model, batch.x), batch.labels);
  const double loss_value = loss.item();
  if (loss.requires_grad()) loss.backward();

  if (velocity_.size() < 2 * model.layer_count()) velocity_.resize(2 * model.layer_count());
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    auto& layer = model.layer(i);
    if (!layer.has_params()) continue;
    Tensor* tensors[2] = {&layer.weight, &layer.bias};
    for (int k = 0; k < 2; ++k) {
      Tensor& t = *tensors[k];
      if (!t.requires_grad() || !t.has_grad()) continue;
      const auto g = t.grad();
      auto p = t.mutable_values();
      auto& v = velocity_[2 * i + k];
      if (cfg_.momentum == 0.0) {
        for (std::size_t j = 0; j < p.size(); ++j) p[j] = p[j] - cfg_.learning_rate * g[j];
      } else {
        if (v.size() != p.size()) v.assign(p.size(), 0.0);
        for (std::size_t j = 0; j < p.size(); ++j) {
          v[j] = cfg_.momentum * v[j] + g[j];
          p[j] = p[j] - cfg_.learning_rate * v[j];
        }
      }
      for (double x : p) {
        if (!std::isfinite(x)) throw NumericFault("non-finite parameter after SGD update");
      }
    }
  }

  if (ledger) {
    const auto after = model.snapshot(ledger->tracked);
    for (std::size_t j = 0; j < after.size(); ++j) {
      const double d = std::fabs(after[j] - before[j]);
      ledger->sum_abs_delta[j] += d;
      ledger->open_window[j] += d;
    }
    ledger->steps += 1;
  }
  return loss_value;
}

double sgd_step(Model& model, const Batch& batch, const TrainConfig& cfg, TelemetryLedger* ledger) {
  return Sgd(cfg).step(model, batch, ledger);
}

TrainResult train(Model& model, const LabeledSet& data, const TrainConfig& cfg,
                  const ComponentSet& track) {
  cfg.validate();
  if (data.size() == 0) throw ConfigError("cannot train on an empty dataset");
  if (cfg.batch_size > data.size()) {
    throw ConfigError("batch_size " + std::to_string(cfg.batch_size) + " exceeds dataset size " +
                      std::to_string(data.size()));
  }
  for (int label : data.labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= model.num_classes()) {
      throw ConfigError("label " + std::to_string(label) + " outside the head's " +
                        std::to_string(model.num_classes()) + " classes");
    }
  }

  TrainResult result;
  result.ledger = TelemetryLedger::for_model(model, track);
  Sgd sgd(cfg);
  Rng rng(cfg.shuffle_seed);
  const std::size_t n = data.size();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = rng.permutation(n);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      const auto batch = data.subset(std::span(order).subspan(start, end - start));
      total += sgd.step(model, batch, &result.ledger) * static_cast<double>(end - start);
    }
    result.epoch_loss.push_back(total / static_cast<double>(n));
    result.ledger.close_window();
  }
  model.clear_grad();
  return result;
}

PiVector finalize_pi(const TelemetryLedger& ledger) {
  if (ledger.steps == 0) throw ConfigError("no steps recorded");
  PiVector out;
  out.ids = ledger.ids;
  out.steps = ledger.steps;
  out.pi.resize(ledger.sum_abs_delta.size());
  const double n = static_cast<double>(ledger.steps);
  for (std::size_t i = 0; i < out.pi.size(); ++i) out.pi[i] = ledger.sum_abs_delta[i] / n;
  return out;
}

std::vector<int> predict(const Model& model, const Tensor& x) {
  NoGradGuard no_grad;
  const std::size_t n = x.shape()[0];
  const std::size_t row = x.numel() / n;
  constexpr std::size_t kChunk = 500;
  std::vector<int> out;
  out.reserve(n);
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t m = std::min(kChunk, n - start);
    Shape shape = x.shape();
    shape[0] = m;
    std::vector<double> chunk(x.values().begin() + static_cast<std::ptrdiff_t>(start * row),
                              x.values().begin() + static_cast<std::ptrdiff_t>((start + m) * row));
    const Tensor logits = forward(model, Tensor(std::move(shape), std::move(chunk)));
    const std::size_t k = logits.shape()[1];
    for (std::size_t i = 0; i < m; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < k; ++j) {
        if (logits.at(i * k + j) > logits.at(i * k + best)) best = j;
      }
      out.push_back(static_cast<int>(best));
    }
  }
  return out;
}

double evaluate(const Model& model, const LabeledSet& data) {
  if (data.size() == 0) throw ConfigError("cannot evaluate on an empty set");
  const auto pred = predict(model, data.x);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::string ledger_csv(const TelemetryLedger& ledger) {
  std::ostringstream os;
  os << "param_layer,param_offset,sum_abs_delta,n,pi\n";
  for (std::size_t i = 0; i < ledger.ids.size(); ++i) {
    const double pi = ledger.steps ? ledger.sum_abs_delta[i] / static_cast<double>(ledger.steps) : 0.0;
    os << ledger.ids[i].layer << ',' << ledger.ids[i].offset << ','
       << format_real(ledger.sum_abs_delta[i]) << ',' << ledger.steps << ',' << format_real(pi)
       << '\n';
  }
  return os.str();
}

}  // namespace cfilter
