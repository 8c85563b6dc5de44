#include "cfilter/gradcheck.hpp"

#include <cmath>

#include "cfilter/ops.hpp"

namespace cfilter {

Tensor batch_loss(const Model& model, const Batch& batch, LossKind kind) {
  Tensor logits = forward(model, batch.x);
  if (kind == LossKind::kCrossEntropy) return softmax_cross_entropy(logits, batch.labels);
  const std::size_t k = logits.shape()[1];
  std::vector<double> onehot(logits.numel(), 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const int label = batch.labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw ShapeError("label " + std::to_string(label) + " out of range");
    }
    onehot[i * k + static_cast<std::size_t>(label)] = 1.0;
  }
  return squared_error(logits, Tensor(logits.shape(), std::move(onehot)));
}

CheckReport finite_difference_check(Model& model, const Batch& batch, double h, double tol,
                                    LossKind kind) {
  if (!(h > 0.0)) throw ConfigError("finite difference step must be positive");
  CheckReport report;

  model.clear_grad();
  {
    Tensor loss = batch_loss(model, batch, kind);
    if (loss.requires_grad()) loss.backward();
  }

  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    auto& layer = model.layer(i);
    if (!layer.has_params()) continue;
    std::uint32_t base = 0;
    for (Tensor* t : {&layer.weight, &layer.bias}) {
      if (!t->requires_grad()) {
        base += static_cast<std::uint32_t>(t->numel());
        continue;
      }
      const std::vector<double> analytic = t->has_grad()
                                               ? std::vector<double>(t->grad().begin(), t->grad().end())
                                               : std::vector<double>(t->numel(), 0.0);
      for (std::size_t j = 0; j < t->numel(); ++j) {
        const double original = t->values()[j];
        double lp, lm;
        {
          NoGradGuard no_grad;
          t->mutable_values()[j] = original + h;
          lp = batch_loss(model, batch, kind).item();
          t->mutable_values()[j] = original - h;
          lm = batch_loss(model, batch, kind).item();
          t->mutable_values()[j] = original;
        }
        const double numeric = (lp - lm) / (2.0 * h);
        const double denom =
            std::max({std::fabs(analytic[j]), std::fabs(numeric), kGradCheckFloor});
        const double rel = std::fabs(analytic[j] - numeric) / denom;
        if (rel > report.max_rel_error) {
          report.max_rel_error = rel;
          report.worst = {static_cast<std::uint32_t>(i), base + static_cast<std::uint32_t>(j)};
        }
        ++report.checked;
      }
      base += static_cast<std::uint32_t>(t->numel());
    }
  }
  model.clear_grad();
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace cfilter
