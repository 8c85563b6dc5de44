#pragma once

#include "cfilter/training.hpp"

namespace cfilter {

enum class LossKind { kCrossEntropy, kSquared };

// Scalar training loss of `model` on `batch`. Squared loss targets the
// one-hot encoding of the labels.
Tensor batch_loss(const Model& model, const Batch& batch, LossKind kind);

struct CheckReport {
  double max_rel_error = 0.0;
  bool passed = true;
  std::size_t checked = 0;
  ParamId worst{};
};

// Scale below which gradients are compared absolutely rather than relatively:
// rel = |analytic - numeric| / max(|analytic|, |numeric|, kGradCheckFloor).
inline constexpr double kGradCheckFloor = 1e-6;

// Compares backprop gradients of every trainable parameter against central
// differences (L(p+h) - L(p-h)) / 2h. Parameter values are restored.
CheckReport finite_difference_check(Model& model, const Batch& batch, double h, double tol,
                                    LossKind kind = LossKind::kCrossEntropy);

}  // namespace cfilter
