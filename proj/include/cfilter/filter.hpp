#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "cfilter/training.hpp"

namespace cfilter {

enum class MaskKind { kThreshold, kBernoulli };

struct MaskStrategy {
  MaskKind kind = MaskKind::kThreshold;
  double drop_fraction = 0.20;  // threshold only
  std::uint64_t bernoulli_seed = 0;

  void validate() const;
  bool operator==(const MaskStrategy&) const = default;
};

// Keep/remove bits over the classifier parameters (1 = keep).
struct FilterMask {
  std::vector<ParamId> ids;
  std::vector<std::uint8_t> bits;
  MaskStrategy strategy;
  // Smallest removed pi under thresholding; +inf when nothing is removed.
  double tau = std::numeric_limits<double>::infinity();

  std::size_t size() const { return bits.size(); }
  std::size_t zeros() const;
};

// Phase-1 model with the masked classifier weights set to zero.
struct FilteredModel {
  Model model;
  FilterMask mask;
};

struct ConfounderPhaseResult {
  PiVector pi;
  double confounder_accuracy = 0.0;
  TelemetryLedger ledger;
  std::vector<double> epoch_loss;
  Model confounder_model;  // the copy with the confounder head
};

// Trains a copy of `task_model` to predict confounder labels: the head is
// swapped for a fresh `num_confounder_classes`-way layer, the representation
// is frozen, and updates of the classifier parameters are recorded.
ConfounderPhaseResult phase2_train(const Model& task_model, const LabeledSet& confounder_data,
                                   const TrainConfig& cfg, std::uint64_t head_seed,
                                   std::size_t num_confounder_classes = 2);

// Removes the round(rho * P) parameters with the largest pi; among equal pi the
// earlier ParamId is removed first.
FilterMask build_mask_threshold(const PiVector& pi, double rho);

// Removes each parameter independently with probability
// (pi_i - min pi) / (max pi - min pi), drawn in ParamId order.
FilterMask build_mask_bernoulli(const PiVector& pi, std::uint64_t seed);

FilterMask build_mask(const PiVector& pi, const MaskStrategy& strategy);

FilteredModel apply_mask(const Model& task_model, const FilterMask& mask);

struct PipelineResult {
  Model vanilla;
  FilteredModel filtered;
  PiVector pi;
  FilterMask mask;
  TelemetryLedger task_ledger;  // classifier updates while training on the task
  std::vector<double> task_loss;
  ConfounderPhaseResult confounder_phase;
};

struct PipelineSeeds {
  std::uint64_t head_seed = 1;
};

// Task training from `spec`, confounder phase on a copy, mask, filter. The
// two data sets only need to share the input shape.
PipelineResult run_cf_pipeline(const LabeledSet& task_data, const LabeledSet& confounder_data,
                               const ModelSpec& spec, const TrainConfig& task_cfg,
                               const TrainConfig& confounder_cfg, const MaskStrategy& strategy,
                               PipelineSeeds seeds = {}, std::size_t num_confounder_classes = 2);

// CSV: param_layer,param_offset,pi,bit
std::string mask_csv(const FilterMask& mask, const PiVector& pi);

}  // namespace cfilter
