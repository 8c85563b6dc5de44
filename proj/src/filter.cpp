#include "cfilter/filter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cfilter/rng.hpp"
#include "cfilter/textio.hpp"

namespace cfilter {

void MaskStrategy::validate() const {
  if (!(drop_fraction >= 0.0 && drop_fraction <= 1.0)) {
    throw ConfigError("drop fraction must lie in [0, 1]");
  }
}

std::size_t FilterMask::zeros() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{0}));
}

ConfounderPhaseResult phase2_train(const Model& task_model, const LabeledSet& confounder_data,
                                   const TrainConfig& cfg, std::uint64_t head_seed,
                                   std::size_t num_confounder_classes) {
  ConfounderPhaseResult out;
  out.confounder_model = replace_head(task_model, num_confounder_classes, head_seed);
  set_trainable(out.confounder_model, {Component::kClassifier, Component::kHead});
  auto trained = train(out.confounder_model, confounder_data, cfg, {Component::kClassifier});
  out.ledger = std::move(trained.ledger);
  out.epoch_loss = std::move(trained.epoch_loss);
  out.pi = finalize_pi(out.ledger);
  out.confounder_accuracy = evaluate(out.confounder_model, confounder_data);
  return out;
}

FilterMask build_mask_threshold(const PiVector& pi, double rho) {
  if (pi.size() == 0) throw ConfigError("cannot build a mask from an empty pi vector");
  FilterMask mask;
  mask.strategy.kind = MaskKind::kThreshold;
  mask.strategy.drop_fraction = rho;
  mask.strategy.validate();
  mask.ids = pi.ids;
  mask.bits.assign(pi.size(), 1);

  const auto drop = static_cast<std::size_t>(std::llround(rho * static_cast<double>(pi.size())));
  std::vector<std::size_t> order(pi.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pi.pi[a] > pi.pi[b]; });
  for (std::size_t r = 0; r < drop; ++r) mask.bits[order[r]] = 0;
  if (drop > 0) mask.tau = pi.pi[order[drop - 1]];
  return mask;
}

FilterMask build_mask_bernoulli(const PiVector& pi, std::uint64_t seed) {
  if (pi.size() == 0) throw ConfigError("cannot build a mask from an empty pi vector");
  FilterMask mask;
  mask.strategy.kind = MaskKind::kBernoulli;
  mask.strategy.bernoulli_seed = seed;
  mask.ids = pi.ids;
  mask.bits.assign(pi.size(), 1);

  const auto [lo, hi] = std::minmax_element(pi.pi.begin(), pi.pi.end());
  const double range = *hi - *lo;
  Rng rng(seed);
  for (std::size_t i = 0; i < pi.size(); ++i) {
    const double p_drop = range > 0.0 ? (pi.pi[i] - *lo) / range : 0.0;
    if (rng.bernoulli(p_drop)) mask.bits[i] = 0;
  }
  return mask;
}

FilterMask build_mask(const PiVector& pi, const MaskStrategy& strategy) {
  strategy.validate();
  FilterMask mask = strategy.kind == MaskKind::kThreshold
                        ? build_mask_threshold(pi, strategy.drop_fraction)
                        : build_mask_bernoulli(pi, strategy.bernoulli_seed);
  mask.strategy = strategy;
  return mask;
}

FilteredModel apply_mask(const Model& task_model, const FilterMask& mask) {
  const auto ids = task_model.param_ids({Component::kClassifier});
  if (ids.size() != mask.size()) {
    throw ShapeError("mask length " + std::to_string(mask.size()) +
                     " does not match classifier parameter count " + std::to_string(ids.size()));
  }
  if (ids != mask.ids) throw ShapeError("mask parameter ids do not match the classifier");
  FilteredModel out{task_model, mask};
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (mask.bits[i] == 0) out.model.set_param(ids[i], 0.0);
  }
  return out;
}

PipelineResult run_cf_pipeline(const LabeledSet& task_data, const LabeledSet& confounder_data,
                               const ModelSpec& spec, const TrainConfig& task_cfg,
                               const TrainConfig& confounder_cfg, const MaskStrategy& strategy,
                               PipelineSeeds seeds, std::size_t num_confounder_classes) {
  strategy.validate();
  Shape input_shape(task_data.x.shape().begin() + 1, task_data.x.shape().end());
  Shape conf_shape(confounder_data.x.shape().begin() + 1, confounder_data.x.shape().end());
  if (input_shape != conf_shape) {
    throw ShapeError("task samples " + shape_str(input_shape) + " and confounder samples " +
                     shape_str(conf_shape) + " differ in shape");
  }

  PipelineResult r;
  r.vanilla = build_model(spec, input_shape);
  set_trainable(r.vanilla, all_components());
  auto task = train(r.vanilla, task_data, task_cfg, {Component::kClassifier});
  r.task_ledger = std::move(task.ledger);
  r.task_loss = std::move(task.epoch_loss);

  r.confounder_phase =
      phase2_train(r.vanilla, confounder_data, confounder_cfg, seeds.head_seed, num_confounder_classes);
  r.pi = r.confounder_phase.pi;
  r.mask = build_mask(r.pi, strategy);
  r.filtered = apply_mask(r.vanilla, r.mask);
  return r;
}

std::string mask_csv(const FilterMask& mask, const PiVector& pi) {
  if (pi.ids != mask.ids) throw ShapeError("mask and pi vector cover different parameters");
  std::ostringstream os;
  os << "param_layer,param_offset,pi,bit\n";
  for (std::size_t i = 0; i < mask.size(); ++i) {
    os << mask.ids[i].layer << ',' << mask.ids[i].offset << ',' << format_real(pi.pi[i]) << ','
       << static_cast<int>(mask.bits[i]) << '\n';
  }
  return os.str();
}

}  // namespace cfilter
