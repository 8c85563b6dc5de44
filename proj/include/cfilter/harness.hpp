#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfilter/filter.hpp"
#include "cfilter/synthetic.hpp"

namespace cfilter {

struct DataSource {
  enum class Kind { kImages, kToy, kBundle };
  Kind kind = Kind::kImages;
  ConfoundedImageConfig images;
  ToyConfig toy;
  std::string bundle_path;
};

struct ExperimentConfig {
  DataSource data;
  ModelSpec model;
  TrainConfig phase1;
  TrainConfig phase2;
  MaskStrategy strategy;
  std::uint64_t head_seed = 1;
  std::size_t confounder_classes = 2;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "out";

  void validate() const;
};

// conv(1->4,s2,p1) relu conv(4->8,s2,p1) relu flatten | dense(->16) relu | head
// Kernels are 4 on even sides and 3 on odd ones; 16x16 gives dense(128->16).
ModelSpec default_image_model(const ConfoundedImageConfig& data);
// flatten | dense(2->1) | head
ModelSpec default_toy_model();
ExperimentConfig default_image_experiment();
ExperimentConfig default_toy_experiment();

// The configuration one seed runs with: every seed in `base` (data, model,
// shuffling, head, Bernoulli, independent confounder set) is offset by `seed`.
// Bundle-backed data is shared across seeds.
ExperimentConfig seeded(const ExperimentConfig& base, std::uint64_t seed);

DatasetBundle load_data(const ExperimentConfig& config);

struct SeedRow {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double vanilla_deconf = 0.0;
  double vanilla_aligned = 0.0;
  double cf_deconf = 0.0;
  double cf_aligned = 0.0;
  double confounder_accuracy = 0.0;
  std::size_t mask_zeros = 0;
  std::size_t mask_size = 0;
};

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for a single row
};

struct ExperimentReport {
  std::vector<SeedRow> rows;  // ascending seed order
  std::size_t successful = 0;
  Aggregate vanilla_deconf, vanilla_aligned, cf_deconf, cf_aligned, confounder_accuracy;
  std::size_t cf_wins = 0;  // seeds where cf_deconf > vanilla_deconf
};

struct SeedOutcome {
  DatasetBundle bundle;
  PipelineResult pipeline;
  SeedRow row;
};

SeedOutcome run_seed(const ExperimentConfig& config, std::uint64_t seed);

ExperimentReport summarize(std::vector<SeedRow> rows);

// Runs every seed; a failing seed yields a failure row. Writes report.csv and
// manifest.json into config.output_dir when it is non-empty.
ExperimentReport run_experiment(const ExperimentConfig& config);

std::string report_csv(const ExperimentReport& report);

// ---- saliency ------------------------------------------------------------

struct SaliencyMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> heat;        // |d logit_target / d pixel| / max, summed over channels
  std::vector<std::size_t> top;    // flat pixel indices, most salient first
};

// `image` is one sample with the model's input shape (a leading batch dim of
// 1 is accepted). Inputs of rank 1 are treated as a 1 x D image.
SaliencyMap saliency(const Model& model, const Tensor& image, int target,
                     double top_fraction = 0.05);

std::string saliency_heat_pgm(const SaliencyMap& map);
// First channel of `image` scaled to [0, 191] with the top pixels set to 255.
std::string saliency_overlay_pgm(const SaliencyMap& map, const Tensor& image);
std::string saliency_csv(const SaliencyMap& map);

// ---- telemetry heat ------------------------------------------------------

struct HeatGrid {
  std::size_t rows = 0;  // recorded windows (epochs)
  std::size_t cols = 0;  // tracked parameters
  std::vector<double> raw;
  std::vector<double> normalized;  // raw / max, all zero when max is 0
};

HeatGrid heat_grid(const TelemetryLedger& ledger);

struct HeatExport {
  std::string task_pgm;
  std::string confounder_pgm;
  std::string csv;
};

// Grayscale grids (white = no update, black = the phase's largest window
// update) plus a CSV with raw values. Both ledgers must cover the same ids.
HeatExport telemetry_heat(const TelemetryLedger& task, const TelemetryLedger& confounder);
void export_telemetry_heat(const TelemetryLedger& task, const TelemetryLedger& confounder,
                           const std::string& dir);

}  // namespace cfilter
