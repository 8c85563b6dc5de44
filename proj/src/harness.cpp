#include "cfilter/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "cfilter/config.hpp"
#include "cfilter/ops.hpp"
#include "cfilter/textio.hpp"

namespace cfilter {

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  auto sorted = seeds;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ConfigError("seeds must be distinct");
  }
  phase1.validate();
  phase2.validate();
  strategy.validate();
  if (confounder_classes == 0) throw ConfigError("confounder_classes must be positive");
  switch (data.kind) {
    case DataSource::Kind::kImages: data.images.validate(); break;
    case DataSource::Kind::kToy: data.toy.validate(); break;
    case DataSource::Kind::kBundle:
      if (data.bundle_path.empty()) throw ConfigError("bundle data needs a path");
      break;
  }
  const std::size_t split = model.resolved_split();
  if (split == 0 || split >= model.layers.size()) {
    throw ConfigError("model split index must lie strictly inside the layer list");
  }
}

ModelSpec default_image_model(const ConfoundedImageConfig& data) {
  ModelSpec spec;
  // stride-2 stages halve the side (rounded up) for either parity
  auto kernel = [](std::size_t side) -> std::size_t { return side % 2 == 0 ? 4 : 3; };
  auto halve = [&](std::size_t side) { return (side + 2 - kernel(side)) / 2 + 1; };
  const std::size_t s0 = data.image_size, s1 = halve(s0), s2 = halve(s1);
  spec.layers = {LayerSpec::conv(1, 4, kernel(s0), 2, 1), LayerSpec::act(ActivationKind::kRelu),
                 LayerSpec::conv(4, 8, kernel(s1), 2, 1), LayerSpec::act(ActivationKind::kRelu),
                 LayerSpec::flat(),                       LayerSpec::dense(8 * s2 * s2, 16),
                 LayerSpec::act(ActivationKind::kRelu)};
  spec.split_index = 5;
  spec.head_classes = data.num_classes;
  return spec;
}

ModelSpec default_toy_model() {
  ModelSpec spec;
  spec.layers = {LayerSpec::flat(), LayerSpec::dense(2, 1)};
  spec.split_index = 1;
  spec.head_classes = 2;
  return spec;
}

ExperimentConfig default_image_experiment() {
  ExperimentConfig c;
  c.data.kind = DataSource::Kind::kImages;
  c.model = default_image_model(c.data.images);
  c.phase1 = {0.05, 32, 10, 0, 0.0};
  c.phase2 = {0.05, 32, 3, 0, 0.0};
  c.seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  return c;
}

ExperimentConfig default_toy_experiment() {
  ExperimentConfig c;
  c.data.kind = DataSource::Kind::kToy;
  c.model = default_toy_model();
  c.phase1 = {0.1, 20, 20, 0, 0.0};
  c.phase2 = {0.1, 20, 3, 0, 0.0};
  c.seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  return c;
}

ExperimentConfig seeded(const ExperimentConfig& base, std::uint64_t seed) {
  ExperimentConfig c = base;
  c.data.images.seed += seed;
  if (c.data.images.confounder_seed) *c.data.images.confounder_seed += seed;
  c.data.toy.seed += seed;
  if (c.data.toy.confounder_seed) *c.data.toy.confounder_seed += seed;
  c.model.seed += seed;
  c.phase1.shuffle_seed += seed;
  c.phase2.shuffle_seed += seed;
  c.head_seed += seed;
  c.strategy.bernoulli_seed += seed;
  c.seeds = {seed};
  return c;
}

DatasetBundle load_data(const ExperimentConfig& config) {
  switch (config.data.kind) {
    case DataSource::Kind::kImages: return generate(config.data.images);
    case DataSource::Kind::kToy: return toy_linear(config.data.toy);
    case DataSource::Kind::kBundle: return load_bundle(config.data.bundle_path);
  }
  throw ConfigError("unknown data source");
}

SeedOutcome run_seed(const ExperimentConfig& config, std::uint64_t seed) {
  const ExperimentConfig c = seeded(config, seed);
  SeedOutcome out;
  out.bundle = load_data(c);
  out.pipeline = run_cf_pipeline(out.bundle.train, out.bundle.confounder, c.model, c.phase1,
                                 c.phase2, c.strategy, {c.head_seed}, c.confounder_classes);
  auto& row = out.row;
  row.seed = seed;
  row.ok = true;
  row.vanilla_deconf = evaluate(out.pipeline.vanilla, out.bundle.test_deconf);
  row.vanilla_aligned = evaluate(out.pipeline.vanilla, out.bundle.test_aligned);
  row.cf_deconf = evaluate(out.pipeline.filtered.model, out.bundle.test_deconf);
  row.cf_aligned = evaluate(out.pipeline.filtered.model, out.bundle.test_aligned);
  row.confounder_accuracy = out.pipeline.confounder_phase.confounder_accuracy;
  row.mask_zeros = out.pipeline.mask.zeros();
  row.mask_size = out.pipeline.mask.size();
  return out;
}

namespace {
Aggregate aggregate(const std::vector<SeedRow>& rows, double SeedRow::*field) {
  std::vector<double> v;
  for (const auto& r : rows)
    if (r.ok) v.push_back(r.*field);
  Aggregate a;
  if (v.empty()) return a;
  a.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - a.mean) * (x - a.mean);
    a.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return a;
}

std::string csv_safe(std::string s) {
  for (char& ch : s)
    if (ch == ',' || ch == '\n' || ch == '\r') ch = ' ';
  return s;
}
}  // namespace

ExperimentReport summarize(std::vector<SeedRow> rows) {
  std::sort(rows.begin(), rows.end(),
            [](const SeedRow& a, const SeedRow& b) { return a.seed < b.seed; });
  ExperimentReport r;
  r.rows = std::move(rows);
  for (const auto& row : r.rows) {
    if (!row.ok) continue;
    ++r.successful;
    if (row.cf_deconf > row.vanilla_deconf) ++r.cf_wins;
  }
  r.vanilla_deconf = aggregate(r.rows, &SeedRow::vanilla_deconf);
  r.vanilla_aligned = aggregate(r.rows, &SeedRow::vanilla_aligned);
  r.cf_deconf = aggregate(r.rows, &SeedRow::cf_deconf);
  r.cf_aligned = aggregate(r.rows, &SeedRow::cf_aligned);
  r.confounder_accuracy = aggregate(r.rows, &SeedRow::confounder_accuracy);
  return r;
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  std::vector<SeedRow> rows;
  for (auto seed : config.seeds) {
    try {
      rows.push_back(run_seed(config, seed).row);
    } catch (const std::exception& e) {
      SeedRow failed;
      failed.seed = seed;
      failed.error = e.what();
      rows.push_back(failed);
    }
  }
  auto report = summarize(std::move(rows));
  if (!config.output_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(config.output_dir);
    const fs::path dir(config.output_dir);
    write_text_file((dir / "report.csv").string(), report_csv(report));
    nlohmann::json manifest;
    manifest["config"] = config;
    nlohmann::json per_seed = nlohmann::json::array();
    for (auto seed : config.seeds) {
      const auto c = seeded(config, seed);
      per_seed.push_back({{"seed", seed},
                          {"data", c.data},
                          {"model_seed", c.model.seed},
                          {"phase1_shuffle_seed", c.phase1.shuffle_seed},
                          {"phase2_shuffle_seed", c.phase2.shuffle_seed},
                          {"head_seed", c.head_seed},
                          {"bernoulli_seed", c.strategy.bernoulli_seed}});
    }
    manifest["seeds"] = per_seed;
    manifest["outputs"] = {"report.csv"};
    write_text_file((dir / "manifest.json").string(), manifest.dump(2) + "\n");
  }
  return report;
}

std::string report_csv(const ExperimentReport& report) {
  std::ostringstream os;
  os << "seed,status,vanilla_deconf,vanilla_aligned,cf_deconf,cf_aligned,"
        "confounder_accuracy,mask_zeros,mask_size\n";
  for (const auto& r : report.rows) {
    if (!r.ok) {
      os << r.seed << ",failed: " << csv_safe(r.error) << ",,,,,,,\n";
      continue;
    }
    os << r.seed << ",ok," << format_real(r.vanilla_deconf) << ',' << format_real(r.vanilla_aligned)
       << ',' << format_real(r.cf_deconf) << ',' << format_real(r.cf_aligned) << ','
       << format_real(r.confounder_accuracy) << ',' << r.mask_zeros << ',' << r.mask_size << '\n';
  }
  os << "# successful_seeds=" << report.successful << '\n';
  if (report.successful == 0) return os.str();
  auto emit = [&](const char* name, const Aggregate& a) {
    os << "# mean_" << name << '=' << format_real(a.mean) << '\n';
    os << "# std_" << name << '=' << format_real(a.stddev) << '\n';
  };
  emit("vanilla_deconf", report.vanilla_deconf);
  emit("vanilla_aligned", report.vanilla_aligned);
  emit("cf_deconf", report.cf_deconf);
  emit("cf_aligned", report.cf_aligned);
  emit("confounder_accuracy", report.confounder_accuracy);
  os << "# cf_wins_deconf=" << report.cf_wins << '\n';
  return os.str();
}

// ---- saliency ------------------------------------------------------------

SaliencyMap saliency(const Model& model, const Tensor& image, int target, double top_fraction) {
  const Shape& in = model.input_shape();
  Shape batched{1};
  batched.insert(batched.end(), in.begin(), in.end());
  if (image.shape() != in && image.shape() != batched) {
    throw ShapeError("saliency: image shape " + shape_str(image.shape()) +
                     " does not match model input " + shape_str(in));
  }
  if (target < 0 || static_cast<std::size_t>(target) >= model.num_classes()) {
    throw ShapeError("saliency: target class " + std::to_string(target) + " out of range");
  }
  if (!(top_fraction > 0.0 && top_fraction <= 1.0)) {
    throw ConfigError("saliency: top fraction must lie in (0, 1]");
  }

  Model frozen(model);
  for (std::size_t i = 0; i < frozen.layer_count(); ++i) {
    auto& l = frozen.layer(i);
    if (!l.has_params()) continue;
    l.weight.set_requires_grad(false);
    l.bias.set_requires_grad(false);
  }
  Tensor input(batched, std::vector<double>(image.values().begin(), image.values().end()), true);
  Tensor logits = forward(frozen, input);
  std::vector<double> pick(logits.numel(), 0.0);
  pick[static_cast<std::size_t>(target)] = 1.0;
  Tensor selected = sum(mul(logits, Tensor(logits.shape(), std::move(pick))));
  selected.backward();

  SaliencyMap map;
  std::size_t channels = 1;
  if (in.size() == 3) {
    channels = in[0];
    map.height = in[1];
    map.width = in[2];
  } else {
    map.height = 1;
    map.width = shape_numel(in);
  }
  const std::size_t pixels = map.height * map.width;
  map.heat.assign(pixels, 0.0);
  const auto g = input.grad();
  for (std::size_t ch = 0; ch < channels; ++ch)
    for (std::size_t p = 0; p < pixels; ++p) map.heat[p] += std::fabs(g[ch * pixels + p]);
  const double mx = *std::max_element(map.heat.begin(), map.heat.end());
  for (auto& v : map.heat) v = mx > 0.0 ? v / mx : 0.0;

  const auto k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(top_fraction * static_cast<double>(pixels))));
  std::vector<std::size_t> order(pixels);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return map.heat[a] > map.heat[b]; });
  map.top.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(k, pixels)));
  return map;
}

std::string saliency_heat_pgm(const SaliencyMap& map) {
  std::vector<int> px(map.heat.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<int>(std::lround(255.0 * map.heat[i]));
  return pgm_text(map.width, map.height, px);
}

std::string saliency_overlay_pgm(const SaliencyMap& map, const Tensor& image) {
  const std::size_t pixels = map.height * map.width;
  if (image.numel() < pixels) throw ShapeError("overlay: image smaller than saliency map");
  const auto v = image.values();
  double lo = v[0], hi = v[0];
  for (std::size_t i = 0; i < pixels; ++i) {
    lo = std::min(lo, v[i]);
    hi = std::max(hi, v[i]);
  }
  std::vector<int> px(pixels);
  for (std::size_t i = 0; i < pixels; ++i) {
    px[i] = hi > lo ? static_cast<int>(std::lround(191.0 * (v[i] - lo) / (hi - lo))) : 0;
  }
  for (auto idx : map.top) px[idx] = 255;
  return pgm_text(map.width, map.height, px);
}

std::string saliency_csv(const SaliencyMap& map) {
  std::vector<std::uint8_t> is_top(map.heat.size(), 0);
  for (auto idx : map.top) is_top[idx] = 1;
  std::ostringstream os;
  os << "row,col,heat,top\n";
  for (std::size_t i = 0; i < map.heat.size(); ++i) {
    os << i / map.width << ',' << i % map.width << ',' << format_real(map.heat[i]) << ','
       << static_cast<int>(is_top[i]) << '\n';
  }
  return os.str();
}

// ---- telemetry heat ------------------------------------------------------

HeatGrid heat_grid(const TelemetryLedger& ledger) {
  HeatGrid g;
  g.rows = ledger.windows.size();
  g.cols = ledger.ids.size();
  g.raw.reserve(g.rows * g.cols);
  for (const auto& w : ledger.windows) g.raw.insert(g.raw.end(), w.begin(), w.end());
  const double mx = g.raw.empty() ? 0.0 : *std::max_element(g.raw.begin(), g.raw.end());
  g.normalized.resize(g.raw.size());
  for (std::size_t i = 0; i < g.raw.size(); ++i) g.normalized[i] = mx > 0.0 ? g.raw[i] / mx : 0.0;
  return g;
}

namespace {
std::string heat_pgm(const HeatGrid& g) {
  std::vector<int> px(g.normalized.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    px[i] = 255 - static_cast<int>(std::lround(255.0 * g.normalized[i]));
  }
  return pgm_text(g.cols, g.rows, px);
}
}  // namespace

HeatExport telemetry_heat(const TelemetryLedger& task, const TelemetryLedger& confounder) {
  if (task.ids != confounder.ids) {
    throw ShapeError("telemetry heat: ledgers cover different parameters");
  }
  const HeatGrid a = heat_grid(task), b = heat_grid(confounder);
  HeatExport out;
  out.task_pgm = heat_pgm(a);
  out.confounder_pgm = heat_pgm(b);
  std::ostringstream os;
  os << "phase,window,param_layer,param_offset,raw,normalized\n";
  auto rows = [&](const char* phase, const HeatGrid& g) {
    for (std::size_t r = 0; r < g.rows; ++r)
      for (std::size_t c = 0; c < g.cols; ++c) {
        const std::size_t i = r * g.cols + c;
        os << phase << ',' << r << ',' << task.ids[c].layer << ',' << task.ids[c].offset << ','
           << format_real(g.raw[i]) << ',' << format_real(g.normalized[i]) << '\n';
      }
  };
  rows("task", a);
  rows("confounder", b);
  out.csv = os.str();
  return out;
}

void export_telemetry_heat(const TelemetryLedger& task, const TelemetryLedger& confounder,
                           const std::string& dir) {
  const auto heat = telemetry_heat(task, confounder);
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path d(dir);
  write_text_file((d / "heat_task.pgm").string(), heat.task_pgm);
  write_text_file((d / "heat_confounder.pgm").string(), heat.confounder_pgm);
  write_text_file((d / "heat.csv").string(), heat.csv);
}

}  // namespace cfilter
