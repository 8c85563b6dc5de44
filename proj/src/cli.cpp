#include "cfilter/cli.hpp"

#include <CLI11.hpp>

#include <array>
#include <cmath>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>

#include "cfilter/config.hpp"
#include "cfilter/textio.hpp"

namespace cfilter::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> strategy;
  std::optional<double> rho;
  std::string checkpoint;
  std::string set = "confounder";
  std::size_t index = 0;
  std::optional<int> target;
  double top_fraction = 0.05;
};

ExperimentConfig resolve_config(const Options& o) {
  ExperimentConfig c = o.config.empty() ? default_image_experiment()
                                        : load_experiment_config(o.config);
  if (o.strategy) {
    if (*o.strategy == "threshold") {
      c.strategy.kind = MaskKind::kThreshold;
    } else if (*o.strategy == "bernoulli") {
      c.strategy.kind = MaskKind::kBernoulli;
    } else {
      throw ConfigError("--strategy must be threshold or bernoulli");
    }
  }
  if (o.rho) c.strategy.drop_fraction = *o.rho;
  if (!o.out.empty()) c.output_dir = o.out;
  if (c.output_dir.empty()) throw ConfigError("an output directory is required (--out)");
  c.validate();
  return c;
}

std::uint64_t chosen_seed(const Options& o, const ExperimentConfig& c) {
  return o.seed ? *o.seed : c.seeds.front();
}

fs::path prepare_out(const ExperimentConfig& c) {
  fs::create_directories(c.output_dir);
  return fs::path(c.output_dir);
}

std::string loss_csv(const std::vector<double>& losses) {
  std::ostringstream os;
  os << "epoch,mean_loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) os << i << ',' << format_real(losses[i]) << '\n';
  return os.str();
}

void write_manifest(const fs::path& dir, const char* command, const ExperimentConfig& c,
                    std::uint64_t seed, json extra) {
  json m;
  m["command"] = command;
  m["seed"] = seed;
  m["config"] = c;
  for (auto& [k, v] : extra.items()) m[k] = v;
  write_text_file((dir / "manifest.json").string(), m.dump(2) + "\n");
}

int cmd_generate(const Options& o) {
  const auto base = resolve_config(o);
  const auto seed = chosen_seed(o, base);
  const auto c = seeded(base, seed);
  save_bundle(load_data(c), prepare_out(c).string());
  return kExitOk;
}

int cmd_train(const Options& o) {
  const auto base = resolve_config(o);
  const auto seed = chosen_seed(o, base);
  const auto c = seeded(base, seed);
  const auto bundle = load_data(c);
  const auto dir = prepare_out(c);
  Shape input(bundle.train.x.shape().begin() + 1, bundle.train.x.shape().end());
  Model model = build_model(c.model, input);
  set_trainable(model, all_components());
  const auto result = train(model, bundle.train, c.phase1, {Component::kClassifier});
  save_checkpoint(model, (dir / "vanilla.cfm").string());
  write_text_file((dir / "task_ledger.csv").string(), ledger_csv(result.ledger));
  write_text_file((dir / "task_loss.csv").string(), loss_csv(result.epoch_loss));
  write_manifest(dir, "train", c, seed,
                 {{"outputs", {"vanilla.cfm", "task_ledger.csv", "task_loss.csv"}}});
  return kExitOk;
}

int cmd_filter(const Options& o) {
  const auto base = resolve_config(o);
  const auto seed = chosen_seed(o, base);
  const auto c = seeded(base, seed);
  const auto dir = prepare_out(c);
  const std::string source = o.checkpoint.empty() ? (dir / "vanilla.cfm").string() : o.checkpoint;
  const Model task_model = load_checkpoint(source);
  const auto bundle = load_data(c);
  const auto phase = phase2_train(task_model, bundle.confounder, c.phase2, c.head_seed,
                                  c.confounder_classes);
  const auto mask = build_mask(phase.pi, c.strategy);
  const auto filtered = apply_mask(task_model, mask);
  save_checkpoint(filtered.model, (dir / "filtered.cfm").string());
  save_checkpoint(phase.confounder_model, (dir / "confounder.cfm").string());
  write_text_file((dir / "mask.csv").string(), mask_csv(mask, phase.pi));
  write_text_file((dir / "confounder_ledger.csv").string(), ledger_csv(phase.ledger));
  write_text_file((dir / "confounder_loss.csv").string(), loss_csv(phase.epoch_loss));
  write_manifest(dir, "filter", c, seed,
                 {{"source_checkpoint", source},
                  {"confounder_accuracy", phase.confounder_accuracy},
                  {"mask_zeros", mask.zeros()},
                  {"mask_size", mask.size()},
                  {"tau", std::isfinite(mask.tau) ? json(mask.tau) : json(nullptr)},
                  {"outputs",
                   {"filtered.cfm", "confounder.cfm", "mask.csv", "confounder_ledger.csv",
                    "confounder_loss.csv"}}});
  return kExitOk;
}

int cmd_evaluate(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("evaluate needs --checkpoint");
  const auto base = resolve_config(o);
  const auto seed = chosen_seed(o, base);
  const auto c = seeded(base, seed);
  const auto dir = prepare_out(c);
  const Model model = load_checkpoint(o.checkpoint);
  const auto bundle = load_data(c);
  std::ostringstream os;
  os << "set,accuracy\n";
  os << "test_deconf," << format_real(evaluate(model, bundle.test_deconf)) << '\n';
  os << "test_aligned," << format_real(evaluate(model, bundle.test_aligned)) << '\n';
  write_text_file((dir / "evaluation.csv").string(), os.str());
  return kExitOk;
}

int cmd_experiment(const Options& o) {
  auto c = resolve_config(o);
  if (o.seed) c.seeds = {*o.seed};
  const auto report = run_experiment(c);
  if (report.successful == 0) throw Error("every seed failed; see report.csv");
  return kExitOk;
}

const LabeledSet& pick_set(const DatasetBundle& b, const std::string& name) {
  if (name == "confounder") return b.confounder;
  if (name == "train") return b.train;
  if (name == "test_deconf") return b.test_deconf;
  if (name == "test_aligned") return b.test_aligned;
  throw ConfigError("--set must be confounder, train, test_deconf or test_aligned");
}

int cmd_saliency(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("saliency needs --checkpoint");
  const auto base = resolve_config(o);
  const auto seed = chosen_seed(o, base);
  const auto c = seeded(base, seed);
  const auto dir = prepare_out(c);
  const Model model = load_checkpoint(o.checkpoint);
  const auto bundle = load_data(c);
  const auto& set = pick_set(bundle, o.set);
  if (o.index >= set.size()) throw ConfigError("--index beyond the selected set");
  const std::array<std::size_t, 1> idx{o.index};
  const auto sample = set.subset(idx);
  const int target = o.target ? *o.target : sample.labels[0];
  const auto map = saliency(model, sample.x, target, o.top_fraction);
  write_text_file((dir / "saliency_heat.pgm").string(), saliency_heat_pgm(map));
  write_text_file((dir / "saliency_overlay.pgm").string(), saliency_overlay_pgm(map, sample.x));
  write_text_file((dir / "saliency.csv").string(), saliency_csv(map));
  return kExitOk;
}

int cmd_telemetry(const Options& o) {
  const auto c = resolve_config(o);
  const auto seed = chosen_seed(o, c);
  const auto outcome = run_seed(c, seed);
  const auto dir = prepare_out(c);
  const auto& p = outcome.pipeline;
  export_telemetry_heat(p.task_ledger, p.confounder_phase.ledger, dir.string());
  write_text_file((dir / "task_ledger.csv").string(), ledger_csv(p.task_ledger));
  write_text_file((dir / "confounder_ledger.csv").string(), ledger_csv(p.confounder_phase.ledger));
  write_manifest(dir, "telemetry", seeded(c, seed), seed,
                 {{"outputs",
                   {"heat_task.pgm", "heat_confounder.pgm", "heat.csv", "task_ledger.csv",
                    "confounder_ledger.csv"}}});
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Confounder filtering toolkit", "cfctl"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Experiment config (JSON)");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--seed", o.seed, "Seed (defaults to the first configured seed)");
    sub->add_option("--strategy", o.strategy, "Mask strategy: threshold|bernoulli");
    sub->add_option("--rho", o.rho, "Fraction of classifier weights to remove");
  };

  using Handler = int (*)(const Options&);
  std::vector<std::pair<CLI::App*, Handler>> commands;
  auto add = [&](const char* name, const char* help, Handler h) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub);
    commands.emplace_back(sub, h);
    return sub;
  };
  add("generate", "Write a synthetic dataset bundle", cmd_generate);
  add("train", "Train the task model (phase 1) and write a checkpoint", cmd_train);
  add("filter", "Confounder phase, mask and filtering from a checkpoint", cmd_filter)
      ->add_option("--checkpoint", o.checkpoint, "Task model checkpoint (default <out>/vanilla.cfm)");
  add("evaluate", "Accuracy of a checkpoint on both test sets", cmd_evaluate)
      ->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
  add("experiment", "Vanilla vs filtered comparison over seeds", cmd_experiment);
  auto* sal = add("saliency", "Input-gradient saliency of one sample", cmd_saliency);
  sal->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
  sal->add_option("--set", o.set, "confounder|train|test_deconf|test_aligned");
  sal->add_option("--index", o.index, "Sample index within the set");
  sal->add_option("--target", o.target, "Target class (default: the sample's label)");
  sal->add_option("--top-fraction", o.top_fraction, "Fraction of pixels marked in the overlay");
  add("telemetry", "Per-epoch update heat for both phases", cmd_telemetry);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfigError;
  }

  try {
    for (auto& [sub, handler] : commands) {
      if (sub->parsed()) return handler(o);
    }
  } catch (const NumericFault& e) {
    err << "numeric fault: " << e.what() << '\n';
    return kExitNumericFault;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfigError;
  }
  return kExitConfigError;
}

}  // namespace cfilter::cli
