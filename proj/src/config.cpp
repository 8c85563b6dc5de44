#include "cfilter/config.hpp"

#include <algorithm>

#include "cfilter/textio.hpp"

namespace cfilter {

using nlohmann::json;

namespace {
void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* a) { return key == a; });
    if (!known) throw ConfigError(std::string(what) + ": unknown key '" + key + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

template <class T>
void read_optional(const json& j, const char* key, std::optional<T>& out) {
  if (auto it = j.find(key); it != j.end()) {
    if (it->is_null()) {
      out.reset();
    } else {
      out = it->get<T>();
    }
  }
}

template <class T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

const char* activation_name(ActivationKind k) {
  switch (k) {
    case ActivationKind::kRelu: return "relu";
    case ActivationKind::kTanh: return "tanh";
    case ActivationKind::kSigmoid: return "sigmoid";
  }
  return "relu";
}

ActivationKind activation_from(const std::string& s) {
  if (s == "relu") return ActivationKind::kRelu;
  if (s == "tanh") return ActivationKind::kTanh;
  if (s == "sigmoid") return ActivationKind::kSigmoid;
  throw ConfigError("unknown activation '" + s + "'");
}
}  // namespace

void to_json(json& j, const LayerSpec& s) {
  switch (s.kind) {
    case LayerKind::kDense: j = {{"type", "dense"}, {"in", s.in}, {"out", s.out}}; break;
    case LayerKind::kConv:
      j = {{"type", "conv"}, {"in", s.in},         {"out", s.out},
           {"kernel", s.kernel}, {"stride", s.stride}, {"pad", s.pad}};
      break;
    case LayerKind::kPool:
      j = {{"type", "pool"}, {"kind", s.pool == PoolKind::kMax ? "max" : "avg"}, {"size", s.size}};
      break;
    case LayerKind::kActivation: j = {{"type", "activation"}, {"kind", activation_name(s.activation)}}; break;
    case LayerKind::kFlatten: j = {{"type", "flatten"}}; break;
  }
}

void from_json(const json& j, LayerSpec& s) {
  const auto type = j.at("type").get<std::string>();
  s = LayerSpec{};
  if (type == "dense") {
    check_keys(j, {"type", "in", "out"}, "dense layer");
    s = LayerSpec::dense(j.at("in").get<std::size_t>(), j.at("out").get<std::size_t>());
  } else if (type == "conv") {
    check_keys(j, {"type", "in", "out", "kernel", "stride", "pad"}, "conv layer");
    s = LayerSpec::conv(j.at("in").get<std::size_t>(), j.at("out").get<std::size_t>(),
                        j.at("kernel").get<std::size_t>(), j.value("stride", std::size_t{1}),
                        j.value("pad", std::size_t{0}));
  } else if (type == "pool") {
    check_keys(j, {"type", "kind", "size"}, "pool layer");
    const auto kind = j.value("kind", std::string("max"));
    if (kind != "max" && kind != "avg") throw ConfigError("unknown pool kind '" + kind + "'");
    s = LayerSpec::pool2d(kind == "max" ? PoolKind::kMax : PoolKind::kAvg,
                          j.at("size").get<std::size_t>());
  } else if (type == "activation") {
    check_keys(j, {"type", "kind"}, "activation layer");
    s = LayerSpec::act(activation_from(j.at("kind").get<std::string>()));
  } else if (type == "flatten") {
    check_keys(j, {"type"}, "flatten layer");
    s = LayerSpec::flat();
  } else {
    throw ConfigError("unknown layer type '" + type + "'");
  }
}

void to_json(json& j, const ModelSpec& s) {
  j = {{"layers", s.layers},
       {"split_index", optional_json(s.split_index)},
       {"head_classes", s.head_classes},
       {"seed", s.seed}};
}

void from_json(const json& j, ModelSpec& s) {
  check_keys(j, {"layers", "split_index", "head_classes", "seed"}, "model");
  read(j, "layers", s.layers);
  read_optional(j, "split_index", s.split_index);
  read(j, "head_classes", s.head_classes);
  read(j, "seed", s.seed);
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate},
       {"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"shuffle_seed", c.shuffle_seed},
       {"momentum", c.momentum}};
}

void from_json(const json& j, TrainConfig& c) {
  check_keys(j, {"learning_rate", "batch_size", "epochs", "shuffle_seed", "momentum"}, "train config");
  read(j, "learning_rate", c.learning_rate);
  read(j, "batch_size", c.batch_size);
  read(j, "epochs", c.epochs);
  read(j, "shuffle_seed", c.shuffle_seed);
  read(j, "momentum", c.momentum);
}

void to_json(json& j, const MaskStrategy& s) {
  j = {{"kind", s.kind == MaskKind::kThreshold ? "threshold" : "bernoulli"},
       {"rho", s.drop_fraction},
       {"bernoulli_seed", s.bernoulli_seed}};
}

void from_json(const json& j, MaskStrategy& s) {
  check_keys(j, {"kind", "rho", "bernoulli_seed"}, "strategy");
  const auto kind = j.value("kind", std::string("threshold"));
  if (kind == "threshold") {
    s.kind = MaskKind::kThreshold;
  } else if (kind == "bernoulli") {
    s.kind = MaskKind::kBernoulli;
  } else {
    throw ConfigError("unknown mask strategy '" + kind + "'");
  }
  read(j, "rho", s.drop_fraction);
  read(j, "bernoulli_seed", s.bernoulli_seed);
}

void to_json(json& j, const ConfoundedImageConfig& c) {
  j = {{"image_size", c.image_size},
       {"num_classes", c.num_classes},
       {"blob_size", c.blob_size},
       {"class_amp", c.class_amp},
       {"patch_size", c.patch_size},
       {"confounder_amp", c.confounder_amp},
       {"background", c.background},
       {"train_correlation", c.train_correlation},
       {"test_correlation", c.test_correlation},
       {"noise_std", c.noise_std},
       {"n_train", c.n_train},
       {"n_test", c.n_test},
       {"seed", c.seed},
       {"confounder_seed", optional_json(c.confounder_seed)}};
}

void from_json(const json& j, ConfoundedImageConfig& c) {
  check_keys(j,
             {"image_size", "num_classes", "blob_size", "class_amp", "patch_size", "confounder_amp",
              "background", "train_correlation", "test_correlation", "noise_std", "n_train",
              "n_test", "seed", "confounder_seed"},
             "image data");
  read(j, "image_size", c.image_size);
  read(j, "num_classes", c.num_classes);
  read(j, "blob_size", c.blob_size);
  read(j, "class_amp", c.class_amp);
  read(j, "patch_size", c.patch_size);
  read(j, "confounder_amp", c.confounder_amp);
  read(j, "background", c.background);
  read(j, "train_correlation", c.train_correlation);
  read(j, "test_correlation", c.test_correlation);
  read(j, "noise_std", c.noise_std);
  read(j, "n_train", c.n_train);
  read(j, "n_test", c.n_test);
  read(j, "seed", c.seed);
  read_optional(j, "confounder_seed", c.confounder_seed);
}

void to_json(json& j, const ToyConfig& c) {
  j = {{"seed", c.seed},
       {"n", c.n},
       {"signal_weight", c.signal_weight},
       {"confounder_weight", c.confounder_weight},
       {"train_correlation", c.train_correlation},
       {"test_correlation", c.test_correlation},
       {"noise_std", c.noise_std},
       {"confounder_seed", optional_json(c.confounder_seed)}};
}

void from_json(const json& j, ToyConfig& c) {
  check_keys(j,
             {"seed", "n", "signal_weight", "confounder_weight", "train_correlation",
              "test_correlation", "noise_std", "confounder_seed"},
             "toy data");
  read(j, "seed", c.seed);
  read(j, "n", c.n);
  read(j, "signal_weight", c.signal_weight);
  read(j, "confounder_weight", c.confounder_weight);
  read(j, "train_correlation", c.train_correlation);
  read(j, "test_correlation", c.test_correlation);
  read(j, "noise_std", c.noise_std);
  read_optional(j, "confounder_seed", c.confounder_seed);
}

void to_json(json& j, const DataSource& d) {
  switch (d.kind) {
    case DataSource::Kind::kImages: j = {{"kind", "images"}, {"images", d.images}}; break;
    case DataSource::Kind::kToy: j = {{"kind", "toy"}, {"toy", d.toy}}; break;
    case DataSource::Kind::kBundle: j = {{"kind", "bundle"}, {"path", d.bundle_path}}; break;
  }
}

void from_json(const json& j, DataSource& d) {
  check_keys(j, {"kind", "images", "toy", "path"}, "data");
  const auto kind = j.value("kind", std::string("images"));
  if (kind == "images") {
    d.kind = DataSource::Kind::kImages;
    read(j, "images", d.images);
  } else if (kind == "toy") {
    d.kind = DataSource::Kind::kToy;
    read(j, "toy", d.toy);
  } else if (kind == "bundle") {
    d.kind = DataSource::Kind::kBundle;
    d.bundle_path = j.at("path").get<std::string>();
  } else {
    throw ConfigError("unknown data kind '" + kind + "'");
  }
}

void to_json(json& j, const ExperimentConfig& c) {
  j = {{"data", c.data},
       {"model", c.model},
       {"phase1", c.phase1},
       {"phase2", c.phase2},
       {"strategy", c.strategy},
       {"head_seed", c.head_seed},
       {"confounder_classes", c.confounder_classes},
       {"seeds", c.seeds},
       {"output_dir", c.output_dir}};
}

void from_json(const json& j, ExperimentConfig& c) {
  check_keys(j,
             {"data", "model", "phase1", "phase2", "strategy", "head_seed", "confounder_classes",
              "seeds", "output_dir"},
             "experiment");
  read(j, "data", c.data);
  const ExperimentConfig defaults = c.data.kind == DataSource::Kind::kToy
                                        ? default_toy_experiment()
                                        : default_image_experiment();
  c.model = c.data.kind == DataSource::Kind::kImages ? default_image_model(c.data.images)
                                                     : defaults.model;
  c.phase1 = defaults.phase1;
  c.phase2 = defaults.phase2;
  read(j, "model", c.model);
  read(j, "phase1", c.phase1);
  read(j, "phase2", c.phase2);
  read(j, "strategy", c.strategy);
  read(j, "head_seed", c.head_seed);
  read(j, "confounder_classes", c.confounder_classes);
  read(j, "seeds", c.seeds);
  read(j, "output_dir", c.output_dir);
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  ExperimentConfig config;
  try {
    config = json::parse(text).get<ExperimentConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid experiment config: ") + e.what());
  }
  config.validate();
  return config;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return parse_experiment_config(text);
}

std::string experiment_config_text(const ExperimentConfig& config) {
  return json(config).dump(2) + "\n";
}

}  // namespace cfilter
