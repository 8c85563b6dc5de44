#include "cfilter/network.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "cfilter/config.hpp"
#include "cfilter/ops.hpp"
#include "cfilter/rng.hpp"

namespace cfilter {

const char* to_string(Component c) {
  switch (c) {
    case Component::kRepresentation: return "representation";
    case Component::kClassifier: return "classifier";
    case Component::kHead: return "head";
  }
  return "?";
}

const ComponentSet& all_components() {
  static const ComponentSet all{Component::kRepresentation, Component::kClassifier,
                                Component::kHead};
  return all;
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) {
  LayerSpec s;
  s.kind = LayerKind::kDense;
  s.in = in;
  s.out = out;
  return s;
}

LayerSpec LayerSpec::conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                          std::size_t stride, std::size_t pad) {
  LayerSpec s;
  s.kind = LayerKind::kConv;
  s.in = in_channels;
  s.out = out_channels;
  s.kernel = kernel;
  s.stride = stride;
  s.pad = pad;
  return s;
}

LayerSpec LayerSpec::pool2d(PoolKind kind, std::size_t size) {
  LayerSpec s;
  s.kind = LayerKind::kPool;
  s.pool = kind;
  s.size = size;
  return s;
}

LayerSpec LayerSpec::act(ActivationKind kind) {
  LayerSpec s;
  s.kind = LayerKind::kActivation;
  s.activation = kind;
  return s;
}

LayerSpec LayerSpec::flat() { return LayerSpec{}; }

std::string LayerSpec::describe() const {
  std::ostringstream os;
  switch (kind) {
    case LayerKind::kDense: os << "dense(" << in << "->" << out << ")"; break;
    case LayerKind::kConv:
      os << "conv(" << in << "->" << out << ", k" << kernel << " s" << stride << " p" << pad << ")";
      break;
    case LayerKind::kPool: os << (pool == PoolKind::kMax ? "maxpool(" : "avgpool(") << size << ")"; break;
    case LayerKind::kActivation: os << "activation"; break;
    case LayerKind::kFlatten: os << "flatten"; break;
  }
  return os.str();
}

std::size_t ModelSpec::resolved_split() const {
  if (split_index) return *split_index;
  std::size_t split = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto k = layers[i].kind;
    if (k == LayerKind::kConv || k == LayerKind::kPool || k == LayerKind::kFlatten) split = i + 1;
  }
  return split;
}

// ---- Model ---------------------------------------------------------------

namespace {
Tensor deep_copy(const Tensor& t) {
  if (!t.defined()) return t;
  Tensor c = t.clone();
  c.set_requires_grad(t.requires_grad());
  return c;
}
}  // namespace

Model::Model(ModelSpec spec, Shape input_shape, std::vector<Layer> layers)
    : spec_(std::move(spec)), input_shape_(std::move(input_shape)), layers_(std::move(layers)) {}

Model::Model(const Model& other)
    : spec_(other.spec_), input_shape_(other.input_shape_), layers_(other.layers_) {
  for (auto& l : layers_) {
    l.weight = deep_copy(l.weight);
    l.bias = deep_copy(l.bias);
  }
}

Model& Model::operator=(const Model& other) {
  if (this != &other) *this = Model(other);
  return *this;
}

std::vector<ParamId> Model::param_ids() const { return param_ids(all_components()); }

std::vector<ParamId> Model::param_ids(const ComponentSet& tags) const {
  std::vector<ParamId> ids;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (!tags.count(l.component)) continue;
    for (std::size_t k = 0; k < l.param_count(); ++k) {
      ids.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(k)});
    }
  }
  return ids;
}

std::size_t Model::param_count() const { return param_count(all_components()); }

std::size_t Model::param_count(const ComponentSet& tags) const {
  std::size_t n = 0;
  for (const auto& l : layers_)
    if (tags.count(l.component)) n += l.param_count();
  return n;
}

Component Model::component(ParamId id) const { return layers_.at(id.layer).component; }

const Tensor& Model::tensor_for(ParamId id, std::size_t& local) const {
  const auto& l = layers_.at(id.layer);
  if (id.offset >= l.param_count()) {
    throw std::out_of_range("parameter offset " + std::to_string(id.offset) + " out of range for layer " +
                            std::to_string(id.layer));
  }
  if (id.offset < l.weight.numel()) {
    local = id.offset;
    return l.weight;
  }
  local = id.offset - l.weight.numel();
  return l.bias;
}

double Model::param(ParamId id) const {
  std::size_t local = 0;
  return tensor_for(id, local).at(local);
}

void Model::set_param(ParamId id, double value) {
  std::size_t local = 0;
  auto t = tensor_for(id, local);
  t.mutable_values()[local] = value;
}

std::vector<double> Model::snapshot(const ComponentSet& tags) const {
  std::vector<double> out;
  out.reserve(param_count(tags));
  for (const auto& l : layers_) {
    if (!tags.count(l.component) || !l.has_params()) continue;
    out.insert(out.end(), l.weight.values().begin(), l.weight.values().end());
    out.insert(out.end(), l.bias.values().begin(), l.bias.values().end());
  }
  return out;
}

void Model::zero_grad() {
  for (auto& l : layers_) {
    if (!l.has_params()) continue;
    l.weight.zero_grad();
    l.bias.zero_grad();
  }
}

void Model::clear_grad() {
  for (auto& l : layers_) {
    if (!l.has_params()) continue;
    l.weight.clear_grad();
    l.bias.clear_grad();
  }
}

// ---- construction --------------------------------------------------------

std::vector<Shape> infer_shapes(const ModelSpec& spec, const Shape& input_shape) {
  const std::size_t split = spec.resolved_split();
  if (split == 0 || split >= spec.layers.size()) {
    throw ConfigError("split index " + std::to_string(split) + " must lie in (0, " +
                      std::to_string(spec.layers.size()) + ")");
  }
  if (spec.head_classes == 0) throw ConfigError("head must have at least one class");
  if (input_shape.empty()) throw ShapeError("empty input shape");

  std::vector<Shape> shapes;
  Shape cur = input_shape;
  auto fail = [&](std::size_t i, const std::string& name, const std::string& why) -> void {
    throw ShapeError("layer " + std::to_string(i) + " (" + name + "): " + why + " for input " +
                     shape_str(cur));
  };
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::kDense:
        if (cur.size() != 1 || cur[0] != l.in || l.out == 0) fail(i, l.describe(), "incompatible");
        cur = {l.out};
        break;
      case LayerKind::kConv: {
        if (cur.size() != 3 || cur[0] != l.in || l.out == 0 || l.kernel == 0 || l.stride == 0) {
          fail(i, l.describe(), "incompatible");
        }
        const std::size_t ph = cur[1] + 2 * l.pad, pw = cur[2] + 2 * l.pad;
        if (ph < l.kernel || pw < l.kernel || (ph - l.kernel) % l.stride || (pw - l.kernel) % l.stride) {
          fail(i, l.describe(), "non-integer output size");
        }
        cur = {l.out, (ph - l.kernel) / l.stride + 1, (pw - l.kernel) / l.stride + 1};
        break;
      }
      case LayerKind::kPool:
        if (cur.size() != 3 || l.size == 0 || cur[1] % l.size || cur[2] % l.size) {
          fail(i, l.describe(), "window does not tile");
        }
        cur = {cur[0], cur[1] / l.size, cur[2] / l.size};
        break;
      case LayerKind::kActivation: break;
      case LayerKind::kFlatten: cur = {shape_numel(cur)}; break;
    }
    shapes.push_back(cur);
  }
  if (cur.size() != 1) {
    throw ShapeError("layer " + std::to_string(spec.layers.size()) +
                     " (head): expects flat features, got " + shape_str(cur));
  }
  shapes.push_back({spec.head_classes});
  return shapes;
}

namespace {
Layer make_dense(std::size_t in, std::size_t out, Rng& rng, Component component) {
  Layer l;
  l.spec = LayerSpec::dense(in, out);
  l.component = component;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<double> w(in * out);
  for (auto& v : w) v = rng.uniform(-bound, bound);
  l.weight = Tensor({in, out}, std::move(w), true);
  l.bias = Tensor::zeros({out}, true);
  l.out_shape = {out};
  return l;
}
}  // namespace

Model build_model(const ModelSpec& spec, const Shape& input_shape) {
  const auto shapes = infer_shapes(spec, input_shape);
  const std::size_t split = spec.resolved_split();
  Rng rng(spec.seed);
  std::vector<Layer> layers;
  Shape in_shape = input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& ls = spec.layers[i];
    const Component comp = i < split ? Component::kRepresentation : Component::kClassifier;
    if (ls.kind == LayerKind::kDense) {
      layers.push_back(make_dense(ls.in, ls.out, rng, comp));
    } else {
      Layer l;
      l.spec = ls;
      l.component = comp;
      if (ls.kind == LayerKind::kConv) {
        const std::size_t fan_in = ls.in * ls.kernel * ls.kernel;
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::vector<double> w(ls.out * fan_in);
        for (auto& v : w) v = rng.uniform(-bound, bound);
        l.weight = Tensor({ls.out, ls.in, ls.kernel, ls.kernel}, std::move(w), true);
        l.bias = Tensor::zeros({ls.out}, true);
      }
      layers.push_back(std::move(l));
    }
    layers.back().out_shape = shapes[i];
    in_shape = shapes[i];
  }
  layers.push_back(make_dense(in_shape[0], spec.head_classes, rng, Component::kHead));
  return Model(spec, input_shape, std::move(layers));
}

Tensor forward(const Model& model, const Tensor& batch) {
  Shape expected{batch.rank() ? batch.shape()[0] : 0};
  expected.insert(expected.end(), model.input_shape().begin(), model.input_shape().end());
  if (batch.shape() != expected) {
    throw ShapeError("forward: batch shape " + shape_str(batch.shape()) +
                     " does not match model input " + shape_str(model.input_shape()));
  }
  Tensor x = batch;
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    const auto& l = model.layer(i);
    switch (l.spec.kind) {
      case LayerKind::kDense: x = add_bias(matmul(x, l.weight), l.bias); break;
      case LayerKind::kConv: x = add_bias(conv2d(x, l.weight, l.spec.stride, l.spec.pad), l.bias); break;
      case LayerKind::kPool:
        x = l.spec.pool == PoolKind::kMax ? max_pool2d(x, l.spec.size) : avg_pool2d(x, l.spec.size);
        break;
      case LayerKind::kActivation:
        switch (l.spec.activation) {
          case ActivationKind::kRelu: x = relu(x); break;
          case ActivationKind::kTanh: x = tanh(x); break;
          case ActivationKind::kSigmoid: x = sigmoid(x); break;
        }
        break;
      case LayerKind::kFlatten: x = flatten(x); break;
    }
  }
  return x;
}

Model replace_head(const Model& model, std::size_t num_classes, std::uint64_t seed) {
  if (model.layer_count() == 0 || model.layer(model.head_index()).component != Component::kHead) {
    throw ConfigError("replace_head: model has no head layer");
  }
  if (num_classes == 0) throw ConfigError("replace_head: num_classes must be positive");
  const auto& old_head = model.layer(model.head_index());
  Model copy(model);
  Rng rng(seed);
  Layer head = make_dense(old_head.spec.in, num_classes, rng, Component::kHead);
  head.weight.set_requires_grad(old_head.weight.requires_grad());
  head.bias.set_requires_grad(old_head.bias.requires_grad());
  ModelSpec spec = model.spec();
  spec.head_classes = num_classes;
  std::vector<Layer> layers;
  for (std::size_t i = 0; i < copy.head_index(); ++i) layers.push_back(copy.layer(i));
  layers.push_back(std::move(head));
  return Model(std::move(spec), model.input_shape(), std::move(layers));
}

void set_trainable(Model& model, const ComponentSet& tags) {
  if (tags.empty()) throw ConfigError("set_trainable: empty tag set");
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    auto& l = model.layer(i);
    if (!l.has_params()) continue;
    const bool on = tags.count(l.component) > 0;
    l.weight.set_requires_grad(on);
    l.bias.set_requires_grad(on);
    if (!on) {
      l.weight.clear_grad();
      l.bias.clear_grad();
    }
  }
}

// ---- persistence ---------------------------------------------------------

std::string spec_to_text(const ModelSpec& spec) { return nlohmann::json(spec).dump(); }

ModelSpec spec_from_text(const std::string& text) {
  try {
    return nlohmann::json::parse(text).get<ModelSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid model spec: ") + e.what());
  }
}

namespace {
constexpr char kCheckpointMagic[4] = {'C', 'F', 'M', '1'};

void write_checkpoint(std::ostream& out, const Model& model) {
  out.write(kCheckpointMagic, 4);
  nlohmann::json header;
  header["spec"] = model.spec();
  header["input_shape"] = model.input_shape();
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    const auto& l = model.layer(i);
    if (!l.has_params()) continue;
    write_tensor(out, l.weight);
    write_tensor(out, l.bias);
  }
}
}  // namespace

std::string checkpoint_bytes(const Model& model) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, model);
  return os.str();
}

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  write_checkpoint(out, model);
  if (!out) throw Error("failed writing checkpoint: " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open for reading: " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || !std::equal(magic, magic + 4, kCheckpointMagic)) {
    throw FormatError("not a model checkpoint (bad magic): " + path);
  }
  std::string line;
  if (!std::getline(in, line)) throw FormatError("truncated checkpoint header: " + path);
  ModelSpec spec;
  Shape input_shape;
  try {
    const auto header = nlohmann::json::parse(line);
    spec = header.at("spec").get<ModelSpec>();
    input_shape = header.at("input_shape").get<Shape>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  }
  Model model = build_model(spec, input_shape);
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    auto& l = model.layer(i);
    if (!l.has_params()) continue;
    for (Tensor* t : {&l.weight, &l.bias}) {
      Tensor loaded = read_tensor(in);
      if (loaded.shape() != t->shape()) {
        throw FormatError("checkpoint tensor shape " + shape_str(loaded.shape()) +
                          " does not match layer " + std::to_string(i) + " " + shape_str(t->shape()));
      }
      std::copy(loaded.values().begin(), loaded.values().end(), t->mutable_values().begin());
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("trailing bytes after checkpoint tensors: " + path);
  }
  return model;
}

}  // namespace cfilter
