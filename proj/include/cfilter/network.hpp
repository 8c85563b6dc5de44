#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cfilter/tensor.hpp"

namespace cfilter {

enum class LayerKind { kDense, kConv, kPool, kActivation, kFlatten };
enum class PoolKind { kMax, kAvg };
enum class ActivationKind { kRelu, kTanh, kSigmoid };

// Which part of the network a parameter belongs to: the representation
// learner below the split, the classifier between the split and the output
// layer, or the output layer itself.
enum class Component { kRepresentation, kClassifier, kHead };
using ComponentSet = std::set<Component>;

const char* to_string(Component c);
const ComponentSet& all_components();

struct LayerSpec {
  LayerKind kind = LayerKind::kFlatten;
  // dense: features in/out; conv: channels in/out
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;
  PoolKind pool = PoolKind::kMax;
  std::size_t size = 0;
  ActivationKind activation = ActivationKind::kRelu;

  static LayerSpec dense(std::size_t in, std::size_t out);
  static LayerSpec conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                        std::size_t stride = 1, std::size_t pad = 0);
  static LayerSpec pool2d(PoolKind kind, std::size_t size);
  static LayerSpec act(ActivationKind kind);
  static LayerSpec flat();

  std::string describe() const;
  bool operator==(const LayerSpec&) const = default;
};

struct ModelSpec {
  // Layers below the output head, in order.
  std::vector<LayerSpec> layers;
  // First layer of the classifier component. Unset means "after the last
  // conv/pool/flatten layer".
  std::optional<std::size_t> split_index;
  std::size_t head_classes = 2;
  std::uint64_t seed = 0;

  std::size_t resolved_split() const;
  bool operator==(const ModelSpec&) const = default;
};

// Stable identity of one scalar parameter. Offsets run through the layer's
// weight tensor first, then its bias.
struct ParamId {
  std::uint32_t layer = 0;
  std::uint32_t offset = 0;
  auto operator<=>(const ParamId&) const = default;
};

struct Layer {
  LayerSpec spec;
  Component component = Component::kRepresentation;
  Tensor weight;  // dense: [in x out]; conv: [F x C x k x k]
  Tensor bias;    // dense: [out]; conv: [F]
  Shape out_shape;  // per sample

  bool has_params() const { return weight.defined(); }
  std::size_t param_count() const {
    return has_params() ? weight.numel() + bias.numel() : 0;
  }
};

// A realized network: layers of `spec` followed by a dense head.
//
// Copies are deep; two models never share parameter storage.
class Model {
 public:
  Model() = default;
  Model(ModelSpec spec, Shape input_shape, std::vector<Layer> layers);
  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelSpec& spec() const { return spec_; }
  const Shape& input_shape() const { return input_shape_; }
  std::size_t num_classes() const { return spec_.head_classes; }

  // Includes the head, which is always last.
  std::size_t layer_count() const { return layers_.size(); }
  std::size_t head_index() const { return layers_.size() - 1; }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  Layer& layer(std::size_t i) { return layers_.at(i); }

  // Registry order: ascending layer, weights then bias.
  std::vector<ParamId> param_ids() const;
  std::vector<ParamId> param_ids(const ComponentSet& tags) const;
  std::size_t param_count() const;
  std::size_t param_count(const ComponentSet& tags) const;

  Component component(ParamId id) const;
  double param(ParamId id) const;
  void set_param(ParamId id, double value);

  // Parameter values of the selected components in registry order.
  std::vector<double> snapshot(const ComponentSet& tags) const;

  void zero_grad();
  void clear_grad();

 private:
  const Tensor& tensor_for(ParamId id, std::size_t& local) const;

  ModelSpec spec_;
  Shape input_shape_;
  std::vector<Layer> layers_;
};

// Per-sample output shape of every layer, head included. Throws ShapeError
// naming the first incompatible layer.
std::vector<Shape> infer_shapes(const ModelSpec& spec, const Shape& input_shape);

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, drawn from
// one generator seeded with spec.seed in registry order.
Model build_model(const ModelSpec& spec, const Shape& input_shape);

// Logits [N x K] for a batch [N x input_shape...].
Tensor forward(const Model& model, const Tensor& batch);

// Copy of `model` whose head is a fresh dense layer with `num_classes`
// outputs seeded by `seed`. Representation and classifier parameters are
// copied bit-for-bit and keep their ParamIds.
Model replace_head(const Model& model, std::size_t num_classes, std::uint64_t seed);

// requires_grad := (component in tags) for every parameter tensor.
void set_trainable(Model& model, const ComponentSet& tags);

std::string spec_to_text(const ModelSpec& spec);
ModelSpec spec_from_text(const std::string& text);

// "CFM1", one line of canonical spec text, then parameter tensors in
// registry order as binary tensor records.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);
std::string checkpoint_bytes(const Model& model);

}  // namespace cfilter
