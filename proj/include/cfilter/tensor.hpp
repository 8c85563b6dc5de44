#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cfilter/errors.hpp"

namespace cfilter {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl;

// One recorded operation. `backward` receives the gradient of the node's
// output and accumulates into the gradients of `inputs`.
struct ComputeNode {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(std::span<const double> out_grad)> backward;
  bool consumed = false;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until populated
  bool requires_grad = false;
  std::shared_ptr<ComputeNode> grad_fn;

  // Adds `g` into this tensor's gradient slot, allocating it on first use.
  void accumulate(std::span<const double> g);
};
}  // namespace detail

// Dense row-major array of doubles with an optional gradient slot.
//
// A Tensor is a shared handle: copies alias the same storage. Use clone() for
// an independent leaf. Values are immutable once created except through
// mutable_values() on leaves, which is how optimizers update parameters.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::span<const double> values() const;
  double item() const;
  double at(std::size_t flat_index) const { return values()[flat_index]; }

  // Only leaves (tensors not produced by a recorded op) may be written.
  std::span<double> mutable_values();

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;

  bool has_grad() const;
  // Empty span when no gradient has been populated.
  std::span<const double> grad() const;
  void zero_grad();   // grad := zeros (allocated)
  void clear_grad();  // grad := absent

  // Reverse-mode sweep from this scalar. Every requires_grad tensor reachable
  // from it receives d(this)/d(tensor) accumulated into its grad slot. A graph
  // can be swept once; a second call throws GraphError.
  void backward() const;

  // Independent leaf copy of the values (no graph, no grad).
  Tensor clone() const;
  Tensor detach() const;

  // Used by operation implementations.
  static Tensor from_op(Shape shape, std::vector<double> values,
                        std::string op, std::vector<Tensor> inputs,
                        std::function<void(std::span<const double>)> backward);
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl);
  std::shared_ptr<detail::TensorImpl> impl_;
};

// While alive on the current thread, operations do not record graphs.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

// Binary record: 1 byte rank, rank x u32 LE dims, then f64 LE values.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace cfilter
