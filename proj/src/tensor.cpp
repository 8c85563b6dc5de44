#include "cfilter/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

namespace cfilter {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {
void TensorImpl::accumulate(std::span<const double> g) {
  if (grad.empty()) grad.assign(values.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}
}  // namespace detail

namespace {
thread_local bool g_grad_enabled = true;

void check_finite(std::span<const double> v, const std::string& what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericFault("non-finite value produced by " + what);
  }
}
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_mode_enabled() { return g_grad_enabled; }

Tensor::Tensor() = default;

Tensor::Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return Tensor(shape, std::vector<double>(shape_numel(shape), value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::numel() const { return impl_->values.size(); }
std::span<const double> Tensor::values() const { return impl_->values; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->values[0];
}

std::span<double> Tensor::mutable_values() {
  if (impl_->grad_fn) throw GraphError("cannot write values of a non-leaf tensor");
  return impl_->values;
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (impl_->grad_fn) throw GraphError("requires_grad can only be changed on leaves");
  impl_->requires_grad = flag;
}

bool Tensor::is_leaf() const { return impl_->grad_fn == nullptr; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }
void Tensor::zero_grad() { impl_->grad.assign(impl_->values.size(), 0.0); }
void Tensor::clear_grad() { impl_->grad.clear(); }

Tensor Tensor::clone() const { return Tensor(impl_->shape, impl_->values, false); }

Tensor Tensor::detach() const { return clone(); }

Tensor Tensor::from_op(Shape shape, std::vector<double> values, std::string op,
                       std::vector<Tensor> inputs,
                       std::function<void(std::span<const double>)> backward) {
  check_finite(values, op);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (any && g_grad_enabled) {
    impl->requires_grad = true;
    auto node = std::make_shared<detail::ComputeNode>();
    node->op = std::move(op);
    for (auto& t : inputs) node->inputs.push_back(t.impl_);
    node->backward = std::move(backward);
    impl->grad_fn = std::move(node);
  }
  return Tensor(std::move(impl));
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw GraphError("backward requires a scalar loss, got shape " + shape_str(shape()));
  }
  if (!impl_->requires_grad) {
    throw GraphError("backward on a tensor detached from any parameter");
  }

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> seen;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto& fn = node->grad_fn;
    if (fn && next < fn->inputs.size()) {
      auto* child = fn->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  for (auto* node : order) {
    if (node->grad_fn && node->grad_fn->consumed) {
      throw GraphError("double backward: graph through '" + node->grad_fn->op +
                       "' was already swept");
    }
  }
  for (auto* node : order) {
    if (node->grad_fn) node->grad_fn->consumed = true;
  }

  const double one = 1.0;
  impl_->accumulate(std::span<const double>(&one, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (!node->grad_fn || node->grad.empty()) continue;
    node->grad_fn->backward(node->grad);
  }
  for (auto* node : order) {
    if (!node->grad_fn) check_finite(node->grad, "backward");
  }
}

// ---- serialization -------------------------------------------------------

namespace {
void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  out.write(b, 4);
}

void put_f64(std::ostream& out, double d) {
  auto v = std::bit_cast<std::uint64_t>(d);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  out.write(b, 8);
}

void get_bytes(std::istream& in, char* dst, std::size_t n) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw FormatError("truncated tensor record");
  }
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  get_bytes(in, reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}
}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  if (t.rank() > 255) throw FormatError("tensor rank exceeds 255");
  out.put(static_cast<char>(t.rank()));
  for (auto d : t.shape()) {
    if (d > 0xFFFFFFFFu) throw FormatError("tensor dimension exceeds u32");
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  for (double v : t.values()) put_f64(out, v);
  if (!out) throw FormatError("failed writing tensor record");
}

Tensor read_tensor(std::istream& in) {
  char rank_byte = 0;
  get_bytes(in, &rank_byte, 1);
  const auto rank = static_cast<unsigned char>(rank_byte);
  if (rank == 0) throw FormatError("tensor record with rank 0");
  Shape shape(rank);
  for (auto& d : shape) {
    d = get_u32(in);
    if (d == 0) throw FormatError("tensor record with zero dimension");
  }
  std::vector<double> values(shape_numel(shape));
  std::vector<unsigned char> raw(values.size() * 8);
  get_bytes(in, reinterpret_cast<char*>(raw.data()), raw.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(raw[i * 8 + k]) << (8 * k);
    values[i] = std::bit_cast<double>(v);
  }
  return Tensor(std::move(shape), std::move(values));
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  write_tensor(out, t);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open for reading: " + path);
  return read_tensor(in);
}

}  // namespace cfilter
