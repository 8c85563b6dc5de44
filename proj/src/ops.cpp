#include "cfilter/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cfilter {

using Impl = std::shared_ptr<detail::TensorImpl>;

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  Impl xi = x.impl();
  // deriv(input, output) -> d output / d input
  auto outv = std::make_shared<std::vector<double>>(out);
  return Tensor::from_op(x.shape(), std::move(out), op, {x},
                         [xi, outv, deriv](std::span<const double> g) {
                           if (!xi->requires_grad) return;
                           std::vector<double> d(g.size());
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             d[i] = g[i] * deriv(xi->values[i], (*outv)[i]);
                           }
                           xi->accumulate(d);
                         });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += aip * bv[p * n + j];
    }
  }
  Impl ai = a.impl(), bi = b.impl();
  return Tensor::from_op({m, n}, std::move(c), "matmul", {a, b},
                         [ai, bi, m, k, n](std::span<const double> g) {
                           if (ai->requires_grad) {
                             // dA = dC . B^T
                             std::vector<double> da(m * k, 0.0);
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t p = 0; p < k; ++p) {
                                 double s = 0.0;
                                 for (std::size_t j = 0; j < n; ++j)
                                   s += g[i * n + j] * bi->values[p * n + j];
                                 da[i * k + p] = s;
                               }
                             ai->accumulate(da);
                           }
                           if (bi->requires_grad) {
                             // dB = A^T . dC
                             std::vector<double> db(k * n, 0.0);
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t p = 0; p < k; ++p) {
                                 const double aip = ai->values[i * k + p];
                                 for (std::size_t j = 0; j < n; ++j)
                                   db[p * n + j] += aip * g[i * n + j];
                               }
                             bi->accumulate(db);
                           }
                         });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  Impl ai = a.impl(), bi = b.impl();
  return Tensor::from_op(a.shape(), std::move(out), "add", {a, b},
                         [ai, bi](std::span<const double> g) {
                           if (ai->requires_grad) ai->accumulate(g);
                           if (bi->requires_grad) bi->accumulate(g);
                         });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  Impl ai = a.impl(), bi = b.impl();
  return Tensor::from_op(a.shape(), std::move(out), "mul", {a, b},
                         [ai, bi](std::span<const double> g) {
                           if (ai->requires_grad) {
                             std::vector<double> d(g.size());
                             for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * bi->values[i];
                             ai->accumulate(d);
                           }
                           if (bi->requires_grad) {
                             std::vector<double> d(g.size());
                             for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * ai->values[i];
                             bi->accumulate(d);
                           }
                         });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * factor;
  Impl ai = a.impl();
  return Tensor::from_op(a.shape(), std::move(out), "scale", {a},
                         [ai, factor](std::span<const double> g) {
                           if (!ai->requires_grad) return;
                           std::vector<double> d(g.size());
                           for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * factor;
                           ai->accumulate(d);
                         });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  Impl ai = a.impl();
  return Tensor::from_op({1}, {s}, "sum", {a}, [ai](std::span<const double> g) {
    if (!ai->requires_grad) return;
    std::vector<double> d(ai->values.size(), g[0]);
    ai->accumulate(d);
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.rank() < 2 || x.shape()[1] != bias.shape()[0]) {
    throw ShapeError("add_bias: shape mismatch " + shape_str(x.shape()) + " + " +
                     shape_str(bias.shape()));
  }
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  const std::size_t inner = x.numel() / (n * c);
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto bv = bias.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t r = 0; r < inner; ++r) out[(i * c + ch) * inner + r] += bv[ch];
  Impl xi = x.impl(), bi = bias.impl();
  return Tensor::from_op(x.shape(), std::move(out), "add_bias", {x, bias},
                         [xi, bi, n, c, inner](std::span<const double> g) {
                           if (xi->requires_grad) xi->accumulate(g);
                           if (bi->requires_grad) {
                             std::vector<double> db(c, 0.0);
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t ch = 0; ch < c; ++ch)
                                 for (std::size_t r = 0; r < inner; ++r)
                                   db[ch] += g[(i * c + ch) * inner + r];
                             bi->accumulate(db);
                           }
                         });
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride,
              std::size_t padding) {
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw ShapeError("conv2d: expected rank-4 input and kernel, got " + shape_str(input.shape()) +
                     " and " + shape_str(kernel.shape()));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t n = input.shape()[0], c = input.shape()[1], h = input.shape()[2],
                    w = input.shape()[3];
  const std::size_t f = kernel.shape()[0], kc = kernel.shape()[1], kh = kernel.shape()[2],
                    kw = kernel.shape()[3];
  if (kc != c) {
    throw ShapeError("conv2d: channel mismatch, input " + shape_str(input.shape()) +
                     " kernel " + shape_str(kernel.shape()));
  }
  const std::size_t ph = h + 2 * padding, pw = w + 2 * padding;
  if (ph < kh || pw < kw || (ph - kh) % stride != 0 || (pw - kw) % stride != 0) {
    throw ShapeError("conv2d: non-integer output size for input " + shape_str(input.shape()) +
                     " kernel " + shape_str(kernel.shape()) + " stride " + std::to_string(stride) +
                     " padding " + std::to_string(padding));
  }
  const std::size_t oh = (ph - kh) / stride + 1, ow = (pw - kw) / stride + 1;
  const auto iv = input.values();
  const auto kv = kernel.values();
  std::vector<double> out(n * f * oh * ow, 0.0);

  // Visits every (output, input, kernel) triple that touches a non-padded
  // input pixel; shared by the forward and both backward rules.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t o = 0; o < f; ++o)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t x = 0; x < ow; ++x) {
            const std::size_t oidx = ((b * f + o) * oh + y) * ow + x;
            for (std::size_t ch = 0; ch < c; ++ch)
              for (std::size_t ky = 0; ky < kh; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + ky) -
                                          static_cast<std::ptrdiff_t>(padding);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * stride + kx) -
                                            static_cast<std::ptrdiff_t>(padding);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                  const std::size_t iidx =
                      ((b * c + ch) * h + static_cast<std::size_t>(iy)) * w +
                      static_cast<std::size_t>(ix);
                  const std::size_t kidx = ((o * c + ch) * kh + ky) * kw + kx;
                  fn(oidx, iidx, kidx);
                }
              }
          }
  };

  for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) { out[o] += iv[i] * kv[k]; });

  Impl ii = input.impl(), ki = kernel.impl();
  return Tensor::from_op(
      {n, f, oh, ow}, std::move(out), "conv2d", {input, kernel},
      [ii, ki, for_each_tap](std::span<const double> g) {
        if (ii->requires_grad) {
          std::vector<double> di(ii->values.size(), 0.0);
          const auto& kvals = ki->values;
          for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) { di[i] += g[o] * kvals[k]; });
          ii->accumulate(di);
        }
        if (ki->requires_grad) {
          std::vector<double> dk(ki->values.size(), 0.0);
          const auto& ivals = ii->values;
          for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) { dk[k] += g[o] * ivals[i]; });
          ki->accumulate(dk);
        }
      });
}

namespace {
struct PoolGeometry {
  std::size_t outer, h, w, oh, ow, size;
};

PoolGeometry pool_geometry(const Tensor& input, std::size_t size, const char* op) {
  if (input.rank() != 4) throw ShapeError(std::string(op) + ": expected rank-4 input, got " + shape_str(input.shape()));
  if (size == 0) throw ShapeError(std::string(op) + ": window must be positive");
  const auto& s = input.shape();
  if (s[2] % size != 0 || s[3] % size != 0) {
    throw ShapeError(std::string(op) + ": window " + std::to_string(size) +
                     " does not tile input " + shape_str(s));
  }
  return {s[0] * s[1], s[2], s[3], s[2] / size, s[3] / size, size};
}
}  // namespace

Tensor max_pool2d(const Tensor& input, std::size_t size) {
  const auto geo = pool_geometry(input, size, "max_pool2d");
  const auto iv = input.values();
  std::vector<double> out(geo.outer * geo.oh * geo.ow);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t p = 0; p < geo.outer; ++p)
    for (std::size_t y = 0; y < geo.oh; ++y)
      for (std::size_t x = 0; x < geo.ow; ++x) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t dy = 0; dy < size; ++dy)
          for (std::size_t dx = 0; dx < size; ++dx) {
            const std::size_t idx = (p * geo.h + y * size + dy) * geo.w + x * size + dx;
            // first maximum wins on ties
            if (iv[idx] > best) {
              best = iv[idx];
              best_idx = idx;
            }
          }
        const std::size_t o = (p * geo.oh + y) * geo.ow + x;
        out[o] = best;
        argmax[o] = best_idx;
      }
  Impl ii = input.impl();
  Shape shape{input.shape()[0], input.shape()[1], geo.oh, geo.ow};
  return Tensor::from_op(shape, std::move(out), "max_pool2d", {input},
                         [ii, argmax = std::move(argmax)](std::span<const double> g) {
                           if (!ii->requires_grad) return;
                           std::vector<double> d(ii->values.size(), 0.0);
                           for (std::size_t o = 0; o < g.size(); ++o) d[argmax[o]] += g[o];
                           ii->accumulate(d);
                         });
}

Tensor avg_pool2d(const Tensor& input, std::size_t size) {
  const auto geo = pool_geometry(input, size, "avg_pool2d");
  const auto iv = input.values();
  const double inv = 1.0 / static_cast<double>(size * size);
  std::vector<double> out(geo.outer * geo.oh * geo.ow, 0.0);
  for (std::size_t p = 0; p < geo.outer; ++p)
    for (std::size_t y = 0; y < geo.oh; ++y)
      for (std::size_t x = 0; x < geo.ow; ++x) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < size; ++dy)
          for (std::size_t dx = 0; dx < size; ++dx)
            s += iv[(p * geo.h + y * size + dy) * geo.w + x * size + dx];
        out[(p * geo.oh + y) * geo.ow + x] = s * inv;
      }
  Impl ii = input.impl();
  Shape shape{input.shape()[0], input.shape()[1], geo.oh, geo.ow};
  return Tensor::from_op(shape, std::move(out), "avg_pool2d", {input},
                         [ii, geo, inv](std::span<const double> g) {
                           if (!ii->requires_grad) return;
                           std::vector<double> d(ii->values.size(), 0.0);
                           for (std::size_t p = 0; p < geo.outer; ++p)
                             for (std::size_t y = 0; y < geo.oh; ++y)
                               for (std::size_t x = 0; x < geo.ow; ++x) {
                                 const double go = g[(p * geo.oh + y) * geo.ow + x] * inv;
                                 for (std::size_t dy = 0; dy < geo.size; ++dy)
                                   for (std::size_t dx = 0; dx < geo.size; ++dx)
                                     d[(p * geo.h + y * geo.size + dy) * geo.w + x * geo.size + dx] += go;
                               }
                           ii->accumulate(d);
                         });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double, double out) { return 1.0 - out * out; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double out) { return out * (1.0 - out); });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  Impl xi = x.impl();
  return Tensor::from_op(shape, std::move(out), "reshape", {x},
                         [xi](std::span<const double> g) {
                           if (xi->requires_grad) xi->accumulate(g);
                         });
}

Tensor flatten(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("flatten: rank-0 tensor");
  const std::size_t n = x.shape()[0];
  return reshape(x, {n, x.numel() / n});
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) {
    throw ShapeError("softmax_cross_entropy: expected [N x K] logits, got " +
                     shape_str(logits.shape()));
  }
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(n));
  }
  const auto lv = logits.values();
  auto probs = std::make_shared<std::vector<double>>(n * k);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(label) +
                       " out of range [0, " + std::to_string(k) + ")");
    }
    const double* row = lv.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double log_z = std::log(z);
    for (std::size_t j = 0; j < k; ++j) (*probs)[i * k + j] = std::exp(row[j] - mx - log_z);
    loss -= row[label] - mx - log_z;
  }
  loss /= static_cast<double>(n);
  std::vector<int> owned(labels.begin(), labels.end());
  Impl li = logits.impl();
  return Tensor::from_op({1}, {loss}, "softmax_cross_entropy", {logits},
                         [li, probs, owned = std::move(owned), n, k](std::span<const double> g) {
                           if (!li->requires_grad) return;
                           std::vector<double> d(*probs);
                           const double s = g[0] / static_cast<double>(n);
                           for (std::size_t i = 0; i < n; ++i) {
                             d[i * k + static_cast<std::size_t>(owned[i])] -= 1.0;
                             for (std::size_t j = 0; j < k; ++j) d[i * k + j] *= s;
                           }
                           li->accumulate(d);
                         });
}

Tensor squared_error(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "squared_error");
  const std::size_t n = pred.shape()[0];
  double s = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double r = pred.at(i) - target.at(i);
    s += r * r;
  }
  s /= static_cast<double>(n);
  Impl pi = pred.impl(), ti = target.impl();
  return Tensor::from_op({1}, {s}, "squared_error", {pred, target},
                         [pi, ti, n](std::span<const double> g) {
                           const double c = 2.0 * g[0] / static_cast<double>(n);
                           std::vector<double> d(pi->values.size());
                           for (std::size_t i = 0; i < d.size(); ++i)
                             d[i] = c * (pi->values[i] - ti->values[i]);
                           if (pi->requires_grad) pi->accumulate(d);
                           if (ti->requires_grad) {
                             for (auto& v : d) v = -v;
                             ti->accumulate(d);
                           }
                         });
}

}  // namespace cfilter
