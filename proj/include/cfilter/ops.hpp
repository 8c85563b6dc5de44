#pragma once

#include <span>

#include "cfilter/tensor.hpp"

namespace cfilter {

// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// Sum of all elements, shape [1].
Tensor sum(const Tensor& a);

// x: [N x F] with bias [F], or [N x C x H x W] with bias [C] (per channel).
Tensor add_bias(const Tensor& x, const Tensor& bias);

// Cross-correlation of [N x C x H x W] with [F x C x kh x kw].
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride,
              std::size_t padding);

// Non-overlapping pooling with window = stride = size over the last two dims.
Tensor max_pool2d(const Tensor& input, std::size_t size);
Tensor avg_pool2d(const Tensor& input, std::size_t size);

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor reshape(const Tensor& x, const Shape& shape);
// [N x ...] -> [N x prod(...)]
Tensor flatten(const Tensor& x);

// Mean over the batch of -log softmax(logits)[label].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

// Mean over the batch (first dim) of the summed squared error.
Tensor squared_error(const Tensor& pred, const Tensor& target);

}  // namespace cfilter
