#pragma once

#include <optional>
#include <vector>

#include "oct4d/autograd.hpp"

namespace oct4d {

enum class ElementwiseOp { add, sub, mul, relu, sigmoid, tanh };

// Binary ops broadcast numpy-style: shapes are right-aligned and singleton
// axes stretch. Mismatches throw std::invalid_argument naming both shapes.
template <typename T>
Var<T> elementwise(ElementwiseOp op, const Var<T>& a, const std::optional<Var<T>>& b = std::nullopt);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> sigmoid(const Var<T>& x);
template <typename T>
Var<T> tanh(const Var<T>& x);

// scale * x + shift
template <typename T>
Var<T> affine(const Var<T>& x, T scale, T shift);

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

// Single-element results of shape [1].
template <typename T>
Var<T> sum(const Var<T>& x);
template <typename T>
Var<T> mean(const Var<T>& x);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

// Entries [start, start + length) along `axis`.
template <typename T>
Var<T> narrow(const Var<T>& x, int axis, std::int64_t start, std::int64_t length);
// Keeps `axis` with extent 1.
template <typename T>
Var<T> slice(const Var<T>& x, int axis, std::int64_t index);
template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis);

// Mean over the contiguous axes [first, last]; those axes are removed.
template <typename T>
Var<T> mean_axes(const Var<T>& x, int first, int last);

// Mean squared error against a constant target of identical shape.
template <typename T>
Var<T> mse_loss(const Var<T>& pred, const Tensor<T>& target);

// x[b x c] * W[c x out] + bias[out]
template <typename T>
Var<T> dense(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

}  // namespace oct4d
