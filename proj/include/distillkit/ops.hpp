#pragma once

#include <span>
#include <vector>

#include "distillkit/tensor.hpp"

namespace dk {

// Elementwise binary ops. Shapes must be equal, or one operand's shape must be
// a trailing suffix of the other's; the shorter operand is then repeated over
// the leading axes. A shape error names both shapes and the op.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor neg(const Tensor& a);

/// a: [..., m, k], b: [..., k, n]. Leading axes must match, or either side may
/// be a plain matrix that is shared across the other's leading axes.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor reshape(const Tensor& a, const Shape& shape);
/// Repeats size-1 axes of `a` to reach `shape` (same rank required).
Tensor expand(const Tensor& a, const Shape& shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
/// Half-open range [start, end) along `axis`.
Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t end);

/// Full reductions return a rank-0 tensor.
Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, int axis, bool keepdim = false);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, int axis, bool keepdim = false);

Tensor exp(const Tensor& a);
/// Natural log; inputs must be positive.
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor relu(const Tensor& a);

/// Tanh approximation:
///   gelu(x) = 0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))
Tensor gelu(const Tensor& a);
double gelu_scalar(double x);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& a, int axis);
Tensor log_softmax(const Tensor& a, int axis);

/// Normalizes over the last axis with population variance, then applies
/// gain and bias (both of length shape[-1]).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

/// Rows of `table` ([V, d]) gathered by `ids`; output shape ids_shape + [d].
/// Throws InputError naming the first offending position for ids >= V.
Tensor embedding(const Tensor& table, std::span<const int> ids, const Shape& ids_shape);

}  // namespace dk
