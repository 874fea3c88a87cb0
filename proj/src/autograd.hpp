#pragma once

// Internal graph representation shared by tensor.cpp and ops.cpp.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "distillkit/tensor.hpp"

namespace dk::detail {

struct TensorImpl;

struct GradNode {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  // Reads out.grad (and out.data if needed) and accumulates into inputs.
  std::function<void(const TensorImpl& out)> backward;
  bool released = false;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::shared_ptr<GradNode> node;

  // Zero-initialized on first use.
  std::span<double> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

using BackwardFn = std::function<void(const TensorImpl& out)>;

/// Wraps a computed value; records `fn` in the graph when grad mode is on and
/// any input requires grad.
Tensor make_result(Shape shape, std::vector<double> data,
                   std::initializer_list<const Tensor*> inputs, BackwardFn fn);
Tensor make_result(Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs, BackwardFn fn);

}  // namespace dk::detail
