#pragma once

#include <functional>
#include <vector>

#include "distillkit/tensor.hpp"

namespace dk {

/// Max over coordinates of |analytic - central| / (|analytic| + |central| + 1e-12),
/// where analytic comes from backward() and central from (f(x+h) - f(x-h)) / 2h.
/// `x` is not modified.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

/// A single coordinate of one parameter tensor.
struct ParamCoord {
  Tensor param;
  std::size_t index = 0;
};

/// Same error measure for selected coordinates of leaf parameters that `loss`
/// closes over. Parameters are perturbed in place and restored; their grads
/// are cleared before and after.
double finite_diff_check_params(const std::function<Tensor()>& loss, const std::vector<Tensor>& params,
                                const std::vector<ParamCoord>& coords, double h = 1e-5);

}  // namespace dk
