#include "distillkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "distillkit/error.hpp"

namespace dk {

namespace {

double rel_error(double analytic, double central) {
  return std::abs(analytic - central) / (std::abs(analytic) + std::abs(central) + 1e-12);
}

}  // namespace

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_check: h must be > 0");
  Tensor leaf = x.detach();
  leaf.set_requires_grad(true);
  Tensor y = f(leaf);
  backward(y);
  const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());

  double worst = 0.0;
  std::vector<double> base(x.data().begin(), x.data().end());
  NoGradGuard guard;
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base;
    auto minus = base;
    plus[i] += h;
    minus[i] -= h;
    const double fp = f(Tensor::from_vector(x.shape(), std::move(plus))).item();
    const double fm = f(Tensor::from_vector(x.shape(), std::move(minus))).item();
    worst = std::max(worst, rel_error(analytic[i], (fp - fm) / (2.0 * h)));
  }
  return worst;
}

double finite_diff_check_params(const std::function<Tensor()>& loss, const std::vector<Tensor>& params,
                                const std::vector<ParamCoord>& coords, double h) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_check_params: h must be > 0");
  for (auto p : params) p.zero_grad();
  backward(loss());
  std::vector<double> analytic;
  for (const auto& c : coords) analytic.push_back(c.param.has_grad() ? c.param.grad()[c.index] : 0.0);
  for (auto p : params) p.zero_grad();

  double worst = 0.0;
  NoGradGuard guard;
  for (std::size_t k = 0; k < coords.size(); ++k) {
    Tensor p = coords[k].param;
    auto values = p.mutable_data();
    const double saved = values[coords[k].index];
    values[coords[k].index] = saved + h;
    const double fp = loss().item();
    values[coords[k].index] = saved - h;
    const double fm = loss().item();
    values[coords[k].index] = saved;
    worst = std::max(worst, rel_error(analytic[k], (fp - fm) / (2.0 * h)));
  }
  return worst;
}

}  // namespace dk
