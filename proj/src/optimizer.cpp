#include "distillkit/optimizer.hpp"

#include <cmath>

#include "distillkit/error.hpp"

namespace dk {

Adam::Adam(std::vector<Tensor> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  if (!(config_.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(config_.beta1 >= 0.0 && config_.beta1 < 1.0 && config_.beta2 >= 0.0 && config_.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(config_.eps > 0.0)) throw ConfigError("Adam eps must be > 0");
  for (const auto& p : params_) {
    if (!p.defined() || !p.is_leaf()) throw ContractError("Adam parameters must be leaf tensors");
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
  steps_.assign(params_.size(), 0);
}

void Adam::step(double grad_scale, bool allow_missing) {
  const auto& c = config_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) {
      if (allow_missing) continue;
      throw ContractError("Adam: parameter " + std::to_string(i) + " has no gradient");
    }
    const auto g = p.grad();
    auto x = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    const auto t = static_cast<double>(++steps_[i]);
    const double correction1 = 1.0 - std::pow(c.beta1, t);
    const double correction2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double gk = g[k] * grad_scale;
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
      const double mhat = m[k] / correction1;
      const double vhat = v[k] / correction2;
      x[k] -= c.learning_rate * (mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * x[k]);
    }
  }
}

double global_grad_norm(const std::vector<Tensor>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_factor(double norm, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("max_grad_norm must be > 0");
  return norm > max_norm ? max_norm / norm : 1.0;
}

}  // namespace dk
