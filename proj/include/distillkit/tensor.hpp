#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace dk {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Initializers accepted by Tensor::create.
struct Zeros {};
struct Constant {
  double value = 0.0;
};
struct Uniform {
  double low = 0.0;
  double high = 1.0;
  std::uint64_t seed = 0;
};
struct Normal {
  double mean = 0.0;
  double stddev = 1.0;
  std::uint64_t seed = 0;
};
using Init = std::variant<Zeros, Constant, Uniform, Normal>;

namespace detail {
struct TensorImpl;
}

/// Dense row-major array of doubles with optional reverse-mode gradient tracking.
///
/// Tensor is a handle: copies share storage. Values are immutable after
/// creation except through mutable_data() on leaf tensors, which is how
/// optimizers update parameters in place.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl);

  /// Throws ConfigError for an empty shape, a zero extent, low >= high or stddev < 0.
  static Tensor create(const Shape& shape, const Init& init = Zeros{});
  static Tensor from_vector(const Shape& shape, std::vector<double> values);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  /// Extent of `axis`; negative axes count from the back.
  std::size_t size(int axis) const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Fresh leaf holding a copy of the values; no graph, no grad.
  Tensor detach() const;

  /// See dk::backward.
  void backward() const;

  const detail::TensorImpl* id() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Reverse pass from a scalar (numel 1) loss. Every reachable tensor with
/// requires_grad set receives d(loss)/d(tensor). The graph is released
/// afterwards: a second call on the same loss throws ContractError, as does a
/// call that would reach a leaf whose grad has not been cleared.
void backward(const Tensor& loss);

bool grad_enabled();

/// Disables graph recording for its lifetime (frozen teachers, evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace dk
