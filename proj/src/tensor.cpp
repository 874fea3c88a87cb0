#include "distillkit/tensor.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <unordered_set>

#include "autograd.hpp"
#include "distillkit/error.hpp"

namespace dk {

const char* to_string(ValidationCode code) {
  switch (code) {
    case ValidationCode::unknown_key: return "unknown_key";
    case ValidationCode::bad_type: return "bad_type";
    case ValidationCode::out_of_range: return "out_of_range";
    case ValidationCode::unregistered_name: return "unregistered_name";
    case ValidationCode::layer_range: return "layer_range";
    case ValidationCode::dim_mismatch: return "dim_mismatch";
    case ValidationCode::incompatible: return "incompatible";
  }
  return "unknown";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

thread_local bool g_grad_enabled = true;

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ConfigError("tensor shape must be nonempty");
  for (auto e : shape) {
    if (e == 0) throw ConfigError("tensor extents must be >= 1, got " + shape_str(shape));
  }
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor::Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

Tensor Tensor::create(const Shape& shape, const Init& init) {
  check_shape(shape);
  std::vector<double> values(shape_numel(shape), 0.0);
  if (const auto* c = std::get_if<Constant>(&init)) {
    std::fill(values.begin(), values.end(), c->value);
  } else if (const auto* u = std::get_if<Uniform>(&init)) {
    if (!(u->low < u->high)) throw ConfigError("uniform init requires low < high");
    std::mt19937_64 rng(u->seed);
    std::uniform_real_distribution<double> dist(u->low, u->high);
    for (auto& v : values) v = dist(rng);
  } else if (const auto* g = std::get_if<Normal>(&init)) {
    if (!(g->stddev >= 0.0)) throw ConfigError("normal init requires stddev >= 0");
    std::mt19937_64 rng(g->seed);
    if (g->stddev == 0.0) {
      std::fill(values.begin(), values.end(), g->mean);
    } else {
      std::normal_distribution<double> dist(g->mean, g->stddev);
      for (auto& v : values) v = dist(rng);
    }
  }
  return from_vector(shape, std::move(values));
}

Tensor Tensor::from_vector(const Shape& shape, std::vector<double> values) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("from_vector: shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from_vector({}, {value}); }

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::numel() const { return impl_->data.size(); }

std::size_t Tensor::size(int axis) const {
  const int r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return impl_->shape[static_cast<std::size_t>(a)];
}

std::span<const double> Tensor::data() const { return impl_->data; }

std::span<double> Tensor::mutable_data() {
  if (impl_->node) throw ContractError("mutable_data is only available on leaf tensors");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("at(): index rank mismatch for " + shape_str(shape()));
  std::size_t offset = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= impl_->shape[axis]) throw ShapeError("at(): index out of bounds for " + shape_str(shape()));
    offset = offset * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->data[offset];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  if (impl_->node) throw ContractError("requires_grad can only be set on leaf tensors");
  impl_->requires_grad = value;
  return *this;
}

bool Tensor::is_leaf() const { return impl_->node == nullptr; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (impl_->grad.empty()) throw ContractError("tensor has no gradient");
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const { return from_vector(impl_->shape, impl_->data); }

void Tensor::backward() const { dk::backward(*this); }

void backward(const Tensor& loss) {
  using detail::TensorImpl;
  if (!loss.defined()) throw ContractError("backward on undefined tensor");
  if (loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  auto root = loss.impl();
  if (!root->requires_grad) throw ContractError("backward on a tensor that does not require grad");
  if (root->node && root->node->released) {
    throw ContractError("backward called twice: the graph was released by the previous call");
  }

  // Post-order DFS gives a topological order (inputs before consumers). The
  // order holds owning pointers because releasing a node drops its inputs.
  std::vector<std::shared_ptr<TensorImpl>> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<std::shared_ptr<TensorImpl>, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    if (t->node && next < t->node->inputs.size()) {
      const auto& child = t->node->inputs[next++];
      if (child->requires_grad && visited.insert(child.get()).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(t);
    stack.pop_back();
  }

  for (const auto& t : order) {
    if (!t->node && !t->grad.empty()) {
      throw ContractError(
          "backward would accumulate into a leaf that still holds a gradient; clear grads first");
    }
    if (t->node && t->node->released) {
      throw ContractError("backward reached a released graph segment");
    }
  }

  root->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* t = it->get();
    if (!t->node) continue;
    if (!t->grad.empty()) t->node->backward(*t);
    t->node->inputs.clear();
    t->node->backward = nullptr;
    t->node->released = true;
    if (t != root.get()) {
      t->grad.clear();
      t->grad.shrink_to_fit();
    }
  }
}

namespace detail {

namespace {

Tensor finish(Shape shape, std::vector<double> data, std::vector<std::shared_ptr<TensorImpl>> parents,
              BackwardFn fn) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) {
      if (p->requires_grad) {
        if (p->node && p->node->released) {
          throw ContractError("operation uses a tensor whose graph was already released by backward");
        }
        needs = true;
      }
    }
  }
  if (needs) {
    impl->requires_grad = true;
    impl->node = std::make_shared<GradNode>();
    impl->node->inputs = std::move(parents);
    impl->node->backward = std::move(fn);
  }
  return Tensor(std::move(impl));
}

}  // namespace

Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<const Tensor*> inputs,
                   BackwardFn fn) {
  std::vector<std::shared_ptr<TensorImpl>> parents;
  parents.reserve(inputs.size());
  for (const auto* t : inputs) parents.push_back(t->impl());
  return finish(std::move(shape), std::move(data), std::move(parents), std::move(fn));
}

Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs, BackwardFn fn) {
  std::vector<std::shared_ptr<TensorImpl>> parents;
  parents.reserve(inputs.size());
  for (const auto& t : inputs) parents.push_back(t.impl());
  return finish(std::move(shape), std::move(data), std::move(parents), std::move(fn));
}

}  // namespace detail
}  // namespace dk
