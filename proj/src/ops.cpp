#include "distillkit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "autograd.hpp"
#include "distillkit/error.hpp"

namespace dk {

using detail::TensorImpl;

namespace {

std::size_t norm_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

// outer * extent * inner decomposition around one axis.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

enum class Bcast { same, repeat_b, repeat_a };

struct BinaryPlan {
  Bcast mode;
  Shape out;
};

BinaryPlan plan_binary(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return {Bcast::same, a};
  if (is_suffix(b, a)) return {Bcast::repeat_b, a};
  if (is_suffix(a, b)) return {Bcast::repeat_a, b};
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                   " are not broadcast-compatible");
}

template <class Fwd, class GradA, class GradB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, GradA grad_a, GradB grad_b) {
  const auto plan = plan_binary(op, a.shape(), b.shape());
  const std::size_t n = shape_numel(plan.out);
  const std::size_t na = a.numel();
  const std::size_t nb = b.numel();
  const auto mode = plan.mode;
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t ia = mode == Bcast::repeat_a ? i % na : i;
    const std::size_t ib = mode == Bcast::repeat_b ? i % nb : i;
    out[i] = fwd(ad[ia], bd[ib]);
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return detail::make_result(plan.out, std::move(out), {&a, &b}, [=](const TensorImpl& o) {
    const auto& g = o.grad;
    const auto& x = ai->data;
    const auto& y = bi->data;
    if (ai->requires_grad) {
      auto ga = ai->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ia = mode == Bcast::repeat_a ? i % na : i;
        const std::size_t ib = mode == Bcast::repeat_b ? i % nb : i;
        ga[ia] += grad_a(g[i], x[ia], y[ib]);
      }
    }
    if (bi->requires_grad) {
      auto gb = bi->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ia = mode == Bcast::repeat_a ? i % na : i;
        const std::size_t ib = mode == Bcast::repeat_b ? i % nb : i;
        gb[ib] += grad_b(g[i], x[ia], y[ib]);
      }
    }
  });
}

// Elementwise unary op whose derivative is expressed through input x and output y.
template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = fwd(ad[i]);
  auto ai = a.impl();
  return detail::make_result(a.shape(), std::move(out), {&a}, [=](const TensorImpl& o) {
    auto ga = ai->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i] * deriv(ai->data[i], o.data[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double g, double, double) { return g; },
      [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double g, double, double) { return g; },
      [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double g, double, double y) { return g / y; },
      [](double g, double x, double y) { return -g * x / (y * y); });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) {
    throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(sa) + " and " + shape_str(sb));
  }
  const std::size_t m = sa[sa.size() - 2], k = sa.back();
  const std::size_t kb = sb[sb.size() - 2], n = sb.back();
  const Shape lead_a(sa.begin(), sa.end() - 2);
  const Shape lead_b(sb.begin(), sb.end() - 2);
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions differ for " + shape_str(sa) + " and " + shape_str(sb));
  }
  Shape lead;
  std::size_t stride_a = m * k, stride_b = k * n;
  if (lead_a == lead_b) {
    lead = lead_a;
  } else if (lead_b.empty()) {
    lead = lead_a;
    stride_b = 0;
  } else if (lead_a.empty()) {
    lead = lead_b;
    stride_a = 0;
  } else {
    throw ShapeError("matmul: batch axes differ for " + shape_str(sa) + " and " + shape_str(sb));
  }
  const std::size_t batch = shape_numel(lead);
  Shape out_shape = lead;
  out_shape.push_back(m);
  out_shape.push_back(n);

  std::vector<double> out(batch * m * n, 0.0);
  const double* A0 = a.data().data();
  const double* B0 = b.data().data();
  for (std::size_t t = 0; t < batch; ++t) {
    const double* A = A0 + t * stride_a;
    const double* B = B0 + t * stride_b;
    double* C = out.data() + t * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A[i * k + p];
        const double* Brow = B + p * n;
        double* Crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) Crow[j] += aip * Brow[j];
      }
    }
  }

  auto ai = a.impl();
  auto bi = b.impl();
  return detail::make_result(out_shape, std::move(out), {&a, &b}, [=](const TensorImpl& o) {
    const double* G0 = o.grad.data();
    if (ai->requires_grad) {
      auto ga = ai->grad_buffer();
      for (std::size_t t = 0; t < batch; ++t) {
        const double* B = bi->data.data() + t * stride_b;
        const double* G = G0 + t * m * n;
        double* dA = ga.data() + t * stride_a;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double* Brow = B + p * n;
            const double* Grow = G + i * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += Grow[j] * Brow[j];
            dA[i * k + p] += acc;
          }
        }
      }
    }
    if (bi->requires_grad) {
      auto gb = bi->grad_buffer();
      for (std::size_t t = 0; t < batch; ++t) {
        const double* A = ai->data.data() + t * stride_a;
        const double* G = G0 + t * m * n;
        double* dB = gb.data() + t * stride_b;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            double* dBrow = dB + p * n;
            const double* Grow = G + i * n;
            for (std::size_t j = 0; j < n; ++j) dBrow[j] += aip * Grow[j];
          }
        }
      }
    }
  });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const Shape& s = a.shape();
  const std::size_t r = s.size();
  if (axes.size() != r) throw ShapeError("permute: axes do not match rank of " + shape_str(s));
  std::vector<bool> seen(r, false);
  for (auto ax : axes) {
    if (ax >= r || seen[ax]) throw ShapeError("permute: invalid axis list for " + shape_str(s));
    seen[ax] = true;
  }
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * s[i];
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = s[axes[i]];

  const std::size_t n = a.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_stride[axes[i]];
    src[o] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<double> out(n);
  const auto ad = a.data();
  for (std::size_t o = 0; o < n; ++o) out[o] = ad[src[o]];
  auto ai = a.impl();
  return detail::make_result(out_shape, std::move(out), {&a}, [ai, src = std::move(src)](const TensorImpl& o) {
    auto ga = ai->grad_buffer();
    for (std::size_t i = 0; i < src.size(); ++i) ga[src[i]] += o.grad[i];
  });
}

Tensor transpose(const Tensor& a) {
  const std::size_t r = a.rank();
  if (r < 2) throw ShapeError("transpose: rank must be >= 2, got " + shape_str(a.shape()));
  std::vector<std::size_t> axes(r);
  for (std::size_t i = 0; i < r; ++i) axes[i] = i;
  std::swap(axes[r - 1], axes[r - 2]);
  return permute(a, axes);
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  auto ai = a.impl();
  return detail::make_result(shape, std::move(out), {&a}, [ai](const TensorImpl& o) {
    auto ga = ai->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i];
  });
}

Tensor expand(const Tensor& a, const Shape& shape) {
  const Shape& s = a.shape();
  bool ok = s.size() == shape.size();
  for (std::size_t i = 0; ok && i < s.size(); ++i) ok = s[i] == shape[i] || s[i] == 1;
  if (!ok) throw ShapeError("expand: cannot expand " + shape_str(s) + " to " + shape_str(shape));
  const std::size_t r = s.size();
  std::vector<std::size_t> in_stride(r, 0);
  std::size_t stride = 1;
  for (std::size_t i = r; i-- > 0;) {
    in_stride[i] = s[i] == 1 ? 0 : stride;
    stride *= s[i];
  }
  const std::size_t n = shape_numel(shape);
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_stride[i];
    src[o] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < shape[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<double> out(n);
  const auto ad = a.data();
  for (std::size_t o = 0; o < n; ++o) out[o] = ad[src[o]];
  auto ai = a.impl();
  return detail::make_result(shape, std::move(out), {&a}, [ai, src = std::move(src)](const TensorImpl& o) {
    auto ga = ai->grad_buffer();
    for (std::size_t i = 0; i < src.size(); ++i) ga[src[i]] += o.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  const std::size_t ax = norm_axis(axis, s0.size(), "concat");
  Shape out_shape = s0;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == ax || s[i] == s0[i];
    if (!ok) throw ShapeError("concat: shapes " + shape_str(s0) + " and " + shape_str(s) + " differ off-axis");
    out_shape[ax] += s[ax];
  }
  const auto split = split_at(out_shape, ax);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t chunk = p.shape()[ax] * split.inner;
    const auto pd = p.data();
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(pd.data() + o * chunk, chunk, out.data() + o * split.extent * split.inner + offset);
    }
    offset += chunk;
  }
  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  return detail::make_result(out_shape, std::move(out), parts, [=](const TensorImpl& o) {
    for (std::size_t k = 0; k < impls.size(); ++k) {
      if (!impls[k]->requires_grad) continue;
      auto g = impls[k]->grad_buffer();
      const std::size_t chunk = g.size() / split.outer;
      for (std::size_t r = 0; r < split.outer; ++r) {
        const double* src = o.grad.data() + r * split.extent * split.inner + offsets[k];
        for (std::size_t i = 0; i < chunk; ++i) g[r * chunk + i] += src[i];
      }
    }
  });
}

Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t end) {
  const std::size_t ax = norm_axis(axis, a.rank(), "slice");
  const auto split = split_at(a.shape(), ax);
  if (start >= end || end > split.extent) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(end) +
                     ") invalid for axis of extent " + std::to_string(split.extent));
  }
  Shape out_shape = a.shape();
  out_shape[ax] = end - start;
  const std::size_t chunk = (end - start) * split.inner;
  const std::size_t row = split.extent * split.inner;
  const std::size_t first = start * split.inner;
  std::vector<double> out(split.outer * chunk);
  const auto ad = a.data();
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(ad.data() + o * row + first, chunk, out.data() + o * chunk);
  }
  auto ai = a.impl();
  return detail::make_result(out_shape, std::move(out), {&a}, [=](const TensorImpl& o) {
    auto ga = ai->grad_buffer();
    for (std::size_t r = 0; r < split.outer; ++r) {
      for (std::size_t i = 0; i < chunk; ++i) ga[r * row + first + i] += o.grad[r * chunk + i];
    }
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  auto ai = a.impl();
  return detail::make_result({}, {total}, {&a}, [ai](const TensorImpl& o) {
    auto ga = ai->grad_buffer();
    for (auto& g : ga) g += o.grad[0];
  });
}

Tensor sum(const Tensor& a, int axis, bool keepdim) {
  const std::size_t ax = norm_axis(axis, a.rank(), "sum");
  const auto split = split_at(a.shape(), ax);
  Shape out_shape = a.shape();
  if (keepdim) {
    out_shape[ax] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  }
  std::vector<double> out(split.outer * split.inner, 0.0);
  const auto ad = a.data();
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t e = 0; e < split.extent; ++e) {
      const double* src = ad.data() + (o * split.extent + e) * split.inner;
      double* dst = out.data() + o * split.inner;
      for (std::size_t i = 0; i < split.inner; ++i) dst[i] += src[i];
    }
  }
  auto ai = a.impl();
  return detail::make_result(out_shape, std::move(out), {&a}, [=](const TensorImpl& o) {
    auto ga = ai->grad_buffer();
    for (std::size_t r = 0; r < split.outer; ++r) {
      for (std::size_t e = 0; e < split.extent; ++e) {
        double* dst = ga.data() + (r * split.extent + e) * split.inner;
        const double* src = o.grad.data() + r * split.inner;
        for (std::size_t i = 0; i < split.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor mean(const Tensor& a, int axis, bool keepdim) {
  const std::size_t ax = norm_axis(axis, a.rank(), "mean");
  return scale(sum(a, axis, keepdim), 1.0 / static_cast<double>(a.shape()[ax]));
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor sqrt(const Tensor& a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

Tensor gelu(const Tensor& a) {
  return unary(a, gelu_scalar, [](double x, double) {
    const double u = kGeluC * (x + kGeluA * x * x * x);
    const double t = std::tanh(u);
    const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
  });
}

Tensor softmax(const Tensor& a, int axis) {
  const std::size_t ax = norm_axis(axis, a.rank(), "softmax");
  const auto sp = split_at(a.shape(), ax);
  const auto ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.extent * sp.inner + i;
      double mx = ad[base];
      for (std::size_t e = 1; e < sp.extent; ++e) mx = std::max(mx, ad[base + e * sp.inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < sp.extent; ++e) {
        const double v = std::exp(ad[base + e * sp.inner] - mx);
        out[base + e * sp.inner] = v;
        z += v;
      }
      for (std::size_t e = 0; e < sp.extent; ++e) out[base + e * sp.inner] /= z;
    }
  }
  auto ai = a.impl();
  return detail::make_result(a.shape(), std::move(out), {&a}, [=](const TensorImpl& o) {
    auto ga = ai->grad_buffer();
    for (std::size_t r = 0; r < sp.outer; ++r) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = r * sp.extent * sp.inner + i;
        double dot = 0.0;
        for (std::size_t e = 0; e < sp.extent; ++e) {
          dot += o.grad[base + e * sp.inner] * o.data[base + e * sp.inner];
        }
        for (std::size_t e = 0; e < sp.extent; ++e) {
          const std::size_t k = base + e * sp.inner;
          ga[k] += o.data[k] * (o.grad[k] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& a, int axis) {
  const std::size_t ax = norm_axis(axis, a.rank(), "log_softmax");
  const auto sp = split_at(a.shape(), ax);
  const auto ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.extent * sp.inner + i;
      double mx = ad[base];
      for (std::size_t e = 1; e < sp.extent; ++e) mx = std::max(mx, ad[base + e * sp.inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < sp.extent; ++e) z += std::exp(ad[base + e * sp.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t e = 0; e < sp.extent; ++e) out[base + e * sp.inner] = ad[base + e * sp.inner] - lse;
    }
  }
  auto ai = a.impl();
  return detail::make_result(a.shape(), std::move(out), {&a}, [=](const TensorImpl& o) {
    auto ga = ai->grad_buffer();
    for (std::size_t r = 0; r < sp.outer; ++r) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = r * sp.extent * sp.inner + i;
        double gsum = 0.0;
        for (std::size_t e = 0; e < sp.extent; ++e) gsum += o.grad[base + e * sp.inner];
        for (std::size_t e = 0; e < sp.extent; ++e) {
          const std::size_t k = base + e * sp.inner;
          ga[k] += o.grad[k] - std::exp(o.data[k]) * gsum;
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0) throw ShapeError("layer_norm: input must have rank >= 1");
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw ShapeError("layer_norm: input " + shape_str(x.shape()) + " with gain " + shape_str(gain.shape()) +
                     " and bias " + shape_str(bias.shape()));
  }
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be > 0");
  const std::size_t rows = x.numel() / d;
  const auto xd = x.data();
  const auto gd = gain.data();
  const auto bd = bias.data();
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xd.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gd[j] + bd[j];
    }
  }
  auto xi = x.impl();
  auto gi = gain.impl();
  auto bi = bias.impl();
  return detail::make_result(
      x.shape(), std::move(out), {&x, &gain, &bias},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](const TensorImpl& o) {
        const auto& g = o.grad;
        if (gi->requires_grad) {
          auto gg = gi->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
        }
        if (bi->requires_grad) {
          auto gb = bi->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
        }
        if (xi->requires_grad) {
          auto gx = xi->grad_buffer();
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[r * d + j] * gi->data[j];
              m1 += dh;
              m2 += dh * xhat[r * d + j];
            }
            m1 *= inv_d;
            m2 *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[r * d + j] * gi->data[j];
              gx[r * d + j] += inv_std[r] * (dh - m1 - xhat[r * d + j] * m2);
            }
          }
        }
      });
}

Tensor embedding(const Tensor& table, std::span<const int> ids, const Shape& ids_shape) {
  if (table.rank() != 2) throw ShapeError("embedding: table must be [V, d], got " + shape_str(table.shape()));
  if (shape_numel(ids_shape) != ids.size()) {
    throw ShapeError("embedding: ids shape " + shape_str(ids_shape) + " does not match " +
                     std::to_string(ids.size()) + " ids");
  }
  const std::size_t vocab = table.shape()[0];
  const std::size_t d = table.shape()[1];
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw InputError("token id " + std::to_string(ids[i]) + " at flat position " + std::to_string(i) +
                       " is outside vocabulary of size " + std::to_string(vocab));
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
  }
  Shape out_shape = ids_shape;
  out_shape.push_back(d);
  std::vector<double> out(ids.size() * d);
  const auto td = table.data();
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(td.data() + rows[i] * d, d, out.data() + i * d);
  auto ti = table.impl();
  return detail::make_result(out_shape, std::move(out), {&table}, [ti, d, rows = std::move(rows)](const TensorImpl& o) {
    auto gt = ti->grad_buffer();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) gt[rows[i] * d + j] += o.grad[i * d + j];
    }
  });
}

}  // namespace dk
