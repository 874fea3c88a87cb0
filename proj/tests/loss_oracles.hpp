#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "distillkit/losses.hpp"
#include "distillkit/ops.hpp"
#include "test_util.hpp"

namespace dk::testing {

// Plain loops over raw values. None of these touch the tensor ops.

inline std::vector<double> naive_softmax(const double* z, std::size_t C, double T) {
  double mx = z[0];
  for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, z[c]);
  std::vector<double> p(C);
  double s = 0.0;
  for (std::size_t c = 0; c < C; ++c) s += p[c] = std::exp((z[c] - mx) / T);
  for (auto& v : p) v /= s;
  return p;
}

inline double naive_kd_ce(const Tensor& zt, const Tensor& zs, const std::vector<double>& T, const std::vector<double>& mask) {
  const std::size_t C = zs.shape().back(), rows = zs.numel() / C;
  double total = 0.0, count = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double t = T.size() == 1 ? T[0] : T[r];
    auto pt = naive_softmax(zt.data().data() + r * C, C, t);
    auto ps = naive_softmax(zs.data().data() + r * C, C, t);
    double ce = 0.0;
    for (std::size_t c = 0; c < C; ++c) ce -= pt[c] * std::log(ps[c]);
    total += mask[r] * ce;
    count += mask[r];
  }
  return total / count;
}

inline double naive_entropy(const Tensor& z, double T) {
  const std::size_t C = z.shape().back(), rows = z.numel() / C;
  double h = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    auto p = naive_softmax(z.data().data() + r * C, C, T);
    for (double v : p) h -= v * std::log(v);
  }
  return h / static_cast<double>(rows);
}

inline double naive_hidden_mse(const FeaturePair& p) {
  const std::size_t B = p.student.size(0), L = p.student.size(1), d = p.student.size(2);
  double s = 0.0, n = 0.0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < L; ++t) {
      const double m = p.inputs_mask.at({b, t});
      n += m;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = p.student.at({b, t, j}) - p.teacher.at({b, t, j});
        s += m * diff * diff;
      }
    }
  return s / (n * static_cast<double>(d));
}

inline double naive_cos(const FeaturePair& p) {
  const std::size_t B = p.student.size(0), L = p.student.size(1), d = p.student.size(2);
  double s = 0.0, n = 0.0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < L; ++t) {
      if (p.inputs_mask.at({b, t}) == 0.0) continue;
      double dot = 0.0, a = 0.0, c = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        dot += p.student.at({b, t, j}) * p.teacher.at({b, t, j});
        a += p.student.at({b, t, j}) * p.student.at({b, t, j});
        c += p.teacher.at({b, t, j}) * p.teacher.at({b, t, j});
      }
      s += 1.0 - dot / std::sqrt(a * c);
      n += 1.0;
    }
  return s / n;
}

// Head-averaged map [B, L, L] as nested loops.
inline double head_avg(const Tensor& a, std::size_t b, std::size_t q, std::size_t k) {
  const std::size_t H = a.size(1);
  double s = 0.0;
  for (std::size_t h = 0; h < H; ++h) s += a.at({b, h, q, k});
  return s / static_cast<double>(H);
}

inline double naive_attention(const Tensor& at, const Tensor& as, const Tensor& mask, AttentionMode mode) {
  const std::size_t B = as.size(0), L = as.size(2);
  double s = 0.0, n = 0.0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t q = 0; q < L; ++q) {
      if (mask.at({b, q}) == 0.0) continue;
      double zt = 1.0, zs = 1.0;
      if (mode == AttentionMode::ce) {
        n += 1.0;
        zt = zs = 0.0;
        for (std::size_t k = 0; k < L; ++k) {
          zt += mask.at({b, k}) * head_avg(at, b, q, k);
          zs += mask.at({b, k}) * head_avg(as, b, q, k);
        }
      }
      for (std::size_t k = 0; k < L; ++k) {
        if (mask.at({b, k}) == 0.0) continue;
        const double pt = head_avg(at, b, q, k) / zt, ps = head_avg(as, b, q, k) / zs;
        if (mode == AttentionMode::mse) {
          s += (ps - pt) * (ps - pt);
          n += 1.0;
        } else {
          s += pt * std::log(pt / ps);
        }
      }
    }
  return s / n;
}

inline std::vector<double> naive_fsp_matrix(const Tensor& fa, const Tensor& fb, const Tensor& mask, std::size_t b) {
  const std::size_t L = fa.size(1), da = fa.size(2), db = fb.size(2);
  double len = 0.0;
  for (std::size_t t = 0; t < L; ++t) len += mask.at({b, t});
  std::vector<double> g(da * db, 0.0);
  for (std::size_t i = 0; i < da; ++i)
    for (std::size_t j = 0; j < db; ++j)
      for (std::size_t t = 0; t < L; ++t) g[i * db + j] += mask.at({b, t}) * fa.at({b, t, i}) * fb.at({b, t, j});
  for (auto& v : g) v /= len;
  return g;
}

inline double naive_fsp(const FeaturePair& first, const FeaturePair& second) {
  const std::size_t B = first.student.size(0), da = first.teacher.size(2), db = second.teacher.size(2);
  double s = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    auto gt = naive_fsp_matrix(first.teacher, second.teacher, first.inputs_mask, b);
    auto gs = naive_fsp_matrix(first.student, second.student, first.inputs_mask, b);
    for (std::size_t i = 0; i < gt.size(); ++i) s += (gt[i] - gs[i]) * (gt[i] - gs[i]);
  }
  return s / static_cast<double>(B * da * db);
}

// Unmasked positions only, so the oracle works on the compacted L' x L' Gram.
inline std::vector<double> naive_nst_gram(const Tensor& f, const Tensor& mask, std::size_t b, std::vector<std::size_t>& keep) {
  const std::size_t L = f.size(1), d = f.size(2);
  keep.clear();
  for (std::size_t t = 0; t < L; ++t)
    if (mask.at({b, t}) != 0.0) keep.push_back(t);
  const std::size_t n = keep.size();
  std::vector<double> unit(n * d);
  for (std::size_t j = 0; j < d; ++j) {
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) norm += f.at({b, keep[i], j}) * f.at({b, keep[i], j});
    norm = std::sqrt(norm + kNstEps);
    for (std::size_t i = 0; i < n; ++i) unit[i * d + j] = f.at({b, keep[i], j}) / norm;
  }
  std::vector<double> g(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t j = 0; j < d; ++j) g[i * n + k] += unit[i * d + j] * unit[k * d + j];
      g[i * n + k] /= static_cast<double>(d);
    }
  return g;
}

inline double naive_nst(const FeaturePair& p) {
  const std::size_t B = p.student.size(0);
  double s = 0.0;
  std::vector<std::size_t> keep;
  for (std::size_t b = 0; b < B; ++b) {
    auto gt = naive_nst_gram(p.teacher, p.inputs_mask, b, keep);
    auto gs = naive_nst_gram(p.student, p.inputs_mask, b, keep);
    const double n = static_cast<double>(keep.size());
    double e = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) e += (gt[i] - gs[i]) * (gt[i] - gs[i]);
    s += e / (n * n);
  }
  return s / static_cast<double>(B);
}

// Random row-stochastic attention [B, H, L, L]: each row is a softmax of
// random scores, so entries are strictly positive.
inline Tensor random_attention(std::size_t B, std::size_t H, std::size_t L, std::mt19937_64& rng) {
  return softmax(random_tensor({B, H, L, L}, rng, -2.0, 2.0), -1);
}

}  // namespace dk::testing
