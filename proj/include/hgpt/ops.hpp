#pragma once

#include <algorithm>
#include <cmath>

#include "hgpt/tensor.hpp"

namespace hgpt {
namespace detail {

template <typename S>
Tape<S>* result_tape(std::initializer_list<const Tensor<S>*> inputs) {
  for (const Tensor<S>* t : inputs) {
    if (t->defined() && t->tape()) return t->tape();
  }
  return nullptr;
}

template <typename S>
Tensor<S> make_result(std::vector<int> shape, Tape<S>* tape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl<S>>();
  impl->data.assign(static_cast<size_t>(shape_numel(shape)), S(0));
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  impl->tape = tape;
  return Tensor<S>(impl);
}

template <typename S>
void record(const char* op, Tape<S>* tape, const Tensor<S>& out,
            std::vector<std::shared_ptr<TensorImpl<S>>> tensors, std::function<void()> fn) {
  check_finite(out.values(), op, out.name());
  if (tape && tape->recording() && out.requires_grad()) {
    tape->record(op, std::move(tensors), std::move(fn));
  }
}

inline void normalize_axis(int& axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
}

// (outer, n, inner) decomposition around one axis.
inline void axis_split(const std::vector<int>& shape, int axis, int64_t& outer, int64_t& n,
                       int64_t& inner) {
  outer = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
  n = shape[static_cast<size_t>(axis)];
  inner = 1;
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
}

}  // namespace detail

// out[m,n] = a[m,k] * b[k,n]
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tape<S>* tape = detail::result_tape<S>({&a, &b});
  Tensor<S> out =
      detail::make_result<S>({m, n}, tape, a.requires_grad() || b.requires_grad());
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  for (int i = 0; i < m; ++i) {
    S* orow = po + static_cast<size_t>(i) * n;
    const S* arow = pa + static_cast<size_t>(i) * k;
    for (int t = 0; t < k; ++t) {
      const S av = arow[t];
      const S* brow = pb + static_cast<size_t>(t) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
  detail::record<S>("matmul", tape, out, {ai, bi, oi}, [ai, bi, oi, m, k, n]() {
    if (oi->grad.empty()) return;
    const S* g = oi->grad.data();
    if (ai->requires_grad) {
      S* ga = ai->ensure_grad().data();
      const S* pb = bi->data.data();
      // da[i,t] += sum_j g[i,j] * b[t,j]
      for (int i = 0; i < m; ++i) {
        const S* grow = g + static_cast<size_t>(i) * n;
        S* garow = ga + static_cast<size_t>(i) * k;
        for (int t = 0; t < k; ++t) {
          const S* brow = pb + static_cast<size_t>(t) * n;
          S acc = 0;
          for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
          garow[t] += acc;
        }
      }
    }
    if (bi->requires_grad) {
      S* gb = bi->ensure_grad().data();
      const S* pa = ai->data.data();
      // db[t,j] += sum_i a[i,t] * g[i,j]
      for (int i = 0; i < m; ++i) {
        const S* arow = pa + static_cast<size_t>(i) * k;
        const S* grow = g + static_cast<size_t>(i) * n;
        for (int t = 0; t < k; ++t) {
          const S av = arow[t];
          S* gbrow = gb + static_cast<size_t>(t) * n;
          for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  });
  return out;
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
  if (x.rank() != 2) throw ShapeError("transpose: expected rank-2 tensor, got " + shape_str(x.shape()));
  const int m = x.dim(0), n = x.dim(1);
  Tape<S>* tape = detail::result_tape<S>({&x});
  Tensor<S> out = detail::make_result<S>({n, m}, tape, x.requires_grad());
  const S* px = x.data();
  S* po = out.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) po[static_cast<size_t>(j) * m + i] = px[static_cast<size_t>(i) * n + j];
  auto xi = x.impl_ptr(), oi = out.impl_ptr();
  detail::record<S>("transpose", tape, out, {xi, oi}, [xi, oi, m, n]() {
    if (oi->grad.empty() || !xi->requires_grad) return;
    S* gx = xi->ensure_grad().data();
    const S* g = oi->grad.data();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) gx[static_cast<size_t>(i) * n + j] += g[static_cast<size_t>(j) * m + i];
  });
  return out;
}

namespace detail {

template <typename S, typename Fwd, typename Bwd>
Tensor<S> binary_elementwise(const char* op, const Tensor<S>& a, const Tensor<S>& b, Fwd fwd,
                             Bwd bwd) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tape<S>* tape = result_tape<S>({&a, &b});
  Tensor<S> out = make_result<S>(a.shape(), tape, a.requires_grad() || b.requires_grad());
  const int64_t n = a.numel();
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
  auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
  record<S>(op, tape, out, {ai, bi, oi}, [ai, bi, oi, n, bwd]() {
    if (oi->grad.empty()) return;
    const S* g = oi->grad.data();
    S* ga = ai->requires_grad ? ai->ensure_grad().data() : nullptr;
    S* gb = bi->requires_grad ? bi->ensure_grad().data() : nullptr;
    const S* pa = ai->data.data();
    const S* pb = bi->data.data();
    for (int64_t i = 0; i < n; ++i) bwd(g[i], pa[i], pb[i], ga ? ga + i : nullptr, gb ? gb + i : nullptr);
  });
  return out;
}

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_elementwise<S>(
      "add", a, b, [](S x, S y) { return x + y; },
      [](S g, S, S, S* ga, S* gb) {
        if (ga) *ga += g;
        if (gb) *gb += g;
      });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_elementwise<S>(
      "sub", a, b, [](S x, S y) { return x - y; },
      [](S g, S, S, S* ga, S* gb) {
        if (ga) *ga += g;
        if (gb) *gb -= g;
      });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_elementwise<S>(
      "mul", a, b, [](S x, S y) { return x * y; },
      [](S g, S x, S y, S* ga, S* gb) {
        if (ga) *ga += g * y;
        if (gb) *gb += g * x;
      });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S c) {
  Tape<S>* tape = detail::result_tape<S>({&x});
  Tensor<S> out = detail::make_result<S>(x.shape(), tape, x.requires_grad());
  const int64_t n = x.numel();
  const S* px = x.data();
  S* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = c * px[i];
  auto xi = x.impl_ptr(), oi = out.impl_ptr();
  detail::record<S>("scale", tape, out, {xi, oi}, [xi, oi, n, c]() {
    if (oi->grad.empty() || !xi->requires_grad) return;
    S* gx = xi->ensure_grad().data();
    const S* g = oi->grad.data();
    for (int64_t i = 0; i < n; ++i) gx[i] += c * g[i];
  });
  return out;
}

// tanh-approximation GELU (the GPT convention).
template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  constexpr double kSqrt2OverPi = 0.7978845608028654;
  constexpr double kCubic = 0.044715;
  Tape<S>* tape = detail::result_tape<S>({&x});
  Tensor<S> out = detail::make_result<S>(x.shape(), tape, x.requires_grad());
  const int64_t n = x.numel();
  const S* px = x.data();
  S* po = out.data();
  for (int64_t i = 0; i < n; ++i) {
    const double v = px[i];
    const double u = kSqrt2OverPi * (v + kCubic * v * v * v);
    po[i] = static_cast<S>(0.5 * v * (1.0 + std::tanh(u)));
  }
  auto xi = x.impl_ptr(), oi = out.impl_ptr();
  detail::record<S>("gelu", tape, out, {xi, oi}, [xi, oi, n]() {
    if (oi->grad.empty() || !xi->requires_grad) return;
    S* gx = xi->ensure_grad().data();
    const S* g = oi->grad.data();
    const S* px = xi->data.data();
    for (int64_t i = 0; i < n; ++i) {
      const double v = px[i];
      const double u = kSqrt2OverPi * (v + kCubic * v * v * v);
      const double t = std::tanh(u);
      const double du = kSqrt2OverPi * (1.0 + 3.0 * kCubic * v * v);
      const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      gx[i] += g[i] * static_cast<S>(d);
    }
  });
  return out;
}

// Max-shifted softmax along `axis`.
template <typename S>
Tensor<S> softmax(const Tensor<S>& x, int axis = -1) {
  int ax = axis;
  detail::normalize_axis(ax, x.rank());
  int64_t outer, n, inner;
  detail::axis_split(x.shape(), ax, outer, n, inner);
  Tape<S>* tape = detail::result_tape<S>({&x});
  Tensor<S> out = detail::make_result<S>(x.shape(), tape, x.requires_grad());
  const S* px = x.data();
  S* po = out.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * n * inner + in;
      S mx = px[base];
      for (int64_t t = 1; t < n; ++t) mx = std::max(mx, px[base + t * inner]);
      S sum = 0;
      for (int64_t t = 0; t < n; ++t) {
        const S e = std::exp(px[base + t * inner] - mx);
        po[base + t * inner] = e;
        sum += e;
      }
      const S inv = S(1) / sum;
      for (int64_t t = 0; t < n; ++t) po[base + t * inner] *= inv;
    }
  }
  auto xi = x.impl_ptr(), oi = out.impl_ptr();
  detail::record<S>("softmax", tape, out, {xi, oi}, [xi, oi, outer, n, inner]() {
    if (oi->grad.empty() || !xi->requires_grad) return;
    S* gx = xi->ensure_grad().data();
    const S* g = oi->grad.data();
    const S* y = oi->data.data();
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t in = 0; in < inner; ++in) {
        const int64_t base = o * n * inner + in;
        S dot = 0;
        for (int64_t t = 0; t < n; ++t) dot += g[base + t * inner] * y[base + t * inner];
        for (int64_t t = 0; t < n; ++t) {
          const int64_t idx = base + t * inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
  return out;
}

// Normalizes the last axis to zero mean / unit variance, then applies the
// per-channel affine (gain, bias).
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     S eps = S(1e-5)) {
  if (x.rank() < 1) throw ShapeError("layer_norm: rank-0 input");
  const int d = x.dim(x.rank() - 1);
  if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d) {
    throw ShapeError("layer_norm: gain/bias must have shape [" + std::to_string(d) + "], got " +
                     shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  }
  const int64_t rows = x.numel() / d;
  Tape<S>* tape = detail::result_tape<S>({&x, &gain, &bias});
  const bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  Tensor<S> out = detail::make_result<S>(x.shape(), tape, rg);
  // Cache per-row mean and inverse stddev for the backward rule.
  auto stats = std::make_shared<std::vector<S>>(static_cast<size_t>(rows) * 2);
  const S* px = x.data();
  const S* pg = gain.data();
  const S* pb = bias.data();
  S* po = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const S* row = px + r * d;
    S mean = 0;
    for (int i = 0; i < d; ++i) mean += row[i];
    mean /= static_cast<S>(d);
    S var = 0;
    for (int i = 0; i < d; ++i) {
      const S c = row[i] - mean;
      var += c * c;
    }
    var /= static_cast<S>(d);
    const S inv = S(1) / std::sqrt(var + eps);
    (*stats)[static_cast<size_t>(r) * 2] = mean;
    (*stats)[static_cast<size_t>(r) * 2 + 1] = inv;
    S* orow = po + r * d;
    for (int i = 0; i < d; ++i) orow[i] = (row[i] - mean) * inv * pg[i] + pb[i];
  }
  auto xi = x.impl_ptr(), gi = gain.impl_ptr(), bi = bias.impl_ptr(), oi = out.impl_ptr();
  detail::record<S>("layer_norm", tape, out, {xi, gi, bi, oi}, [xi, gi, bi, oi, stats, rows, d]() {
    if (oi->grad.empty()) return;
    const S* g = oi->grad.data();
    const S* px = xi->data.data();
    const S* pg = gi->data.data();
    S* gx = xi->requires_grad ? xi->ensure_grad().data() : nullptr;
    S* gg = gi->requires_grad ? gi->ensure_grad().data() : nullptr;
    S* gb = bi->requires_grad ? bi->ensure_grad().data() : nullptr;
    for (int64_t r = 0; r < rows; ++r) {
      const S mean = (*stats)[static_cast<size_t>(r) * 2];
      const S inv = (*stats)[static_cast<size_t>(r) * 2 + 1];
      const S* row = px + r * d;
      const S* grow = g + r * d;
      // dxhat_i = g_i * gain_i; then the two row-level reductions.
      S sum_dxhat = 0, sum_dxhat_xhat = 0;
      for (int i = 0; i < d; ++i) {
        const S xhat = (row[i] - mean) * inv;
        const S dxhat = grow[i] * pg[i];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
        if (gg) gg[i] += grow[i] * xhat;
        if (gb) gb[i] += grow[i];
      }
      if (gx) {
        S* gxrow = gx + r * d;
        const S invd = S(1) / static_cast<S>(d);
        for (int i = 0; i < d; ++i) {
          const S xhat = (row[i] - mean) * inv;
          const S dxhat = grow[i] * pg[i];
          gxrow[i] += inv * (dxhat - invd * sum_dxhat - xhat * invd * sum_dxhat_xhat);
        }
      }
    }
  });
  return out;
}

// Mean negative log-likelihood over the rows of `logits`, via log-sum-exp.
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<int32_t>& targets) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy: logits must be [n, vocab], got " + shape_str(logits.shape()));
  }
  const int n = logits.dim(0), vocab = logits.dim(1);
  if (static_cast<int>(targets.size()) != n) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(n) + " rows");
  }
  for (int i = 0; i < n; ++i) {
    if (targets[i] < 0 || targets[i] >= vocab) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[i]) + " at position " +
                       std::to_string(i) + " outside [0, " + std::to_string(vocab) + ")");
    }
  }
  Tape<S>* tape = detail::result_tape<S>({&logits});
  Tensor<S> out = detail::make_result<S>({1}, tape, logits.requires_grad());
  auto probs = std::make_shared<std::vector<S>>(static_cast<size_t>(n) * vocab);
  const S* pl = logits.data();
  S total = 0;
  for (int i = 0; i < n; ++i) {
    const S* row = pl + static_cast<size_t>(i) * vocab;
    S mx = row[0];
    for (int j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
    S sum = 0;
    S* prow = probs->data() + static_cast<size_t>(i) * vocab;
    for (int j = 0; j < vocab; ++j) {
      const S e = std::exp(row[j] - mx);
      prow[j] = e;
      sum += e;
    }
    const S inv = S(1) / sum;
    for (int j = 0; j < vocab; ++j) prow[j] *= inv;
    total += std::log(sum) + mx - row[targets[i]];
  }
  out.values()[0] = total / static_cast<S>(n);
  auto li = logits.impl_ptr(), oi = out.impl_ptr();
  auto tgt = std::make_shared<std::vector<int32_t>>(targets);
  detail::record<S>("cross_entropy", tape, out, {li, oi}, [li, oi, probs, tgt, n, vocab]() {
    if (oi->grad.empty() || !li->requires_grad) return;
    const S g = oi->grad[0] / static_cast<S>(n);
    S* gl = li->ensure_grad().data();
    for (int i = 0; i < n; ++i) {
      const S* prow = probs->data() + static_cast<size_t>(i) * vocab;
      S* grow = gl + static_cast<size_t>(i) * vocab;
      for (int j = 0; j < vocab; ++j) grow[j] += g * prow[j];
      grow[(*tgt)[i]] -= g;
    }
  });
  return out;
}

// out[i,:] = table[ids[i],:]; backward scatters into the looked-up rows.
template <typename S>
Tensor<S> embedding_lookup(const Tensor<S>& table, const std::vector<int32_t>& ids) {
  if (table.rank() != 2) {
    throw ShapeError("embedding_lookup: table must be [vocab, dim], got " + shape_str(table.shape()));
  }
  const int vocab = table.dim(0), d = table.dim(1);
  const int n = static_cast<int>(ids.size());
  if (n == 0) throw ShapeError("embedding_lookup: empty id sequence");
  for (int i = 0; i < n; ++i) {
    if (ids[i] < 0 || ids[i] >= vocab) {
      throw IndexError("embedding_lookup: id " + std::to_string(ids[i]) + " at position " +
                       std::to_string(i) + " outside [0, " + std::to_string(vocab) + ")");
    }
  }
  Tape<S>* tape = detail::result_tape<S>({&table});
  Tensor<S> out = detail::make_result<S>({n, d}, tape, table.requires_grad());
  const S* pt = table.data();
  S* po = out.data();
  for (int i = 0; i < n; ++i) {
    std::copy_n(pt + static_cast<size_t>(ids[i]) * d, d, po + static_cast<size_t>(i) * d);
  }
  auto ti = table.impl_ptr(), oi = out.impl_ptr();
  auto idv = std::make_shared<std::vector<int32_t>>(ids);
  detail::record<S>("embedding_lookup", tape, out, {ti, oi}, [ti, oi, idv, n, d]() {
    if (oi->grad.empty() || !ti->requires_grad) return;
    S* gt = ti->ensure_grad().data();
    const S* g = oi->grad.data();
    for (int i = 0; i < n; ++i) {
      S* trow = gt + static_cast<size_t>((*idv)[i]) * d;
      const S* grow = g + static_cast<size_t>(i) * d;
      for (int j = 0; j < d; ++j) trow[j] += grow[j];
    }
  });
  return out;
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  int ax = axis;
  detail::normalize_axis(ax, parts[0].rank());
  std::vector<int> shape = parts[0].shape();
  int total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.rank() != parts[0].rank()) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < p.rank(); ++i) {
      if (i != ax && p.dim(i) != shape[static_cast<size_t>(i)]) {
        throw ShapeError("concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(shape));
      }
    }
    total += p.dim(ax);
    rg = rg || p.requires_grad();
  }
  shape[static_cast<size_t>(ax)] = total;
  Tape<S>* tape = nullptr;
  for (const auto& p : parts) {
    if (p.tape()) {
      tape = p.tape();
      break;
    }
  }
  Tensor<S> out = detail::make_result<S>(shape, tape, rg);
  int64_t outer, n, inner;
  detail::axis_split(shape, ax, outer, n, inner);
  S* po = out.data();
  int64_t offset = 0;
  for (const auto& p : parts) {
    const int64_t pn = p.dim(ax);
    const S* pp = p.data();
    for (int64_t o = 0; o < outer; ++o) {
      std::copy_n(pp + o * pn * inner, pn * inner, po + (o * n + offset) * inner);
    }
    offset += pn;
  }
  std::vector<std::shared_ptr<TensorImpl<S>>> impls;
  impls.reserve(parts.size() + 1);
  std::vector<int64_t> sizes;
  for (const auto& p : parts) {
    impls.push_back(p.impl_ptr());
    sizes.push_back(p.dim(ax));
  }
  auto oi = out.impl_ptr();
  auto all = impls;
  all.push_back(oi);
  detail::record<S>("concat", tape, out, all, [impls, sizes, oi, outer, n, inner]() {
    if (oi->grad.empty()) return;
    const S* g = oi->grad.data();
    int64_t offset = 0;
    for (size_t k = 0; k < impls.size(); ++k) {
      const int64_t pn = sizes[k];
      if (impls[k]->requires_grad) {
        S* gp = impls[k]->ensure_grad().data();
        for (int64_t o = 0; o < outer; ++o) {
          const S* src = g + (o * n + offset) * inner;
          S* dst = gp + o * pn * inner;
          for (int64_t i = 0; i < pn * inner; ++i) dst[i] += src[i];
        }
      }
      offset += pn;
    }
  });
  return out;
}

// Contiguous [start, end) range along one axis.
template <typename S>
Tensor<S> slice(const Tensor<S>& x, int axis, int start, int end) {
  int ax = axis;
  detail::normalize_axis(ax, x.rank());
  const int dim = x.dim(ax);
  if (start < 0 || end > dim || start >= end) {
    throw IndexError("slice: range [" + std::to_string(start) + ", " + std::to_string(end) +
                     ") invalid for axis of size " + std::to_string(dim));
  }
  std::vector<int> shape = x.shape();
  shape[static_cast<size_t>(ax)] = end - start;
  Tape<S>* tape = detail::result_tape<S>({&x});
  Tensor<S> out = detail::make_result<S>(shape, tape, x.requires_grad());
  int64_t outer, n, inner;
  detail::axis_split(x.shape(), ax, outer, n, inner);
  const int64_t sn = end - start;
  const S* px = x.data();
  S* po = out.data();
  for (int64_t o = 0; o < outer; ++o) {
    std::copy_n(px + (o * n + start) * inner, sn * inner, po + o * sn * inner);
  }
  auto xi = x.impl_ptr(), oi = out.impl_ptr();
  detail::record<S>("slice", tape, out, {xi, oi}, [xi, oi, outer, n, inner, start, sn]() {
    if (oi->grad.empty() || !xi->requires_grad) return;
    S* gx = xi->ensure_grad().data();
    const S* g = oi->grad.data();
    for (int64_t o = 0; o < outer; ++o) {
      const S* src = g + o * sn * inner;
      S* dst = gx + (o * n + start) * inner;
      for (int64_t i = 0; i < sn * inner; ++i) dst[i] += src[i];
    }
  });
  return out;
}

// Same data, new shape (element count must match); backward is identity.
template <typename S>
Tensor<S> reshape(const Tensor<S>& x, std::vector<int> new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(new_shape));
  }
  Tape<S>* tape = detail::result_tape<S>({&x});
  Tensor<S> out = detail::make_result<S>(std::move(new_shape), tape, x.requires_grad());
  std::copy_n(x.data(), static_cast<size_t>(x.numel()), out.data());
  auto xi = x.impl_ptr(), oi = out.impl_ptr();
  const int64_t n = x.numel();
  detail::record<S>("reshape", tape, out, {xi, oi}, [xi, oi, n]() {
    if (oi->grad.empty() || !xi->requires_grad) return;
    S* gx = xi->ensure_grad().data();
    const S* g = oi->grad.data();
    for (int64_t i = 0; i < n; ++i) gx[i] += g[i];
  });
  return out;
}

// Sum of all elements, as a [1] tensor.
template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  Tape<S>* tape = detail::result_tape<S>({&x});
  Tensor<S> out = detail::make_result<S>({1}, tape, x.requires_grad());
  const int64_t n = x.numel();
  const S* px = x.data();
  S acc = 0;
  for (int64_t i = 0; i < n; ++i) acc += px[i];
  out.values()[0] = acc;
  auto xi = x.impl_ptr(), oi = out.impl_ptr();
  detail::record<S>("sum", tape, out, {xi, oi}, [xi, oi, n]() {
    if (oi->grad.empty() || !xi->requires_grad) return;
    const S g = oi->grad[0];
    S* gx = xi->ensure_grad().data();
    for (int64_t i = 0; i < n; ++i) gx[i] += g;
  });
  return out;
}

}  // namespace hgpt
