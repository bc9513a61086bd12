#pragma once

#include "hgpt/ops.hpp"

namespace hgpt {

enum class AttentionKind { standard, congruent };

constexpr double kMaskBias = -1e9;  // exp() of a -1e9-shifted score underflows to exactly 0

// Additive score bias: 0 where attending is allowed, kMaskBias where not.
template <typename S>
struct AttentionMask {
  Tensor<S> bias;  // [n_query, n_key], constant (never trained)

  bool defined() const { return bias.defined(); }

  static AttentionMask none() { return {}; }

  // Query i may attend to keys 0..i.
  static AttentionMask causal(int n) {
    std::vector<S> b(static_cast<size_t>(n) * n, S(kMaskBias));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j) b[static_cast<size_t>(i) * n + j] = S(0);
    return {Tensor<S>::constant({n, n}, std::move(b), "causal_mask")};
  }
};

// Attn(Q, K, V) = softmax(Q K^T / sqrt(d_head) + mask) V.
// `scores_out` captures the scaled pre-mask scores, `probs_out` the
// post-softmax weights.
template <typename S>
Tensor<S> scaled_dot_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                               const AttentionMask<S>& mask, Tensor<S>* probs_out = nullptr,
                               Tensor<S>* scores_out = nullptr) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw ShapeError("scaled_dot_attention: q/k/v must be rank-2");
  }
  if (q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0)) {
    throw ShapeError("scaled_dot_attention: incompatible q " + shape_str(q.shape()) + ", k " +
                     shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  }
  const int d_head = q.dim(1);
  Tensor<S> scores = matmul(q, transpose(k));  // [nq, nk]
  scores = scale(scores, S(1.0 / std::sqrt(static_cast<double>(d_head))));
  if (scores_out) *scores_out = scores;
  if (mask.defined()) {
    if (mask.bias.shape() != scores.shape()) {
      throw ShapeError("scaled_dot_attention: mask " + shape_str(mask.bias.shape()) +
                       " does not match scores " + shape_str(scores.shape()));
    }
    scores = add(scores, mask.bias);
  }
  Tensor<S> probs = softmax(scores, -1);
  if (probs_out) *probs_out = probs;
  return matmul(probs, v);
}

// One attention block's projections, all [d_model, d_model], no biases.
// Congruent blocks store the *same* tensor in w_q and w_k: one parameter
// slot, one gradient accumulator, counted once.
template <typename S>
struct MultiHeadParams {
  int d_model = 0;
  int n_heads = 0;
  AttentionKind kind = AttentionKind::standard;
  Tensor<S> w_q, w_k, w_v, w_o;

  bool congruent() const { return kind == AttentionKind::congruent; }
};

template <typename S>
MultiHeadParams<S> init_multi_head(Tape<S>& tape, int d_model, int n_heads, AttentionKind kind,
                                   Rng& rng, double init_std, const std::string& prefix) {
  if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0) {
    throw ConfigError("init_multi_head: d_model " + std::to_string(d_model) +
                      " not divisible by n_heads " + std::to_string(n_heads));
  }
  MultiHeadParams<S> p;
  p.d_model = d_model;
  p.n_heads = n_heads;
  p.kind = kind;
  if (kind == AttentionKind::congruent) {
    p.w_q = tape.leaf({d_model, d_model}, true, prefix + ".w_qk");
    p.w_k = p.w_q;
  } else {
    p.w_q = tape.leaf({d_model, d_model}, true, prefix + ".w_q");
    p.w_k = tape.leaf({d_model, d_model}, true, prefix + ".w_k");
  }
  p.w_v = tape.leaf({d_model, d_model}, true, prefix + ".w_v");
  p.w_o = tape.leaf({d_model, d_model}, true, prefix + ".w_o");
  fill_normal(p.w_q, rng, init_std);
  if (kind == AttentionKind::standard) fill_normal(p.w_k, rng, init_std);
  fill_normal(p.w_v, rng, init_std);
  fill_normal(p.w_o, rng, init_std);
  return p;
}

// Distinct trainable matrices: 4 d^2 standard, 3 d^2 congruent.
inline int64_t attention_param_count(int d_model, AttentionKind kind) {
  const int64_t d2 = static_cast<int64_t>(d_model) * d_model;
  return (kind == AttentionKind::congruent ? 3 : 4) * d2;
}

// Per-head attention internals, for inspection in tests/tools.
template <typename S>
struct AttentionTrace {
  std::vector<Tensor<S>> head_scores;  // scaled, pre-mask
  std::vector<Tensor<S>> head_probs;   // post-softmax
};

// x [n, d_model] -> [n, d_model]. Heads are contiguous d_head-wide column
// groups of the shared projections.
template <typename S>
Tensor<S> multi_head_forward(const MultiHeadParams<S>& p, const Tensor<S>& x,
                             const AttentionMask<S>& mask, AttentionTrace<S>* trace = nullptr) {
  if (x.rank() != 2 || x.dim(1) != p.d_model) {
    throw ShapeError("multi_head_forward: expected [n, " + std::to_string(p.d_model) + "], got " +
                     shape_str(x.shape()));
  }
  const int d_head = p.d_model / p.n_heads;
  Tensor<S> q = matmul(x, p.w_q);
  Tensor<S> k = p.congruent() ? q : matmul(x, p.w_k);
  Tensor<S> v = matmul(x, p.w_v);
  std::vector<Tensor<S>> heads;
  heads.reserve(p.n_heads);
  for (int h = 0; h < p.n_heads; ++h) {
    const int lo = h * d_head, hi = (h + 1) * d_head;
    Tensor<S> qh = slice(q, 1, lo, hi);
    Tensor<S> kh = p.congruent() ? qh : slice(k, 1, lo, hi);
    Tensor<S> vh = slice(v, 1, lo, hi);
    Tensor<S> probs, scores;
    heads.push_back(scaled_dot_attention(qh, kh, vh, mask, trace ? &probs : nullptr,
                                         trace ? &scores : nullptr));
    if (trace) {
      trace->head_scores.push_back(scores);
      trace->head_probs.push_back(probs);
    }
  }
  return matmul(concat(heads, 1), p.w_o);
}

}  // namespace hgpt
