#pragma once

#include <numeric>
#include <unordered_set>

#include "hgpt/attention.hpp"

namespace hgpt {

struct StackConfig {
  int vocab_size = 0;  // 0 for stacks fed embeddings instead of token ids
  int max_seq_len = 64;
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int d_ff = 0;  // 0 -> 4 * d_model
  AttentionKind kind = AttentionKind::standard;
  double init_std = 0.02;

  int resolved_d_ff() const { return d_ff > 0 ? d_ff : 4 * d_model; }

  void validate() const {
    if (d_model <= 0 || n_heads <= 0 || n_layers < 0 || max_seq_len <= 0 || vocab_size < 0) {
      throw ConfigError("StackConfig: non-positive dimension");
    }
    if (d_model % n_heads != 0) {
      throw ConfigError("StackConfig: d_model " + std::to_string(d_model) +
                        " not divisible by n_heads " + std::to_string(n_heads));
    }
  }
};

template <typename S>
struct LayerParams {
  Tensor<S> ln1_g, ln1_b;
  MultiHeadParams<S> attn;
  Tensor<S> ln2_g, ln2_b;
  Tensor<S> w_ff1;  // [d_model, d_ff]
  Tensor<S> w_ff2;  // [d_ff, d_model]
};

// One encoder/decoder stack. `token_table` stays undefined for stacks whose
// inputs are already d_model vectors (the document-level generator).
template <typename S>
struct StackParams {
  StackConfig config;
  Tensor<S> token_table;  // [vocab, d_model]; also the tied output head
  Tensor<S> pos_table;    // [max_seq_len, d_model]
  std::vector<LayerParams<S>> layers;
  Tensor<S> final_g, final_b;
};

// Insertion-ordered set of trainable tensors, deduplicated by storage (the
// congruent w_q/w_k pair contributes a single slot).
template <typename S>
class ParamSet {
 public:
  void add(const Tensor<S>& t) {
    if (!t.defined()) return;
    if (seen_.insert(t.impl()).second) tensors_.push_back(t);
  }

  const std::vector<Tensor<S>>& tensors() const { return tensors_; }
  size_t size() const { return tensors_.size(); }

  int64_t total_params() const {
    int64_t n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
  }

 private:
  std::vector<Tensor<S>> tensors_;
  std::unordered_set<const TensorImpl<S>*> seen_;
};

template <typename S>
void collect_params(const StackParams<S>& p, ParamSet<S>& out) {
  out.add(p.token_table);
  out.add(p.pos_table);
  for (const auto& l : p.layers) {
    out.add(l.ln1_g);
    out.add(l.ln1_b);
    out.add(l.attn.w_q);
    out.add(l.attn.w_k);
    out.add(l.attn.w_v);
    out.add(l.attn.w_o);
    out.add(l.ln2_g);
    out.add(l.ln2_b);
    out.add(l.w_ff1);
    out.add(l.w_ff2);
  }
  out.add(p.final_g);
  out.add(p.final_b);
}

// Closed form for the trainable-parameter total of one stack.
inline int64_t stack_param_count(const StackConfig& cfg, bool with_token_table) {
  cfg.validate();
  const int64_t d = cfg.d_model;
  const int64_t d_ff = cfg.resolved_d_ff();
  const int64_t per_layer = attention_param_count(cfg.d_model, cfg.kind)  // projections
                            + 2 * d * d_ff                                // FFN
                            + 4 * d;                                      // two layer norms
  int64_t total = cfg.n_layers * per_layer;
  total += 2 * d;                                // final norm
  total += static_cast<int64_t>(cfg.max_seq_len) * d;  // positions
  if (with_token_table) total += static_cast<int64_t>(cfg.vocab_size) * d;
  return total;
}

template <typename S>
StackParams<S> init_stack(Tape<S>& tape, const StackConfig& cfg, Rng& rng, bool with_token_table,
                          const std::string& prefix) {
  cfg.validate();
  if (with_token_table && cfg.vocab_size <= 0) {
    throw ConfigError("init_stack: token table requested with vocab_size " +
                      std::to_string(cfg.vocab_size));
  }
  StackParams<S> p;
  p.config = cfg;
  const int d = cfg.d_model, d_ff = cfg.resolved_d_ff();
  if (with_token_table) {
    p.token_table = tape.leaf({cfg.vocab_size, d}, true, prefix + ".token_table");
    fill_normal(p.token_table, rng, cfg.init_std);
  }
  p.pos_table = tape.leaf({cfg.max_seq_len, d}, true, prefix + ".pos_table");
  fill_normal(p.pos_table, rng, cfg.init_std);
  p.layers.resize(static_cast<size_t>(cfg.n_layers));
  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string lp = prefix + ".layer" + std::to_string(i);
    LayerParams<S>& l = p.layers[static_cast<size_t>(i)];
    l.ln1_g = tape.leaf({d}, true, lp + ".ln1_g");
    l.ln1_b = tape.leaf({d}, true, lp + ".ln1_b");
    fill_const(l.ln1_g, S(1));
    l.attn = init_multi_head(tape, d, cfg.n_heads, cfg.kind, rng, cfg.init_std, lp + ".attn");
    l.ln2_g = tape.leaf({d}, true, lp + ".ln2_g");
    l.ln2_b = tape.leaf({d}, true, lp + ".ln2_b");
    fill_const(l.ln2_g, S(1));
    l.w_ff1 = tape.leaf({d, d_ff}, true, lp + ".w_ff1");
    l.w_ff2 = tape.leaf({d_ff, d}, true, lp + ".w_ff2");
    fill_normal(l.w_ff1, rng, cfg.init_std);
    fill_normal(l.w_ff2, rng, cfg.init_std);
  }
  p.final_g = tape.leaf({d}, true, prefix + ".final_g");
  p.final_b = tape.leaf({d}, true, prefix + ".final_b");
  fill_const(p.final_g, S(1));
  return p;
}

// Pre-norm residual block: x + MHA(LN(x)), then + FFN(LN(.)).
template <typename S>
Tensor<S> layer_forward(const LayerParams<S>& l, const Tensor<S>& x, const AttentionMask<S>& mask,
                        AttentionTrace<S>* trace = nullptr) {
  Tensor<S> h = add(x, multi_head_forward(l.attn, layer_norm(x, l.ln1_g, l.ln1_b), mask, trace));
  Tensor<S> u = layer_norm(h, l.ln2_g, l.ln2_b);
  Tensor<S> ff = matmul(gelu(matmul(u, l.w_ff1)), l.w_ff2);
  return add(h, ff);
}

// token + position embeddings -> [n, d_model]
template <typename S>
Tensor<S> embed_tokens(const StackParams<S>& p, const std::vector<int32_t>& ids) {
  if (!p.token_table.defined()) throw ConfigError("embed_tokens: stack has no token table");
  const int n = static_cast<int>(ids.size());
  if (n > p.config.max_seq_len) {
    throw ShapeError("embed_tokens: sequence of length " + std::to_string(n) +
                     " exceeds max_seq_len " + std::to_string(p.config.max_seq_len));
  }
  std::vector<int32_t> pos(static_cast<size_t>(n));
  std::iota(pos.begin(), pos.end(), 0);
  return add(embedding_lookup(p.token_table, ids), embedding_lookup(p.pos_table, pos));
}

// Runs all layers plus the final norm on an embedded input.
template <typename S>
Tensor<S> run_layers(const StackParams<S>& p, Tensor<S> x, const AttentionMask<S>& mask,
                     std::vector<AttentionTrace<S>>* traces = nullptr) {
  for (const auto& l : p.layers) {
    AttentionTrace<S> trace;
    x = layer_forward(l, x, mask, traces ? &trace : nullptr);
    if (traces) traces->push_back(std::move(trace));
  }
  return layer_norm(x, p.final_g, p.final_b);
}

// Stack over pre-embedded d_model vectors (adds positions first).
template <typename S>
Tensor<S> run_stack_vectors(const StackParams<S>& p, const Tensor<S>& x,
                            const AttentionMask<S>& mask) {
  if (x.rank() != 2 || x.dim(1) != p.config.d_model) {
    throw ShapeError("run_stack_vectors: expected [n, " + std::to_string(p.config.d_model) +
                     "], got " + shape_str(x.shape()));
  }
  const int n = x.dim(0);
  if (n > p.config.max_seq_len) {
    throw ShapeError("run_stack_vectors: sequence of length " + std::to_string(n) +
                     " exceeds max_seq_len " + std::to_string(p.config.max_seq_len));
  }
  std::vector<int32_t> pos(static_cast<size_t>(n));
  std::iota(pos.begin(), pos.end(), 0);
  return run_layers(p, add(x, embedding_lookup(p.pos_table, pos)), mask);
}

// Tied output head: logits = h @ token_table^T.
template <typename S>
Tensor<S> logits_from_hidden(const StackParams<S>& p, const Tensor<S>& h) {
  if (!p.token_table.defined()) throw ConfigError("logits_from_hidden: stack has no token table");
  return matmul(h, transpose(p.token_table));
}

// Causal LM forward: ids -> next-token logits [n, vocab].
template <typename S>
Tensor<S> gpt_forward(const StackParams<S>& p, const std::vector<int32_t>& ids,
                      std::vector<AttentionTrace<S>>* traces = nullptr) {
  Tensor<S> x = embed_tokens(p, ids);
  const auto mask = AttentionMask<S>::causal(static_cast<int>(ids.size()));
  return logits_from_hidden(p, run_layers(p, x, mask, traces));
}

// Bidirectional encode; final hidden states, [n, d_model].
template <typename S>
Tensor<S> bert_encode_hidden(const StackParams<S>& p, const std::vector<int32_t>& ids) {
  return run_layers(p, embed_tokens(p, ids), AttentionMask<S>::none());
}

// Sentence embedding: the final hidden state at the last position (the
// sentence terminator), [1, d_model].
template <typename S>
Tensor<S> bert_encode(const StackParams<S>& p, const std::vector<int32_t>& ids) {
  Tensor<S> h = bert_encode_hidden(p, ids);
  const int n = h.dim(0);
  return slice(h, 0, n - 1, n);
}

// Greedy continuation of `prefix`; stops at eos_id (if >= 0) or after
// max_new tokens. Returns only the generated ids.
template <typename S>
std::vector<int32_t> gpt_generate(const StackParams<S>& p, std::vector<int32_t> prefix, int max_new,
                                  int eos_id = -1) {
  if (prefix.empty()) throw ConfigError("gpt_generate: empty prefix");
  NoGradGuard<S> guard(*p.pos_table.tape());
  std::vector<int32_t> out;
  for (int step = 0; step < max_new; ++step) {
    if (static_cast<int>(prefix.size()) >= p.config.max_seq_len) break;
    Tensor<S> logits = gpt_forward(p, prefix);
    const S* row = logits.data() + static_cast<size_t>(logits.dim(0) - 1) * logits.dim(1);
    int32_t best = 0;
    for (int j = 1; j < logits.dim(1); ++j) {
      if (row[j] > row[best]) best = j;
    }
    out.push_back(best);
    prefix.push_back(best);
    if (best == eos_id) break;
  }
  return out;
}

}  // namespace hgpt
