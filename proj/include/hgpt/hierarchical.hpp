#pragma once

#include "hgpt/corpus.hpp"
#include "hgpt/transformer.hpp"

namespace hgpt {

struct HierarchicalConfig {
  int enc_layers = 1;
  int doc_layers = 1;
  int dec_layers = 4;
  int d_model = 64;
  int num_heads = 8;
  int vocab_size = 0;
  int max_sentence_len = 64;
  int max_doc_sentences = 8;
  bool congruent = false;
  double init_std = 0.02;
  double aux_lambda = 0.0;  // weight of the optional embedding-MSE term

  int total_layers() const { return enc_layers + doc_layers + dec_layers; }

  void validate() const {
    if (enc_layers < 1 || doc_layers < 1 || dec_layers < 1) {
      throw ConfigError("HierarchicalConfig: every block needs at least one layer");
    }
    if (d_model <= 0 || num_heads <= 0 || d_model % num_heads != 0) {
      throw ConfigError("HierarchicalConfig: d_model " + std::to_string(d_model) +
                        " not divisible by num_heads " + std::to_string(num_heads));
    }
    if (vocab_size <= 0) throw ConfigError("HierarchicalConfig: vocab_size must be positive");
    if (max_sentence_len < 2 || max_doc_sentences < 1) {
      throw ConfigError("HierarchicalConfig: invalid sequence limits");
    }
    if (aux_lambda < 0) throw ConfigError("HierarchicalConfig: aux_lambda must be >= 0");
  }

  AttentionKind kind() const { return congruent ? AttentionKind::congruent : AttentionKind::standard; }

  StackConfig encoder_config() const {
    return {vocab_size, max_sentence_len, d_model, num_heads, enc_layers, 0, kind(), init_std};
  }
  // +1 position for the BOD slot.
  StackConfig doc_config() const {
    return {0, max_doc_sentences + 1, d_model, num_heads, doc_layers, 0, kind(), init_std};
  }
  StackConfig decoder_config() const {
    return {vocab_size, max_sentence_len, d_model, num_heads, dec_layers, 0, kind(), init_std};
  }
};

template <typename S>
struct HierarchicalParams {
  HierarchicalConfig config;
  StackParams<S> encoder;        // bidirectional, pools at the final token
  StackParams<S> doc_generator;  // causal, embedding-in / embedding-out
  StackParams<S> decoder;        // causal, conditioned via a prefix vector
  Tensor<S> bod_embedding;       // [d_model]
};

template <typename S>
HierarchicalParams<S> init_hierarchical(Tape<S>& tape, const HierarchicalConfig& cfg, Rng& rng) {
  cfg.validate();
  HierarchicalParams<S> p;
  p.config = cfg;
  p.encoder = init_stack(tape, cfg.encoder_config(), rng, true, "enc");
  p.doc_generator = init_stack(tape, cfg.doc_config(), rng, false, "doc");
  p.decoder = init_stack(tape, cfg.decoder_config(), rng, true, "dec");
  p.bod_embedding = tape.leaf({cfg.d_model}, true, "bod_embedding");
  fill_normal(p.bod_embedding, rng, cfg.init_std);
  return p;
}

template <typename S>
void collect_params(const HierarchicalParams<S>& p, ParamSet<S>& out) {
  collect_params(p.encoder, out);
  collect_params(p.doc_generator, out);
  collect_params(p.decoder, out);
  out.add(p.bod_embedding);
}

inline int64_t hierarchical_param_count(const HierarchicalConfig& cfg) {
  cfg.validate();
  return stack_param_count(cfg.encoder_config(), true) +
         stack_param_count(cfg.doc_config(), false) +
         stack_param_count(cfg.decoder_config(), true) + cfg.d_model;
}

template <typename S>
void check_document(const HierarchicalParams<S>& p, const Document& doc) {
  const auto& cfg = p.config;
  const int n_sent = static_cast<int>(doc.sentences.size());
  if (n_sent < 1 || n_sent > cfg.max_doc_sentences) {
    throw ShapeError("document has " + std::to_string(n_sent) + " sentences, limit " +
                     std::to_string(cfg.max_doc_sentences));
  }
  for (const auto& s : doc.sentences) {
    if (s.empty() || static_cast<int>(s.size()) > cfg.max_sentence_len) {
      throw ShapeError("sentence of length " + std::to_string(s.size()) + " outside [1, " +
                       std::to_string(cfg.max_sentence_len) + "]");
    }
  }
}

// Each sentence is encoded independently; row s is the encoder's hidden state
// at sentence s's final token.
template <typename S>
Tensor<S> encode_sentences(const HierarchicalParams<S>& p, const Document& doc) {
  check_document(p, doc);
  std::vector<Tensor<S>> rows;
  rows.reserve(doc.sentences.size());
  for (const auto& sent : doc.sentences) rows.push_back(bert_encode(p.encoder, sent));
  return rows.size() == 1 ? rows[0] : concat(rows, 0);
}

namespace detail {

// [BOD; rows of embs] as a [k+1, d_model] sequence (embs may be undefined).
template <typename S>
Tensor<S> doc_input(const HierarchicalParams<S>& p, const Tensor<S>& embs) {
  Tensor<S> bod = reshape(p.bod_embedding, {1, p.config.d_model});
  if (!embs.defined()) return bod;
  return concat(std::vector<Tensor<S>>{bod, embs}, 0);
}

}  // namespace detail

// Teacher-forced document pass: input [BOD, e_1, ..., e_{S-1}], causal; output
// row s (0-based) is the predicted embedding for sentence s+1.
template <typename S>
Tensor<S> generate_next_embeddings(const HierarchicalParams<S>& p, const Tensor<S>& sent_embs) {
  if (sent_embs.rank() != 2 || sent_embs.dim(1) != p.config.d_model) {
    throw ShapeError("generate_next_embeddings: expected [S, " + std::to_string(p.config.d_model) +
                     "], got " + shape_str(sent_embs.shape()));
  }
  const int n_sent = sent_embs.dim(0);
  if (n_sent > p.config.max_doc_sentences) {
    throw ShapeError("generate_next_embeddings: " + std::to_string(n_sent) +
                     " sentences exceed max_doc_sentences " +
                     std::to_string(p.config.max_doc_sentences));
  }
  Tensor<S> in = detail::doc_input(
      p, n_sent > 1 ? slice(sent_embs, 0, 0, n_sent - 1) : Tensor<S>{});
  return run_stack_vectors(p.doc_generator, in, AttentionMask<S>::causal(n_sent));
}

// Generation-time form: prediction for sentence k+1 given all k embeddings.
template <typename S>
Tensor<S> predict_next_embedding(const HierarchicalParams<S>& p, const Tensor<S>& sent_embs) {
  const int k = sent_embs.defined() ? sent_embs.dim(0) : 0;
  if (k > p.config.max_doc_sentences) {
    throw ShapeError("predict_next_embedding: context of " + std::to_string(k) +
                     " sentences exceeds max_doc_sentences " +
                     std::to_string(p.config.max_doc_sentences));
  }
  Tensor<S> h = run_stack_vectors(p.doc_generator, detail::doc_input(p, sent_embs),
                                  AttentionMask<S>::causal(k + 1));
  return slice(h, 0, k, k + 1);
}

// Decoder input [pred_emb, tok_emb(t_1), ..., tok_emb(t_{n-1})]; position i
// emits logits for t_{i+1}, so the returned [n, vocab] rows score exactly the
// target sequence.
template <typename S>
Tensor<S> decode_sentence(const HierarchicalParams<S>& p, const Tensor<S>& pred_emb,
                          const std::vector<int32_t>& targets) {
  const int d = p.config.d_model;
  const int n = static_cast<int>(targets.size());
  if (n < 1 || n > p.config.max_sentence_len) {
    throw ShapeError("decode_sentence: target length " + std::to_string(n) + " outside [1, " +
                     std::to_string(p.config.max_sentence_len) + "]");
  }
  if (pred_emb.numel() != d) {
    throw ShapeError("decode_sentence: pred_emb " + shape_str(pred_emb.shape()) +
                     ", expected " + std::to_string(d) + " elements");
  }
  Tensor<S> row0 = pred_emb.rank() == 2 ? pred_emb : reshape(pred_emb, {1, d});
  Tensor<S> in = row0;
  if (n > 1) {
    std::vector<int32_t> prev(targets.begin(), targets.end() - 1);
    in = concat(std::vector<Tensor<S>>{row0, embedding_lookup(p.decoder.token_table, prev)}, 0);
  }
  Tensor<S> h = run_stack_vectors(p.decoder, in, AttentionMask<S>::causal(n));
  return logits_from_hidden(p.decoder, h);
}

template <typename S>
struct HierarchicalLoss {
  Tensor<S> loss;                    // scalar: mean token CE (+ optional aux term)
  double nll_sum = 0.0;              // cross-entropy part only, summed over tokens
  int64_t token_count = 0;
  std::vector<double> sentence_nll;  // per-sentence NLL sums
  std::vector<int64_t> sentence_tokens;
};

// Joint teacher-forced loss: sentence s is decoded from the doc generator's
// prediction row s-1; mean CE over every token of every sentence.
template <typename S>
HierarchicalLoss<S> hierarchical_forward(const HierarchicalParams<S>& p, const Document& doc) {
  check_document(p, doc);
  const int n_sent = static_cast<int>(doc.sentences.size());
  Tensor<S> embs = encode_sentences(p, doc);
  Tensor<S> preds = generate_next_embeddings(p, embs);

  HierarchicalLoss<S> out;
  Tensor<S> total;
  for (int s = 0; s < n_sent; ++s) {
    const auto& sent = doc.sentences[static_cast<size_t>(s)];
    Tensor<S> logits = decode_sentence(p, slice(preds, 0, s, s + 1), sent);
    Tensor<S> ce = cross_entropy(logits, sent);  // mean over this sentence
    const int64_t n_tok = static_cast<int64_t>(sent.size());
    out.sentence_nll.push_back(static_cast<double>(ce.item()) * static_cast<double>(n_tok));
    out.sentence_tokens.push_back(n_tok);
    out.nll_sum += out.sentence_nll.back();
    out.token_count += n_tok;
    Tensor<S> weighted = scale(ce, static_cast<S>(n_tok));
    total = total.defined() ? add(total, weighted) : weighted;
  }
  out.loss = scale(total, S(1) / static_cast<S>(out.token_count));

  if (p.config.aux_lambda > 0) {
    // Pull predictions toward the (detached) encoder embeddings.
    Tensor<S> target = Tensor<S>::constant(embs.shape(), embs.values());
    Tensor<S> diff = sub(preds, target);
    Tensor<S> aux = scale(sum(mul(diff, diff)),
                          static_cast<S>(p.config.aux_lambda / static_cast<double>(embs.numel())));
    out.loss = add(out.loss, aux);
  }
  return out;
}

struct SamplingConfig {
  bool greedy = true;
  double temperature = 1.0;
  uint64_t seed = 0;
};

namespace detail {

template <typename S>
int32_t pick_token(const S* logits, int vocab, const SamplingConfig& sampling, Rng& rng) {
  if (sampling.greedy) {
    int32_t best = 0;
    for (int j = 1; j < vocab; ++j) {
      if (logits[j] > logits[best]) best = j;
    }
    return best;
  }
  if (sampling.temperature <= 0) throw ConfigError("sampling temperature must be positive");
  std::vector<double> probs(static_cast<size_t>(vocab));
  double mx = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < vocab; ++j) mx = std::max(mx, static_cast<double>(logits[j]) / sampling.temperature);
  double sum = 0;
  for (int j = 0; j < vocab; ++j) {
    probs[static_cast<size_t>(j)] = std::exp(static_cast<double>(logits[j]) / sampling.temperature - mx);
    sum += probs[static_cast<size_t>(j)];
  }
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  double r = uni(rng) * sum;
  for (int j = 0; j < vocab; ++j) {
    r -= probs[static_cast<size_t>(j)];
    if (r <= 0) return j;
  }
  return vocab - 1;
}

}  // namespace detail

// Extends `prefix` by num_new sentences. Each step: encode the context
// sentences, predict the next embedding, decode tokens until EOS (appending
// EOS on max-length truncation), then loop with the new sentence re-encoded.
// The context slides to the last max_doc_sentences sentences.
template <typename S>
Document hierarchical_generate(const HierarchicalParams<S>& p, const Document& prefix, int num_new,
                               const SamplingConfig& sampling = {}) {
  for (const auto& s : prefix.sentences) {
    if (s.empty() || static_cast<int>(s.size()) > p.config.max_sentence_len) {
      throw ShapeError("hierarchical_generate: prefix sentence of length " +
                       std::to_string(s.size()));
    }
  }
  NoGradGuard<S> guard(*p.bod_embedding.tape());
  Rng rng(mix_seed(sampling.seed, 0x47454e));  // "GEN"
  Document out = prefix;
  const int vocab = p.config.vocab_size;
  for (int k = 0; k < num_new; ++k) {
    const int total = static_cast<int>(out.sentences.size());
    const int ctx = std::min(total, p.config.max_doc_sentences);
    Tensor<S> embs;
    if (ctx > 0) {
      Document window;
      window.sentences.assign(out.sentences.end() - ctx, out.sentences.end());
      embs = encode_sentences(p, window);
    }
    Tensor<S> pred = predict_next_embedding(p, embs);
    std::vector<int32_t> toks;
    while (static_cast<int>(toks.size()) < p.config.max_sentence_len - 1) {
      // Score the next position: decoder input [pred, emb(toks...)].
      std::vector<int32_t> probe = toks;
      probe.push_back(kEosId);  // placeholder target; only the length matters
      Tensor<S> logits = decode_sentence(p, pred, probe);
      const S* row = logits.data() + static_cast<size_t>(logits.dim(0) - 1) * vocab;
      const int32_t next = detail::pick_token(row, vocab, sampling, rng);
      toks.push_back(next);
      if (next == kEosId) break;
    }
    if (toks.empty() || toks.back() != kEosId) toks.push_back(kEosId);
    out.sentences.push_back(std::move(toks));
  }
  return out;
}

}  // namespace hgpt
