#pragma once

#include <chrono>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>

#include "hgpt/checkpoint.hpp"
#include "hgpt/hierarchical.hpp"

namespace hgpt {

struct EvalResult {
  double ppl = 0;
  double nll_sum = 0;
  int64_t token_count = 0;
};

struct MetricEvent {
  int64_t step = 0;
  int64_t epoch = 0;
  std::string split;
  double ppl = 0;
  double nll_sum = 0;
  int64_t token_count = 0;
  int64_t wall_ms = 0;

  std::string to_json_line() const {
    char num[64];
    std::string out = "{\"step\":" + std::to_string(step);
    out += ",\"epoch\":" + std::to_string(epoch);
    out += ",\"split\":\"" + split + "\"";
    std::snprintf(num, sizeof(num), "%.17g", ppl);
    out += ",\"ppl\":" + std::string(num);
    std::snprintf(num, sizeof(num), "%.17g", nll_sum);
    out += ",\"nll_sum\":" + std::string(num);
    out += ",\"token_count\":" + std::to_string(token_count);
    out += ",\"wall_ms\":" + std::to_string(wall_ms);
    out += "}";
    return out;
  }
};

struct TrainerConfig {
  AdamConfig adam;
  int epochs = 10;
  int batch_size = 8;  // examples (windows or documents) per update
  int seq_len = 32;    // flat batching only
  int patience = 5;    // epochs without valid improvement before stopping
  uint64_t seed = 1234;
  double divergence_threshold = 1e4;
  double stop_below_valid_ppl = 0;    // > 0: stop once valid PPL beats this
  bool deterministic_metrics = false; // wall_ms := 0 for byte-identical logs
  int64_t start_step = 0;             // resume position (optimizer updates)
  int64_t max_steps = 0;              // 0 = epoch-bounded only
  std::string best_checkpoint_path;   // best-valid model (+optimizer)
  std::string last_checkpoint_path;   // exact state at exit, for resuming
  std::string metrics_path;           // JSONL event log
  std::string config_json = "{}";     // snapshot embedded in checkpoints
};

struct TrainRun {
  std::vector<double> step_losses;  // one entry per optimizer update
  std::vector<MetricEvent> metrics;
  int64_t steps = 0;
  int64_t epochs_run = 0;
  double best_valid_ppl = std::numeric_limits<double>::infinity();
  int64_t best_step = -1;
  bool early_stopped = false;
};

namespace detail {

// -log softmax(row)[target], computed in double via log-sum-exp.
template <typename S>
double row_nll(const S* row, int vocab, int32_t target) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < vocab; ++j) mx = std::max(mx, static_cast<double>(row[j]));
  double sum = 0;
  for (int j = 0; j < vocab; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
  return std::log(sum) + mx - static_cast<double>(row[target]);
}

template <typename S>
void add_logits_nll(const Tensor<S>& logits, const std::vector<int32_t>& targets, EvalResult& acc) {
  const int vocab = logits.dim(1);
  for (int i = 0; i < logits.dim(0); ++i) {
    acc.nll_sum += row_nll(logits.data() + static_cast<size_t>(i) * vocab, vocab,
                           targets[static_cast<size_t>(i)]);
    ++acc.token_count;
  }
}

inline void finish_eval(EvalResult& r, const std::string& what) {
  if (r.token_count == 0) throw TrainingError("evaluation over empty " + what);
  r.ppl = std::exp(r.nll_sum / static_cast<double>(r.token_count));
}

}  // namespace detail

// PPL of the flat model over a split, accounted over window targets.
template <typename S>
EvalResult evaluate_flat(const StackParams<S>& p, const CorpusSplit& split, int seq_len) {
  NoGradGuard<S> guard(*p.pos_table.tape());
  EvalResult r;
  for (const auto& ex : batchify_flat(split, seq_len)) {
    detail::add_logits_nll(gpt_forward(p, ex.input), ex.target, r);
  }
  detail::finish_eval(r, "split '" + split.tag + "'");
  return r;
}

// Teacher-forced PPL of the hierarchical model over a split's documents.
template <typename S>
EvalResult evaluate_hierarchical(const HierarchicalParams<S>& p, const CorpusSplit& split) {
  NoGradGuard<S> guard(*p.bod_embedding.tape());
  EvalResult r;
  for (const auto& doc : split.documents) {
    Tensor<S> preds = generate_next_embeddings(p, encode_sentences(p, doc));
    for (size_t s = 0; s < doc.sentences.size(); ++s) {
      const auto& sent = doc.sentences[s];
      detail::add_logits_nll(
          decode_sentence(p, slice(preds, 0, static_cast<int>(s), static_cast<int>(s) + 1), sent),
          sent, r);
    }
  }
  detail::finish_eval(r, "split '" + split.tag + "'");
  return r;
}

// The token multiset each model family is scored on.
inline std::vector<int32_t> flat_eval_targets(const CorpusSplit& split, int seq_len) {
  std::vector<int32_t> out;
  for (const auto& ex : batchify_flat(split, seq_len)) {
    out.insert(out.end(), ex.target.begin(), ex.target.end());
  }
  return out;
}

inline std::vector<int32_t> hier_eval_targets(const CorpusSplit& split) {
  std::vector<int32_t> out;
  for (const auto& doc : split.documents) {
    for (const auto& s : doc.sentences) out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

// Context-free baseline: unigram distribution fitted on the train stream
// (add-one smoothed), scored on the given targets.
inline double unigram_perplexity(const CorpusSplit& train, const std::vector<int32_t>& targets,
                                 int vocab_size) {
  if (targets.empty()) throw TrainingError("unigram_perplexity: no targets");
  std::vector<int64_t> counts(static_cast<size_t>(vocab_size), 0);
  int64_t total = 0;
  for (const auto& s : train.sentences) {
    for (int32_t id : s) {
      ++counts[static_cast<size_t>(id)];
      ++total;
    }
  }
  const double denom = static_cast<double>(total + vocab_size);
  double nll = 0;
  for (int32_t t : targets) {
    nll -= std::log((static_cast<double>(counts[static_cast<size_t>(t)]) + 1.0) / denom);
  }
  return std::exp(nll / static_cast<double>(targets.size()));
}

// Owning wrappers: a tape plus the parameters living on it.

template <typename S>
struct FlatModel {
  std::unique_ptr<Tape<S>> tape;
  StackParams<S> params;
  ParamSet<S> param_set;

  static FlatModel create(const StackConfig& cfg, uint64_t seed) {
    FlatModel m;
    m.tape = std::make_unique<Tape<S>>();
    Rng rng(mix_seed(seed, 0x494e4954));  // "INIT"
    m.params = init_stack(*m.tape, cfg, rng, true, "gpt");
    collect_params(m.params, m.param_set);
    return m;
  }
};

template <typename S>
struct HierarchicalModel {
  std::unique_ptr<Tape<S>> tape;
  HierarchicalParams<S> params;
  ParamSet<S> param_set;

  static HierarchicalModel create(const HierarchicalConfig& cfg, uint64_t seed) {
    HierarchicalModel m;
    m.tape = std::make_unique<Tape<S>>();
    Rng rng(mix_seed(seed, 0x494e4954));
    m.params = init_hierarchical(*m.tape, cfg, rng);
    collect_params(m.params, m.param_set);
    return m;
  }
};

namespace detail {

template <typename S>
TrainRun run_training(Tape<S>& tape, const ParamSet<S>& params, AdamState<S>& opt,
                      int64_t n_examples, const TrainerConfig& cfg,
                      const std::function<Tensor<S>(size_t)>& example_loss,
                      const std::function<EvalResult()>& evaluate_valid) {
  if (n_examples <= 0) throw TrainingError("no training examples");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (opt.step != cfg.start_step) {
    throw TrainingError("optimizer step " + std::to_string(opt.step) +
                        " does not match start_step " + std::to_string(cfg.start_step));
  }
  const int64_t steps_per_epoch = (n_examples + cfg.batch_size - 1) / cfg.batch_size;
  const auto t0 = std::chrono::steady_clock::now();
  auto wall_ms = [&]() -> int64_t {
    if (cfg.deterministic_metrics) return 0;
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                                 t0)
        .count();
  };

  std::ofstream metrics_out;
  if (!cfg.metrics_path.empty()) {
    metrics_out.open(cfg.metrics_path, std::ios::binary | std::ios::trunc);
    if (!metrics_out) throw IoError("cannot write metrics file: " + cfg.metrics_path);
  }

  TrainRun run;
  int64_t step = cfg.start_step;
  int64_t epochs_since_best = 0;
  bool stop = false;

  auto emit = [&](MetricEvent ev) {
    if (metrics_out.is_open()) {
      metrics_out << ev.to_json_line() << '\n';
      metrics_out.flush();
    }
    run.metrics.push_back(std::move(ev));
  };

  const int64_t first_epoch = cfg.start_step / steps_per_epoch;
  const int64_t skip_batches = cfg.start_step % steps_per_epoch;

  for (int64_t epoch = first_epoch; epoch < cfg.epochs && !stop; ++epoch) {
    // Stateless per-epoch shuffle: resuming only needs the step count.
    std::vector<size_t> order(static_cast<size_t>(n_examples));
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(mix_seed(cfg.seed, static_cast<uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    for (int64_t b = 0; b < steps_per_epoch; ++b) {
      if (epoch == first_epoch && b < skip_batches) continue;
      const size_t lo = static_cast<size_t>(b) * static_cast<size_t>(cfg.batch_size);
      const size_t hi = std::min(order.size(), lo + static_cast<size_t>(cfg.batch_size));
      const S inv_b = S(1) / static_cast<S>(hi - lo);
      zero_grads(params);
      double batch_loss = 0;
      for (size_t i = lo; i < hi; ++i) {
        Tensor<S> loss = example_loss(order[i]);
        batch_loss += static_cast<double>(loss.item()) / static_cast<double>(hi - lo);
        tape.backward(scale(loss, inv_b));
        tape.reset();
      }
      adam_step(params, opt);
      ++step;
      run.step_losses.push_back(batch_loss);
      if (!std::isfinite(batch_loss) || batch_loss > cfg.divergence_threshold) {
        throw TrainingError("training diverged at step " + std::to_string(step) +
                            " (loss=" + std::to_string(batch_loss) + ")");
      }
      if (cfg.max_steps > 0 && step >= cfg.max_steps) {
        stop = true;
        break;
      }
    }
    ++run.epochs_run;

    if (evaluate_valid) {
      const EvalResult ev = evaluate_valid();
      emit(MetricEvent{step, epoch, "valid", ev.ppl, ev.nll_sum, ev.token_count, wall_ms()});
      if (ev.ppl < run.best_valid_ppl) {
        run.best_valid_ppl = ev.ppl;
        run.best_step = step;
        epochs_since_best = 0;
        if (!cfg.best_checkpoint_path.empty()) {
          save_checkpoint(cfg.best_checkpoint_path, cfg.config_json, params, &opt);
        }
      } else {
        ++epochs_since_best;
        if (cfg.patience > 0 && epochs_since_best >= cfg.patience) {
          run.early_stopped = true;
          stop = true;
        }
      }
      if (cfg.stop_below_valid_ppl > 0 && ev.ppl < cfg.stop_below_valid_ppl) stop = true;
    }
  }
  run.steps = step;

  // Order matters: the resume checkpoint must capture the exact final state;
  // only the in-memory parameters are rolled back to the best epoch.
  if (!cfg.last_checkpoint_path.empty()) {
    save_checkpoint(cfg.last_checkpoint_path, cfg.config_json, params, &opt);
  }
  if (!cfg.best_checkpoint_path.empty() && run.best_step >= 0 && run.best_step != step) {
    restore_params(load_checkpoint_file(cfg.best_checkpoint_path), params);
  }
  return run;
}

}  // namespace detail

template <typename S>
TrainRun train_flat(FlatModel<S>& model, const CorpusSplit& train, const CorpusSplit* valid,
                    const TrainerConfig& cfg, AdamState<S>* opt_in = nullptr) {
  auto examples = batchify_flat(train, cfg.seq_len);
  AdamState<S> local_opt{cfg.adam};
  AdamState<S>& opt = opt_in ? *opt_in : local_opt;
  if (!opt_in) opt.config = cfg.adam;
  std::function<EvalResult()> eval;
  if (valid) eval = [&]() { return evaluate_flat(model.params, *valid, cfg.seq_len); };
  return detail::run_training<S>(
      *model.tape, model.param_set, opt, static_cast<int64_t>(examples.size()), cfg,
      [&](size_t i) {
        return cross_entropy(gpt_forward(model.params, examples[i].input), examples[i].target);
      },
      eval);
}

template <typename S>
TrainRun train_hierarchical(HierarchicalModel<S>& model, const CorpusSplit& train,
                            const CorpusSplit* valid, const TrainerConfig& cfg,
                            AdamState<S>* opt_in = nullptr) {
  const auto& docs = train.documents;
  AdamState<S> local_opt{cfg.adam};
  AdamState<S>& opt = opt_in ? *opt_in : local_opt;
  if (!opt_in) opt.config = cfg.adam;
  std::function<EvalResult()> eval;
  if (valid) eval = [&]() { return evaluate_hierarchical(model.params, *valid); };
  return detail::run_training<S>(
      *model.tape, model.param_set, opt, static_cast<int64_t>(docs.size()), cfg,
      [&](size_t i) { return hierarchical_forward(model.params, docs[i]).loss; }, eval);
}

}  // namespace hgpt
