// Command-line driver: train / eval / sweep / params / generate / factorize.
// Exit codes: 0 success, 2 configuration error, 3 runtime/training error.

#include <cinttypes>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hgpt/hgpt.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using Scalar = float;

namespace {

// ---------------------------------------------------------------- spec

struct ExperimentSpec {
  std::string family = "flat";  // flat | hierarchical
  bool congruent = false;
  int layers = 4;  // flat depth
  int enc_layers = 1, doc_layers = 1, dec_layers = 4;
  int d_model = 64;
  int heads = 8;
  int vocab_max = 10000;
  int max_sentence_len = 64;
  int doc_window = 8;
  int doc_stride = 8;
  int seq_len = 32;
  int batch_size = 8;
  int epochs = 10;
  double lr = 3e-4;
  int warmup = 200;
  double clip = 1.0;
  int patience = 5;
  double aux_lambda = 0.0;
  double stop_below_valid_ppl = 0.0;
  int64_t max_steps = 0;
  bool deterministic_metrics = false;
  uint64_t seed = 1234;
  std::string corpus = "synthetic";  // directory with ptb.*.txt, or "synthetic"

  void validate() const {
    if (family != "flat" && family != "hierarchical") {
      throw hgpt::ConfigError("unknown model family: " + family);
    }
    if (family == "flat") {
      hgpt::StackConfig c = flat_config(10);
      c.validate();  // allows layers == 0: an embeddings-only stack
    } else {
      hier_config(10).validate();
    }
    if (seq_len < 2) throw hgpt::ConfigError("--seq-len must be >= 2");
    if (batch_size < 1) throw hgpt::ConfigError("--batch-size must be >= 1");
    if (epochs < 1) throw hgpt::ConfigError("--epochs must be >= 1");
    if (doc_stride < 1 || doc_stride > doc_window) {
      throw hgpt::ConfigError("--doc-stride must be in [1, --doc-window]");
    }
  }

  hgpt::StackConfig flat_config(int vocab_size) const {
    hgpt::StackConfig c;
    c.vocab_size = vocab_size;
    c.max_seq_len = seq_len;
    c.d_model = d_model;
    c.n_heads = heads;
    c.n_layers = layers;
    c.kind = congruent ? hgpt::AttentionKind::congruent : hgpt::AttentionKind::standard;
    return c;
  }

  hgpt::HierarchicalConfig hier_config(int vocab_size) const {
    hgpt::HierarchicalConfig c;
    c.enc_layers = enc_layers;
    c.doc_layers = doc_layers;
    c.dec_layers = dec_layers;
    c.d_model = d_model;
    c.num_heads = heads;
    c.vocab_size = vocab_size;
    c.max_sentence_len = max_sentence_len;
    c.max_doc_sentences = doc_window;
    c.congruent = congruent;
    c.aux_lambda = aux_lambda;
    return c;
  }

  hgpt::TrainerConfig trainer_config() const {
    hgpt::TrainerConfig t;
    t.adam.lr = lr;
    t.adam.warmup_steps = warmup;
    t.adam.clip_norm = clip;
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.seq_len = seq_len;
    t.patience = patience;
    t.seed = seed;
    t.stop_below_valid_ppl = stop_below_valid_ppl;
    t.deterministic_metrics = deterministic_metrics;
    t.max_steps = max_steps;
    return t;
  }

  std::string canonical() const {
    std::ostringstream os;
    os << "family=" << family << ";congruent=" << congruent << ";layers=" << layers
       << ";enc=" << enc_layers << ";doc=" << doc_layers << ";dec=" << dec_layers
       << ";d_model=" << d_model << ";heads=" << heads << ";vocab_max=" << vocab_max
       << ";max_sentence_len=" << max_sentence_len << ";doc_window=" << doc_window
       << ";doc_stride=" << doc_stride << ";seq_len=" << seq_len << ";batch_size=" << batch_size
       << ";epochs=" << epochs << ";lr=" << lr << ";warmup=" << warmup << ";clip=" << clip
       << ";patience=" << patience << ";aux_lambda=" << aux_lambda
       << ";stop_below=" << stop_below_valid_ppl << ";max_steps=" << max_steps
       << ";det_metrics=" << deterministic_metrics << ";seed=" << seed << ";corpus=" << corpus;
    return os.str();
  }
};

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string spec_hash(const ExperimentSpec& spec) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, fnv1a64(spec.canonical()));
  return buf;
}

fs::path run_root() {
  if (const char* env = std::getenv("HGPT_RUN_ROOT")) return fs::path(env);
  return fs::path("runs");
}

// ---------------------------------------------------------------- config json

json vocab_to_json(const hgpt::Vocabulary& v) {
  json arr = json::array();
  for (int32_t id = hgpt::kNumReserved; id < v.size(); ++id) arr.push_back(v.token(id));
  return arr;
}

hgpt::Vocabulary vocab_from_json(const json& arr) {
  hgpt::Vocabulary v = hgpt::Vocabulary::reserved_only();
  for (const auto& t : arr) v.push(t.get<std::string>());
  return v;
}

json spec_to_json(const ExperimentSpec& s) {
  return json{{"family", s.family},
              {"congruent", s.congruent},
              {"layers", s.layers},
              {"enc_layers", s.enc_layers},
              {"doc_layers", s.doc_layers},
              {"dec_layers", s.dec_layers},
              {"d_model", s.d_model},
              {"heads", s.heads},
              {"vocab_max", s.vocab_max},
              {"max_sentence_len", s.max_sentence_len},
              {"doc_window", s.doc_window},
              {"doc_stride", s.doc_stride},
              {"seq_len", s.seq_len},
              {"batch_size", s.batch_size},
              {"epochs", s.epochs},
              {"lr", s.lr},
              {"warmup", s.warmup},
              {"clip", s.clip},
              {"patience", s.patience},
              {"aux_lambda", s.aux_lambda},
              {"stop_below_valid_ppl", s.stop_below_valid_ppl},
              {"max_steps", s.max_steps},
              {"deterministic_metrics", s.deterministic_metrics},
              {"seed", s.seed},
              {"corpus", s.corpus}};
}

ExperimentSpec spec_from_json(const json& j) {
  ExperimentSpec s;
  s.family = j.at("family").get<std::string>();
  s.congruent = j.at("congruent").get<bool>();
  s.layers = j.at("layers").get<int>();
  s.enc_layers = j.at("enc_layers").get<int>();
  s.doc_layers = j.at("doc_layers").get<int>();
  s.dec_layers = j.at("dec_layers").get<int>();
  s.d_model = j.at("d_model").get<int>();
  s.heads = j.at("heads").get<int>();
  s.vocab_max = j.at("vocab_max").get<int>();
  s.max_sentence_len = j.at("max_sentence_len").get<int>();
  s.doc_window = j.at("doc_window").get<int>();
  s.doc_stride = j.at("doc_stride").get<int>();
  s.seq_len = j.at("seq_len").get<int>();
  s.batch_size = j.at("batch_size").get<int>();
  s.epochs = j.at("epochs").get<int>();
  s.lr = j.at("lr").get<double>();
  s.warmup = j.at("warmup").get<int>();
  s.clip = j.at("clip").get<double>();
  s.patience = j.at("patience").get<int>();
  s.aux_lambda = j.at("aux_lambda").get<double>();
  s.stop_below_valid_ppl = j.at("stop_below_valid_ppl").get<double>();
  s.max_steps = j.at("max_steps").get<int64_t>();
  s.deterministic_metrics = j.at("deterministic_metrics").get<bool>();
  s.seed = j.at("seed").get<uint64_t>();
  s.corpus = j.at("corpus").get<std::string>();
  return s;
}

// ---------------------------------------------------------------- corpus

struct LoadedCorpus {
  hgpt::Vocabulary vocab;
  hgpt::CorpusSplit train, valid, test;
};

LoadedCorpus load_splits(const ExperimentSpec& spec, const fs::path& run_dir) {
  fs::path dir;
  if (spec.corpus == "synthetic") {
    dir = run_dir / "corpus";
    fs::create_directories(dir);
    if (!fs::exists(dir / "ptb.train.txt")) {
      hgpt::write_synthetic_corpus(dir.string(), spec.seed);
    }
  } else {
    dir = fs::path(spec.corpus);
  }
  auto train_blocks = hgpt::load_corpus_file((dir / "ptb.train.txt").string());
  auto valid_blocks = hgpt::load_corpus_file((dir / "ptb.valid.txt").string());
  auto test_blocks = hgpt::load_corpus_file((dir / "ptb.test.txt").string());
  LoadedCorpus c;
  c.vocab = hgpt::build_vocab(train_blocks, spec.vocab_max);
  hgpt::CorpusOptions opt{spec.max_sentence_len, spec.doc_window, spec.doc_stride};
  c.train = hgpt::build_split(train_blocks, c.vocab, opt, "train");
  c.valid = hgpt::build_split(valid_blocks, c.vocab, opt, "valid");
  c.test = hgpt::build_split(test_blocks, c.vocab, opt, "test");
  return c;
}

// ---------------------------------------------------------------- params

int64_t count_for(const ExperimentSpec& spec, int vocab_size) {
  if (spec.family == "flat") return hgpt::stack_param_count(spec.flat_config(vocab_size), true);
  return hgpt::hierarchical_param_count(spec.hier_config(vocab_size));
}

void print_breakdown(const ExperimentSpec& spec, int vocab_size) {
  using hgpt::stack_param_count;
  if (spec.family == "flat") {
    hgpt::StackConfig c = spec.flat_config(vocab_size);
    const int64_t d = c.d_model, dff = c.resolved_d_ff();
    const int64_t tok = static_cast<int64_t>(c.vocab_size) * d;
    const int64_t pos = static_cast<int64_t>(c.max_seq_len) * d;
    const int64_t attn = hgpt::attention_param_count(c.d_model, c.kind);
    const int64_t per_layer = attn + 2 * d * dff + 4 * d;
    const int64_t total = stack_param_count(c, true);
    std::cout << "token_table        " << tok << "\n"
              << "position_table     " << pos << "\n"
              << "per_layer          " << per_layer << "  (attention " << attn << ", ffn "
              << 2 * d * dff << ", norms " << 4 * d << ")\n"
              << "layers x" << c.n_layers << "          " << per_layer * c.n_layers << "\n"
              << "final_norm         " << 2 * d << "\n"
              << "total              " << total << "\n";
    return;
  }
  hgpt::HierarchicalConfig c = spec.hier_config(vocab_size);
  const int64_t enc = stack_param_count(c.encoder_config(), true);
  const int64_t doc = stack_param_count(c.doc_config(), false);
  const int64_t dec = stack_param_count(c.decoder_config(), true);
  std::cout << "sentence_encoder   " << enc << "\n"
            << "doc_generator      " << doc << "\n"
            << "sentence_decoder   " << dec << "\n"
            << "bod_embedding      " << c.d_model << "\n"
            << "total              " << enc + doc + dec + c.d_model << "\n";
}

// ---------------------------------------------------------------- train

struct TrainOutcome {
  int64_t param_count = 0;
  double train_ppl = 0, valid_ppl = 0, test_ppl = 0;
  int64_t steps = 0;
  double best_valid_ppl = 0;
};

TrainOutcome run_train(const ExperimentSpec& spec, const fs::path& run_dir,
                       const std::string& resume_from) {
  fs::create_directories(run_dir);
  LoadedCorpus corpus = load_splits(spec, run_dir);
  hgpt::write_vocab((run_dir / "vocab.txt").string(), corpus.vocab);

  json cfg_json = {{"spec", spec_to_json(spec)},
                   {"vocab", vocab_to_json(corpus.vocab)},
                   {"vocab_size", corpus.vocab.size()}};

  hgpt::TrainerConfig tc = spec.trainer_config();
  tc.best_checkpoint_path = (run_dir / "checkpoint.bin").string();
  tc.last_checkpoint_path = (run_dir / "last.bin").string();
  tc.metrics_path = (run_dir / "metrics.jsonl").string();

  TrainOutcome out;
  if (spec.family == "flat") {
    auto model = hgpt::FlatModel<Scalar>::create(spec.flat_config(corpus.vocab.size()), spec.seed);
    out.param_count = model.param_set.total_params();
    cfg_json["param_count"] = out.param_count;
    tc.config_json = cfg_json.dump();

    hgpt::AdamState<Scalar> opt{tc.adam};
    if (!resume_from.empty()) {
      auto ck = hgpt::load_checkpoint_file(resume_from);
      hgpt::restore_params(ck, model.param_set);
      hgpt::restore_opt(ck, model.param_set, opt);
      opt.step = json::parse(ck.config_json).at("opt_step").get<int64_t>();
      tc.start_step = opt.step;
    }
    cfg_json["opt_step"] = 0;  // refreshed below, after training
    hgpt::TrainRun run = hgpt::train_flat(model, corpus.train, &corpus.valid, tc, &opt);
    cfg_json["opt_step"] = opt.step;
    hgpt::save_checkpoint(tc.last_checkpoint_path, cfg_json.dump(), model.param_set, &opt);
    out.steps = run.steps;
    out.best_valid_ppl = run.best_valid_ppl;
    out.train_ppl = hgpt::evaluate_flat(model.params, corpus.train, spec.seq_len).ppl;
    out.valid_ppl = hgpt::evaluate_flat(model.params, corpus.valid, spec.seq_len).ppl;
    out.test_ppl = hgpt::evaluate_flat(model.params, corpus.test, spec.seq_len).ppl;
  } else {
    auto model =
        hgpt::HierarchicalModel<Scalar>::create(spec.hier_config(corpus.vocab.size()), spec.seed);
    out.param_count = model.param_set.total_params();
    cfg_json["param_count"] = out.param_count;
    tc.config_json = cfg_json.dump();

    hgpt::AdamState<Scalar> opt{tc.adam};
    if (!resume_from.empty()) {
      auto ck = hgpt::load_checkpoint_file(resume_from);
      hgpt::restore_params(ck, model.param_set);
      hgpt::restore_opt(ck, model.param_set, opt);
      opt.step = json::parse(ck.config_json).at("opt_step").get<int64_t>();
      tc.start_step = opt.step;
    }
    cfg_json["opt_step"] = 0;
    hgpt::TrainRun run = hgpt::train_hierarchical(model, corpus.train, &corpus.valid, tc, &opt);
    cfg_json["opt_step"] = opt.step;
    hgpt::save_checkpoint(tc.last_checkpoint_path, cfg_json.dump(), model.param_set, &opt);
    out.steps = run.steps;
    out.best_valid_ppl = run.best_valid_ppl;
    out.train_ppl = hgpt::evaluate_hierarchical(model.params, corpus.train).ppl;
    out.valid_ppl = hgpt::evaluate_hierarchical(model.params, corpus.valid).ppl;
    out.test_ppl = hgpt::evaluate_hierarchical(model.params, corpus.test).ppl;
  }

  json result = {{"spec", spec_to_json(spec)},    {"param_count", out.param_count},
                 {"train_ppl", out.train_ppl},    {"valid_ppl", out.valid_ppl},
                 {"test_ppl", out.test_ppl},      {"steps", out.steps},
                 {"best_valid_ppl", out.best_valid_ppl}};
  std::ofstream(run_dir / "result.json") << result.dump(2) << "\n";
  return out;
}

// ---------------------------------------------------------------- checkpoints

struct Bundle {
  json config;
  hgpt::Vocabulary vocab;
  ExperimentSpec spec;
};

Bundle read_bundle(const hgpt::LoadedCheckpoint& ck) {
  Bundle b;
  b.config = json::parse(ck.config_json);
  b.vocab = vocab_from_json(b.config.at("vocab"));
  b.spec = spec_from_json(b.config.at("spec"));
  return b;
}

// ---------------------------------------------------------------- commands

int cmd_eval(const std::string& checkpoint, const std::string& corpus_dir,
             const std::string& split_name) {
  auto ck = hgpt::load_checkpoint_file(checkpoint);
  Bundle b = read_bundle(ck);
  if (!corpus_dir.empty()) b.spec.corpus = corpus_dir;
  if (b.spec.corpus == "synthetic") {
    throw hgpt::ConfigError("eval: pass --corpus (checkpoint was trained on a generated corpus "
                            "under its run directory)");
  }
  fs::path dir(b.spec.corpus);
  auto blocks = hgpt::load_corpus_file((dir / ("ptb." + split_name + ".txt")).string());
  hgpt::CorpusOptions opt{b.spec.max_sentence_len, b.spec.doc_window, b.spec.doc_stride};
  hgpt::CorpusSplit split = hgpt::build_split(blocks, b.vocab, opt, split_name);

  hgpt::EvalResult r;
  if (b.spec.family == "flat") {
    auto model = hgpt::FlatModel<Scalar>::create(b.spec.flat_config(b.vocab.size()), b.spec.seed);
    hgpt::restore_params(ck, model.param_set);
    r = hgpt::evaluate_flat(model.params, split, b.spec.seq_len);
  } else {
    auto model =
        hgpt::HierarchicalModel<Scalar>::create(b.spec.hier_config(b.vocab.size()), b.spec.seed);
    hgpt::restore_params(ck, model.param_set);
    r = hgpt::evaluate_hierarchical(model.params, split);
  }
  hgpt::MetricEvent ev{0, 0, split_name, r.ppl, r.nll_sum, r.token_count, 0};
  std::cout << ev.to_json_line() << "\n";
  return 0;
}

int cmd_generate(const std::string& checkpoint, const std::string& prefix, int n_sentences,
                 int n_tokens, const std::string& mode, double temperature, uint64_t seed) {
  auto ck = hgpt::load_checkpoint_file(checkpoint);
  Bundle b = read_bundle(ck);
  if (mode != "greedy" && mode != "sample") {
    throw hgpt::ConfigError("generate: --mode must be greedy or sample");
  }

  if (b.spec.family == "flat") {
    auto model = hgpt::FlatModel<Scalar>::create(b.spec.flat_config(b.vocab.size()), b.spec.seed);
    hgpt::restore_params(ck, model.param_set);
    std::vector<int32_t> ids;
    for (const auto& tok : hgpt::tokenize_line(prefix)) ids.push_back(b.vocab.lookup(tok));
    if (ids.empty()) ids.push_back(hgpt::kEosId);
    auto cont = hgpt::gpt_generate(model.params, ids, n_tokens);
    std::cout << hgpt::decode_tokens(b.vocab, ids, false);
    if (!cont.empty()) std::cout << " " << hgpt::decode_tokens(b.vocab, cont, false);
    std::cout << "\n";
    return 0;
  }

  auto model =
      hgpt::HierarchicalModel<Scalar>::create(b.spec.hier_config(b.vocab.size()), b.spec.seed);
  hgpt::restore_params(ck, model.param_set);
  hgpt::Document doc;
  std::istringstream ss(prefix);
  std::string sent;
  while (std::getline(ss, sent, '|')) {
    auto toks = hgpt::tokenize_line(sent);
    if (toks.empty()) continue;
    int64_t trunc = 0;
    doc.sentences.push_back(
        hgpt::encode_sentence(b.vocab, toks, b.spec.max_sentence_len, &trunc));
  }
  hgpt::SamplingConfig sampling;
  sampling.greedy = (mode == "greedy");
  sampling.temperature = temperature;
  sampling.seed = seed;
  hgpt::Document out = hgpt::hierarchical_generate(model.params, doc, n_sentences, sampling);
  for (size_t i = 0; i < out.sentences.size(); ++i) {
    const bool generated = i >= doc.sentences.size();
    std::cout << (generated ? "+ " : "  ") << hgpt::decode_tokens(b.vocab, out.sentences[i])
              << "\n";
  }
  return 0;
}

int cmd_factorize(const std::vector<double>& entries) {
  hgpt::Mat2 w{entries[0], entries[1], entries[2], entries[3]};
  const double det = w[0] * w[3] - w[1] * w[2];
  hgpt::Factorization2x2 f;
  try {
    f = hgpt::factorize_2x2(w);
  } catch (const hgpt::NumericError&) {
    std::cerr << "matrix is singular (det = " << det << "); W = RTE needs det != 0\n";
    return 3;
  }
  hgpt::Mat2 r = hgpt::reconstruct_2x2(f);
  double err = 0;
  for (int i = 0; i < 4; ++i) err = std::max(err, std::abs(r[i] - w[i]));
  std::cout.precision(17);
  std::cout << "theta = " << f.theta << "\n"
            << "c     = " << f.c << "\n"
            << "e1    = " << f.e1 << "\n"
            << "e2    = " << f.e2 << "\n"
            << "max reconstruction error = " << err << "\n";
  return 0;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::istringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  if (out.empty()) throw hgpt::ConfigError("empty list: " + s);
  return out;
}

std::vector<std::array<int, 3>> parse_triples(const std::string& s) {
  std::vector<std::array<int, 3>> out;
  std::istringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::array<int, 3> t{};
    if (std::sscanf(item.c_str(), "%d-%d-%d", &t[0], &t[1], &t[2]) != 3) {
      throw hgpt::ConfigError("bad layer triple (want enc-doc-dec): " + item);
    }
    out.push_back(t);
  }
  if (out.empty()) throw hgpt::ConfigError("empty triple list: " + s);
  return out;
}

struct SweepRow {
  std::string layers;
  int64_t param_count = 0;
  double train_ppl = std::nan(""), valid_ppl = std::nan(""), test_ppl = std::nan("");
  bool ok = false;
};

void write_csv(const fs::path& path, const std::vector<SweepRow>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << "layers,param_count,train_ppl,valid_ppl,test_ppl\n";
  out.precision(10);
  for (const auto& r : rows) {
    out << r.layers << "," << r.param_count << "," << r.train_ppl << "," << r.valid_ppl << ","
        << r.test_ppl << "\n";
  }
}

int cmd_sweep(ExperimentSpec base, const std::string& layer_list, const std::string& triple_list) {
  std::vector<ExperimentSpec> cells;
  std::vector<std::string> labels;
  if (base.family == "flat") {
    for (int l : parse_int_list(layer_list)) {
      ExperimentSpec s = base;
      s.layers = l;
      cells.push_back(s);
      labels.push_back(std::to_string(l));
    }
  } else {
    for (const auto& t : parse_triples(triple_list)) {
      ExperimentSpec s = base;
      s.enc_layers = t[0];
      s.doc_layers = t[1];
      s.dec_layers = t[2];
      cells.push_back(s);
      labels.push_back(std::to_string(t[0]) + "-" + std::to_string(t[1]) + "-" +
                       std::to_string(t[2]));
    }
  }

  const fs::path sweep_dir = run_root() / ("sweep-" + spec_hash(base));
  fs::create_directories(sweep_dir);
  std::vector<SweepRow> std_rows, con_rows, diff_rows;
  for (size_t i = 0; i < cells.size(); ++i) {
    for (bool congruent : {false, true}) {
      ExperimentSpec spec = cells[i];
      spec.congruent = congruent;
      spec.validate();
      const fs::path cell_dir = sweep_dir / ("cell-" + labels[i] + (congruent ? "-con" : "-std"));
      SweepRow row;
      row.layers = labels[i];
      const fs::path result_path = cell_dir / "result.json";
      try {
        if (fs::exists(result_path)) {
          json r;
          std::ifstream(result_path) >> r;
          row.param_count = r.at("param_count").get<int64_t>();
          row.train_ppl = r.at("train_ppl").get<double>();
          row.valid_ppl = r.at("valid_ppl").get<double>();
          row.test_ppl = r.at("test_ppl").get<double>();
        } else {
          TrainOutcome o = run_train(spec, cell_dir, "");
          row.param_count = o.param_count;
          row.train_ppl = o.train_ppl;
          row.valid_ppl = o.valid_ppl;
          row.test_ppl = o.test_ppl;
        }
        row.ok = true;
      } catch (const std::exception& e) {
        std::cerr << "sweep cell " << labels[i] << (congruent ? " congruent" : " standard")
                  << " failed: " << e.what() << "\n";
      }
      (congruent ? con_rows : std_rows).push_back(row);
      std::cout << "cell " << labels[i] << (congruent ? " congruent" : " standard ")
                << (row.ok ? " done" : " FAILED") << "\n";
    }
    SweepRow d;
    d.layers = labels[i];
    const SweepRow& a = std_rows.back();
    const SweepRow& b = con_rows.back();
    if (a.ok && b.ok) {
      d.param_count = a.param_count - b.param_count;
      d.train_ppl = a.train_ppl - b.train_ppl;
      d.valid_ppl = a.valid_ppl - b.valid_ppl;
      d.test_ppl = a.test_ppl - b.test_ppl;
      d.ok = true;
    }
    diff_rows.push_back(d);
  }
  write_csv(sweep_dir / "sweep_standard.csv", std_rows);
  write_csv(sweep_dir / "sweep_congruent.csv", con_rows);
  write_csv(sweep_dir / "sweep_diff.csv", diff_rows);
  std::cout << "sweep results in " << sweep_dir.string() << "\n";
  return 0;
}

void apply_preset(const std::string& preset, bool d_set, bool h_set, ExperimentSpec& spec) {
  if (preset.empty()) return;
  if (preset == "full-512") {
    if (!d_set) spec.d_model = 512;
    if (!h_set) spec.heads = 8;
    spec.seq_len = spec.seq_len == 32 ? 128 : spec.seq_len;
  } else if (preset == "desk") {
    if (!d_set) spec.d_model = 64;
    if (!h_set) spec.heads = 8;
  } else {
    throw hgpt::ConfigError("unknown preset: " + preset + " (want full-512 or desk)");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical/congruent transformer language-model toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Key=value config file; command-line flags override it");

  ExperimentSpec spec;
  std::string preset, resume_from;

  auto add_spec_flags = [&](CLI::App* cmd, bool with_trainer) {
    cmd->add_option("--model", spec.family, "Model family: flat | hierarchical")
        ->check(CLI::IsMember({"flat", "hierarchical"}));
    cmd->add_flag("--congruent", spec.congruent, "Share the query/key projection per layer");
    cmd->add_option("--layers", spec.layers, "Flat model depth");
    cmd->add_option("--enc-layers", spec.enc_layers, "Hierarchical: sentence-encoder layers");
    cmd->add_option("--doc-layers", spec.doc_layers, "Hierarchical: document-generator layers");
    cmd->add_option("--dec-layers", spec.dec_layers, "Hierarchical: sentence-decoder layers");
    cmd->add_option("--d-model", spec.d_model, "Embedding width");
    cmd->add_option("--heads", spec.heads, "Attention heads");
    cmd->add_option("--preset", preset, "full-512 (d=512,h=8) or desk (d=64,h=8)");
    cmd->add_option("--vocab-size", spec.vocab_max, "Vocabulary cap (non-reserved tokens)");
    cmd->add_option("--max-sentence-len", spec.max_sentence_len, "Sentence token limit (incl. EOS)");
    cmd->add_option("--doc-window", spec.doc_window, "Sentences per document window");
    cmd->add_option("--doc-stride", spec.doc_stride, "Document window stride");
    cmd->add_option("--seed", spec.seed, "Run seed");
    if (with_trainer) {
      cmd->add_option("--corpus", spec.corpus,
                      "Directory with ptb.{train,valid,test}.txt, or 'synthetic'");
      cmd->add_option("--seq-len", spec.seq_len, "Flat training window length");
      cmd->add_option("--batch-size", spec.batch_size, "Examples per optimizer update");
      cmd->add_option("--epochs", spec.epochs, "Max epochs");
      cmd->add_option("--lr", spec.lr, "Adam learning rate");
      cmd->add_option("--warmup", spec.warmup, "Linear warmup steps");
      cmd->add_option("--clip", spec.clip, "Global gradient-norm clip (<=0 off)");
      cmd->add_option("--patience", spec.patience, "Early-stop patience (epochs)");
      cmd->add_option("--aux-lambda", spec.aux_lambda,
                      "Hierarchical: weight of the embedding-MSE auxiliary loss");
      cmd->add_option("--stop-below-valid-ppl", spec.stop_below_valid_ppl,
                      "Stop once valid PPL beats this (0 = off)");
      cmd->add_option("--max-steps", spec.max_steps, "Hard step cap (0 = off)");
      cmd->add_flag("--deterministic-metrics", spec.deterministic_metrics,
                    "Write wall_ms=0 so metrics files are byte-reproducible");
    }
  };

  auto* train = app.add_subcommand("train", "Train one model; writes a content-addressed run dir");
  add_spec_flags(train, true);
  train->add_option("--resume", resume_from, "Checkpoint file (last.bin) to resume from");
  std::string run_dir_override;
  train->add_option("--run-dir", run_dir_override, "Run directory (default: content-addressed)");

  auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus split");
  std::string eval_checkpoint, eval_corpus, eval_split = "test";
  evalc->add_option("--checkpoint", eval_checkpoint, "Checkpoint file")->required();
  evalc->add_option("--corpus", eval_corpus, "Corpus directory (defaults to the training corpus)");
  evalc->add_option("--split", eval_split, "train | valid | test")
      ->check(CLI::IsMember({"train", "valid", "test"}));

  auto* sweep = app.add_subcommand(
      "sweep", "Train standard+congruent across a layer axis; writes three CSVs");
  add_spec_flags(sweep, true);
  std::string layer_list = "4,6,8", triple_list = "1-1-4,2-2-2,4-1-1";
  sweep->add_option("--layers-list", layer_list, "Flat sweep: comma-separated layer counts");
  sweep->add_option("--triples", triple_list,
                    "Hierarchical sweep: comma-separated enc-doc-dec triples");

  auto* params = app.add_subcommand("params", "Print the exact trainable-parameter count");
  add_spec_flags(params, false);

  auto* gen = app.add_subcommand("generate", "Generate a continuation from a checkpoint");
  std::string gen_checkpoint, gen_prefix, gen_mode = "greedy";
  int gen_sentences = 3, gen_tokens = 32;
  double gen_temperature = 1.0;
  uint64_t gen_seed = 0;
  gen->add_option("--checkpoint", gen_checkpoint, "Checkpoint file")->required();
  gen->add_option("--prefix", gen_prefix,
                  "Prefix text; hierarchical models split sentences on '|'");
  gen->add_option("--sentences", gen_sentences, "Hierarchical: sentences to generate");
  gen->add_option("--tokens", gen_tokens, "Flat: tokens to generate");
  gen->add_option("--mode", gen_mode, "greedy | sample");
  gen->add_option("--temperature", gen_temperature, "Sampling temperature");
  gen->add_option("--seed", gen_seed, "Sampling seed");

  auto* fact = app.add_subcommand("factorize", "Factor a 2x2 matrix as rotation*shear*expansion");
  std::vector<double> fact_entries;
  fact->add_option("entries", fact_entries, "w00 w01 w10 w11")->expected(4);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) {
      apply_preset(preset, train->count("--d-model") > 0, train->count("--heads") > 0, spec);
      spec.validate();
      fs::path run_dir = run_dir_override.empty()
                             ? run_root() / (spec_hash(spec) + "-seed" + std::to_string(spec.seed))
                             : fs::path(run_dir_override);
      TrainOutcome o = run_train(spec, run_dir, resume_from);
      std::cout << "run_dir " << run_dir.string() << "\n"
                << "params " << o.param_count << "\n"
                << "steps " << o.steps << "\n";
      std::cout.precision(10);
      std::cout << "train_ppl " << o.train_ppl << "\nvalid_ppl " << o.valid_ppl << "\ntest_ppl "
                << o.test_ppl << "\n";
      return 0;
    }
    if (evalc->parsed()) return cmd_eval(eval_checkpoint, eval_corpus, eval_split);
    if (sweep->parsed()) {
      apply_preset(preset, sweep->count("--d-model") > 0, sweep->count("--heads") > 0, spec);
      return cmd_sweep(spec, layer_list, triple_list);
    }
    if (params->parsed()) {
      apply_preset(preset, params->count("--d-model") > 0, params->count("--heads") > 0, spec);
      spec.validate();
      print_breakdown(spec, spec.vocab_max);
      std::cout << "count " << count_for(spec, spec.vocab_max) << "\n";
      return 0;
    }
    if (gen->parsed()) {
      return cmd_generate(gen_checkpoint, gen_prefix, gen_sentences, gen_tokens, gen_mode,
                          gen_temperature, gen_seed);
    }
    if (fact->parsed()) return cmd_factorize(fact_entries);
  } catch (const hgpt::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
