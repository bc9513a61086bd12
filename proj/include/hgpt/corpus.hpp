#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "hgpt/common.hpp"

namespace hgpt {

constexpr int32_t kPadId = 0;
constexpr int32_t kUnkId = 1;
constexpr int32_t kEosId = 2;
constexpr int32_t kNumReserved = 3;

constexpr const char* kPadToken = "<pad>";
constexpr const char* kUnkToken = "<unk>";
constexpr const char* kEosToken = "<eos>";

using TokenList = std::vector<std::string>;

// A run of sentences with no internal document boundary (blank-line-separated
// in the native format; a PTB file is one big block).
struct RawBlock {
  std::vector<TokenList> sentences;
};

inline bool valid_utf8(const std::string& s) {
  size_t i = 0;
  while (i < s.size()) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    int extra;
    if (c < 0x80) extra = 0;
    else if ((c & 0xE0) == 0xC0) extra = 1;
    else if ((c & 0xF0) == 0xE0) extra = 2;
    else if ((c & 0xF8) == 0xF0) extra = 3;
    else return false;
    if (i + static_cast<size_t>(extra) >= s.size()) {
      if (extra > 0) return false;
    }
    for (int k = 1; k <= extra; ++k) {
      if ((static_cast<unsigned char>(s[i + static_cast<size_t>(k)]) & 0xC0) != 0x80) return false;
    }
    i += static_cast<size_t>(extra) + 1;
  }
  return true;
}

inline TokenList tokenize_line(const std::string& line) {
  TokenList out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

// One sentence per line, whitespace-tokenized; blank line = document boundary.
inline std::vector<RawBlock> read_blocks(std::istream& in, const std::string& origin) {
  std::vector<RawBlock> blocks;
  RawBlock current;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!valid_utf8(line)) {
      throw IoError("invalid UTF-8 in " + origin + " at line " + std::to_string(line_no));
    }
    TokenList toks = tokenize_line(line);
    if (toks.empty()) {
      if (!current.sentences.empty()) {
        blocks.push_back(std::move(current));
        current = RawBlock{};
      }
      continue;
    }
    current.sentences.push_back(std::move(toks));
  }
  if (!current.sentences.empty()) blocks.push_back(std::move(current));
  return blocks;
}

inline std::vector<RawBlock> load_corpus_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus file: " + path);
  return read_blocks(in, path);
}

struct Vocabulary {
  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int32_t> token_to_id;

  static Vocabulary reserved_only() {
    Vocabulary v;
    v.push(kPadToken);
    v.push(kUnkToken);
    v.push(kEosToken);
    return v;
  }

  void push(const std::string& tok) {
    token_to_id.emplace(tok, static_cast<int32_t>(id_to_token.size()));
    id_to_token.push_back(tok);
  }

  int32_t size() const { return static_cast<int32_t>(id_to_token.size()); }

  int32_t lookup(const std::string& tok) const {
    auto it = token_to_id.find(tok);
    return it == token_to_id.end() ? kUnkId : it->second;
  }

  const std::string& token(int32_t id) const {
    if (id < 0 || id >= size()) {
      throw IndexError("token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(size()));
    }
    return id_to_token[static_cast<size_t>(id)];
  }
};

// Most-frequent tokens first, ties broken lexicographically; at most
// `max_size` non-reserved entries; tokens below `min_freq` dropped.
// "<unk>" in the source maps to the reserved UNK id.
inline Vocabulary build_vocab(const std::vector<RawBlock>& blocks, int max_size = 10000,
                              int min_freq = 1) {
  if (blocks.empty()) throw ConfigError("build_vocab: empty corpus");
  std::unordered_map<std::string, int64_t> freq;
  for (const auto& b : blocks) {
    for (const auto& sent : b.sentences) {
      for (const auto& tok : sent) {
        if (tok == kPadToken || tok == kUnkToken || tok == kEosToken) continue;
        ++freq[tok];
      }
    }
  }
  std::vector<std::pair<std::string, int64_t>> entries(freq.begin(), freq.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v = Vocabulary::reserved_only();
  for (const auto& [tok, n] : entries) {
    if (n < min_freq) break;
    if (v.size() - kNumReserved >= max_size) break;
    v.push(tok);
  }
  return v;
}

// Token ids ending with EOS; hard-truncates to max_sentence_len-1 tokens + EOS.
inline std::vector<int32_t> encode_sentence(const Vocabulary& vocab, const TokenList& tokens,
                                            int max_sentence_len, int64_t* truncated = nullptr) {
  if (max_sentence_len < 2) throw ConfigError("encode_sentence: max_sentence_len must be >= 2");
  size_t keep = tokens.size();
  if (keep + 1 > static_cast<size_t>(max_sentence_len)) {
    keep = static_cast<size_t>(max_sentence_len) - 1;
    if (truncated) ++*truncated;
  }
  std::vector<int32_t> ids;
  ids.reserve(keep + 1);
  for (size_t i = 0; i < keep; ++i) ids.push_back(vocab.lookup(tokens[i]));
  ids.push_back(kEosId);
  return ids;
}

inline std::string decode_tokens(const Vocabulary& vocab, const std::vector<int32_t>& ids,
                                 bool strip_eos = true) {
  std::string out;
  for (int32_t id : ids) {
    if (strip_eos && id == kEosId) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

struct Document {
  std::vector<std::vector<int32_t>> sentences;
};

// Consecutive-sentence windows over one boundary-free run of sentences.
inline std::vector<Document> segment_documents(const std::vector<std::vector<int32_t>>& sentences,
                                               int window, int stride) {
  if (window < 1 || stride < 1 || stride > window) {
    throw ConfigError("segment_documents: need window >= 1 and 1 <= stride <= window, got window=" +
                      std::to_string(window) + " stride=" + std::to_string(stride));
  }
  std::vector<Document> docs;
  const size_t n = sentences.size();
  for (size_t start = 0; start < n; start += static_cast<size_t>(stride)) {
    Document d;
    const size_t end = std::min(n, start + static_cast<size_t>(window));
    d.sentences.assign(sentences.begin() + static_cast<long>(start),
                       sentences.begin() + static_cast<long>(end));
    docs.push_back(std::move(d));
    if (end == n) break;
  }
  return docs;
}

struct CorpusOptions {
  int max_sentence_len = 64;
  int max_doc_sentences = 8;
  int doc_stride = 8;
};

struct CorpusSplit {
  std::string tag;                               // train / valid / test
  std::vector<std::vector<int32_t>> sentences;   // every sentence, in order
  std::vector<Document> documents;               // windowed, boundary-respecting
  int64_t token_count = 0;                       // EOS included
  int64_t truncated_sentences = 0;
};

inline CorpusSplit build_split(const std::vector<RawBlock>& blocks, const Vocabulary& vocab,
                               const CorpusOptions& opt, const std::string& tag) {
  CorpusSplit split;
  split.tag = tag;
  for (const auto& b : blocks) {
    std::vector<std::vector<int32_t>> block_sents;
    block_sents.reserve(b.sentences.size());
    for (const auto& toks : b.sentences) {
      auto ids = encode_sentence(vocab, toks, opt.max_sentence_len, &split.truncated_sentences);
      split.token_count += static_cast<int64_t>(ids.size());
      block_sents.push_back(ids);
      split.sentences.push_back(std::move(ids));
    }
    auto docs = segment_documents(block_sents, opt.max_doc_sentences, opt.doc_stride);
    for (auto& d : docs) split.documents.push_back(std::move(d));
  }
  return split;
}

struct FlatExample {
  std::vector<int32_t> input;
  std::vector<int32_t> target;  // input shifted by one
};

// Joins all sentences into one stream and cuts it at 0, L, 2L, ...; the final
// window is shortened (targets must exist), and windows with fewer than 2
// available tokens are dropped.
inline std::vector<FlatExample> batchify_flat(const CorpusSplit& split, int seq_len) {
  if (seq_len < 1) throw ConfigError("batchify_flat: seq_len must be >= 1");
  std::vector<int32_t> stream;
  stream.reserve(static_cast<size_t>(split.token_count));
  for (const auto& s : split.sentences) stream.insert(stream.end(), s.begin(), s.end());
  std::vector<FlatExample> out;
  const int64_t n = static_cast<int64_t>(stream.size());
  for (int64_t start = 0; start < n; start += seq_len) {
    const int64_t avail = n - start;
    if (avail < 2) break;
    const int64_t len = std::min<int64_t>(seq_len, avail - 1);
    FlatExample ex;
    ex.input.assign(stream.begin() + start, stream.begin() + start + len);
    ex.target.assign(stream.begin() + start + 1, stream.begin() + start + 1 + len);
    out.push_back(std::move(ex));
  }
  return out;
}

// --- vocabulary file: one non-reserved token per line, id = reserved + line.

inline void write_vocab(const std::string& path, const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary file: " + path);
  for (int32_t id = kNumReserved; id < vocab.size(); ++id) out << vocab.token(id) << '\n';
}

inline Vocabulary read_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open vocabulary file: " + path);
  Vocabulary v = Vocabulary::reserved_only();
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (v.token_to_id.count(line)) {
      throw IoError("duplicate token '" + line + "' in " + path + " at line " +
                    std::to_string(line_no));
    }
    v.push(line);
  }
  return v;
}

// --- synthetic corpus: a deterministic first-order Markov language over 30
// token types, sentences of 8..12 tokens, fixed-size documents. Bigram
// structure makes it easily learnable by a context model while keeping the
// unigram baseline weak.

inline std::vector<RawBlock> synthetic_blocks(uint64_t seed, int n_docs,
                                              int sentences_per_doc = 8) {
  Rng rng(mix_seed(seed, 0x53594e54));  // "SYNT"
  std::uniform_int_distribution<int> start_dist(0, 29);
  std::uniform_int_distribution<int> len_dist(8, 12);
  std::uniform_int_distribution<int> branch(0, 1);
  auto word = [](int i) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "w%02d", i);
    return std::string(buf);
  };
  std::vector<RawBlock> blocks;
  blocks.reserve(static_cast<size_t>(n_docs));
  for (int d = 0; d < n_docs; ++d) {
    RawBlock b;
    for (int s = 0; s < sentences_per_doc; ++s) {
      const int len = len_dist(rng);
      TokenList sent;
      int cur = start_dist(rng);
      sent.push_back(word(cur));
      for (int t = 1; t < len; ++t) {
        cur = branch(rng) ? (2 * cur + 1) % 30 : (3 * cur + 7) % 30;
        sent.push_back(word(cur));
      }
      b.sentences.push_back(std::move(sent));
    }
    blocks.push_back(std::move(b));
  }
  return blocks;
}

inline void write_corpus_file(const std::string& path, const std::vector<RawBlock>& blocks) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus file: " + path);
  for (size_t i = 0; i < blocks.size(); ++i) {
    if (i) out << '\n';
    for (const auto& sent : blocks[i].sentences) {
      for (size_t t = 0; t < sent.size(); ++t) {
        if (t) out << ' ';
        out << sent[t];
      }
      out << '\n';
    }
  }
}

// Writes ptb.{train,valid,test}.txt under `dir`.
inline void write_synthetic_corpus(const std::string& dir, uint64_t seed, int train_docs = 400,
                                   int valid_docs = 40, int test_docs = 40) {
  std::filesystem::create_directories(dir);
  write_corpus_file(dir + "/ptb.train.txt", synthetic_blocks(mix_seed(seed, 1), train_docs));
  write_corpus_file(dir + "/ptb.valid.txt", synthetic_blocks(mix_seed(seed, 2), valid_docs));
  write_corpus_file(dir + "/ptb.test.txt", synthetic_blocks(mix_seed(seed, 3), test_docs));
}

}  // namespace hgpt
