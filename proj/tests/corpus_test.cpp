#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "hgpt/hgpt.hpp"
#include "test_util.hpp"

using hgpt::RawBlock;
using hgpt::Vocabulary;

namespace {

std::vector<RawBlock> blocks_from(const std::string& text) {
  std::istringstream in(text);
  return hgpt::read_blocks(in, "<test>");
}

TEST(Reader, TokenizesAndSplitsOnBlankLines) {
  auto blocks = blocks_from("the cat sat\non a mat\n\nsecond doc\n\n\nthird doc here\n");
  ASSERT_EQ(blocks.size(), 3u);
  EXPECT_EQ(blocks[0].sentences.size(), 2u);
  EXPECT_EQ(blocks[0].sentences[0], (hgpt::TokenList{"the", "cat", "sat"}));
  EXPECT_EQ(blocks[1].sentences[0], (hgpt::TokenList{"second", "doc"}));
  EXPECT_EQ(blocks[2].sentences[0], (hgpt::TokenList{"third", "doc", "here"}));
}

TEST(Reader, HandlesCrlfWhitespaceRunsAndMissingFinalNewline) {
  auto blocks = blocks_from("a  b\tc\r\n   \nd e");
  ASSERT_EQ(blocks.size(), 2u);
  EXPECT_EQ(blocks[0].sentences[0], (hgpt::TokenList{"a", "b", "c"}));
  EXPECT_EQ(blocks[1].sentences[0], (hgpt::TokenList{"d", "e"}));
}

TEST(Reader, RejectsInvalidUtf8WithLineNumber) {
  std::string bad = "ok line\n\xFF\xFE broken\n";
  std::istringstream in(bad);
  try {
    hgpt::read_blocks(in, "corpus.txt");
    FAIL() << "expected IoError";
  } catch (const hgpt::IoError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("corpus.txt"), std::string::npos);
  }
  // Multi-byte sequences are accepted; truncated ones are not.
  EXPECT_TRUE(hgpt::valid_utf8("caf\xC3\xA9"));
  EXPECT_FALSE(hgpt::valid_utf8("caf\xC3"));
  EXPECT_FALSE(hgpt::valid_utf8("\xE2\x28\xA1"));
}

TEST(Reader, MissingFileThrows) {
  EXPECT_THROW(hgpt::load_corpus_file("/nonexistent/nope.txt"), hgpt::IoError);
}

TEST(Vocab, ReservedIdsAreFixed) {
  Vocabulary v = Vocabulary::reserved_only();
  EXPECT_EQ(v.size(), 3);
  EXPECT_EQ(v.lookup("<pad>"), hgpt::kPadId);
  EXPECT_EQ(v.lookup("<unk>"), hgpt::kUnkId);
  EXPECT_EQ(v.lookup("<eos>"), hgpt::kEosId);
  EXPECT_EQ(v.lookup("anything-else"), hgpt::kUnkId);
}

TEST(Vocab, FrequencyOrderWithLexicographicTies) {
  // freq: b=3, a=2, c=2, d=1 -> ids: b, then a before c (tie), then d
  auto blocks = blocks_from("b a c\nb a c\nb d\n");
  Vocabulary v = hgpt::build_vocab(blocks);
  EXPECT_EQ(v.size(), 7);
  EXPECT_EQ(v.lookup("b"), 3);
  EXPECT_EQ(v.lookup("a"), 4);
  EXPECT_EQ(v.lookup("c"), 5);
  EXPECT_EQ(v.lookup("d"), 6);
}

TEST(Vocab, MaxSizeCapsAndMinFreqDrops) {
  auto blocks = blocks_from("e e e d d c c b a\n");
  Vocabulary capped = hgpt::build_vocab(blocks, 2);
  EXPECT_EQ(capped.size(), 3 + 2);  // reserved + {e, c or d}
  EXPECT_NE(capped.lookup("e"), hgpt::kUnkId);
  EXPECT_EQ(capped.lookup("a"), hgpt::kUnkId);

  Vocabulary frequent = hgpt::build_vocab(blocks, 10000, 2);
  EXPECT_NE(frequent.lookup("c"), hgpt::kUnkId);
  EXPECT_EQ(frequent.lookup("b"), hgpt::kUnkId);  // freq 1 < min_freq 2
  EXPECT_EQ(frequent.lookup("a"), hgpt::kUnkId);

  // Source-side "<unk>" maps to the reserved id and never becomes an entry.
  auto with_unk = blocks_from("x <unk> x <unk>\n");
  Vocabulary u = hgpt::build_vocab(with_unk);
  EXPECT_EQ(u.size(), 4);
  EXPECT_EQ(u.lookup("<unk>"), hgpt::kUnkId);
}

TEST(Vocab, EncodeAppendsEosAndDecodeRoundTrips) {
  auto blocks = blocks_from("the cat sat\n");
  Vocabulary v = hgpt::build_vocab(blocks);
  auto ids = hgpt::encode_sentence(v, {"the", "cat", "sat"}, 64);
  ASSERT_EQ(ids.size(), 4u);
  EXPECT_EQ(ids.back(), hgpt::kEosId);
  EXPECT_EQ(hgpt::decode_tokens(v, ids), "the cat sat");
  EXPECT_EQ(hgpt::decode_tokens(v, ids, false), "the cat sat <eos>");

  auto with_unk = hgpt::encode_sentence(v, {"the", "dog", "sat"}, 64);
  EXPECT_EQ(with_unk[1], hgpt::kUnkId);
  EXPECT_EQ(hgpt::decode_tokens(v, with_unk), "the <unk> sat");
}

TEST(Vocab, TruncationKeepsEosAndCounts) {
  Vocabulary v = hgpt::build_vocab(blocks_from("a b c d e\n"));
  int64_t truncated = 0;
  auto ids = hgpt::encode_sentence(v, {"a", "b", "c", "d", "e"}, 4, &truncated);
  ASSERT_EQ(ids.size(), 4u);  // 3 tokens + EOS
  EXPECT_EQ(ids.back(), hgpt::kEosId);
  EXPECT_EQ(truncated, 1);
  hgpt::encode_sentence(v, {"a", "b", "c"}, 4, &truncated);  // fits: 3 + EOS
  EXPECT_EQ(truncated, 1);
}

TEST(Vocab, FileRoundTripAndDuplicateDetection) {
  testutil::TempDir tmp("vocab");
  Vocabulary v = hgpt::build_vocab(blocks_from("b a c\nb a\nb\n"));
  hgpt::write_vocab(tmp.str("vocab.txt"), v);
  Vocabulary r = hgpt::read_vocab(tmp.str("vocab.txt"));
  EXPECT_EQ(r.id_to_token, v.id_to_token);

  std::ofstream(tmp.str("dup.txt")) << "x\ny\nx\n";
  EXPECT_THROW(hgpt::read_vocab(tmp.str("dup.txt")), hgpt::IoError);
  EXPECT_THROW(hgpt::read_vocab(tmp.str("missing.txt")), hgpt::IoError);
}

TEST(Segment, WindowingExamples) {
  std::vector<std::vector<int32_t>> sents(10, {1, hgpt::kEosId});
  auto docs = hgpt::segment_documents(sents, 5, 5);
  ASSERT_EQ(docs.size(), 2u);
  EXPECT_EQ(docs[0].sentences.size(), 5u);
  EXPECT_EQ(docs[1].sentences.size(), 5u);

  sents.resize(7);
  docs = hgpt::segment_documents(sents, 5, 5);
  ASSERT_EQ(docs.size(), 2u);
  EXPECT_EQ(docs[0].sentences.size(), 5u);
  EXPECT_EQ(docs[1].sentences.size(), 2u);  // short tail kept

  // Overlapping windows with stride < window.
  docs = hgpt::segment_documents(sents, 4, 2);
  ASSERT_EQ(docs.size(), 3u);
  EXPECT_EQ(docs[0].sentences.size(), 4u);
  EXPECT_EQ(docs[1].sentences.size(), 4u);
  EXPECT_EQ(docs[2].sentences.size(), 3u);

  EXPECT_THROW(hgpt::segment_documents(sents, 0, 1), hgpt::ConfigError);
  EXPECT_THROW(hgpt::segment_documents(sents, 4, 5), hgpt::ConfigError);
  EXPECT_THROW(hgpt::segment_documents(sents, 4, 0), hgpt::ConfigError);
}

TEST(Segment, NonOverlappingStrideConservesSentences) {
  std::vector<std::vector<int32_t>> sents;
  for (int i = 0; i < 23; ++i) sents.push_back({static_cast<int32_t>(i), hgpt::kEosId});
  auto docs = hgpt::segment_documents(sents, 8, 8);
  size_t total = 0;
  int32_t expect = 0;
  for (const auto& d : docs) {
    total += d.sentences.size();
    for (const auto& s : d.sentences) EXPECT_EQ(s[0], expect++);
  }
  EXPECT_EQ(total, sents.size());
}

TEST(Split, RespectsDocumentBoundaries) {
  // Two blocks of 3 sentences; window 2 never mixes blocks.
  auto blocks = blocks_from("a\nb\nc\n\nd\ne\nf\n");
  Vocabulary v = hgpt::build_vocab(blocks);
  hgpt::CorpusOptions opt{64, 2, 2};
  hgpt::CorpusSplit split = hgpt::build_split(blocks, v, opt, "train");
  EXPECT_EQ(split.sentences.size(), 6u);
  EXPECT_EQ(split.token_count, 12);  // each sentence is one token + EOS
  ASSERT_EQ(split.documents.size(), 4u);  // per block: [2, 1]
  EXPECT_EQ(split.documents[0].sentences.size(), 2u);
  EXPECT_EQ(split.documents[1].sentences.size(), 1u);
  // First sentence of block 2's first window is "d", proving no cross-block window.
  EXPECT_EQ(split.documents[2].sentences[0][0], v.lookup("d"));
}

TEST(Batchify, WindowsShiftTargetsByOne) {
  auto blocks = blocks_from("a b c d\ne f g h\n");
  Vocabulary v = hgpt::build_vocab(blocks);
  hgpt::CorpusSplit split = hgpt::build_split(blocks, v, {64, 8, 8}, "train");
  ASSERT_EQ(split.token_count, 10);
  auto ex = hgpt::batchify_flat(split, 5);
  ASSERT_EQ(ex.size(), 2u);
  EXPECT_EQ(ex[0].input.size(), 5u);
  EXPECT_EQ(ex[1].input.size(), 4u);  // final window shortened so targets exist
  for (const auto& e : ex) {
    ASSERT_EQ(e.input.size(), e.target.size());
    for (size_t i = 0; i + 1 < e.input.size(); ++i) EXPECT_EQ(e.target[i], e.input[i + 1]);
  }
  // Every stream position except the first appears exactly once as a target.
  std::vector<int32_t> stream;
  for (const auto& s : split.sentences) stream.insert(stream.end(), s.begin(), s.end());
  std::vector<int32_t> targets;
  for (const auto& e : ex) targets.insert(targets.end(), e.target.begin(), e.target.end());
  EXPECT_EQ(targets, std::vector<int32_t>(stream.begin() + 1, stream.end()));

  // A window left with a single token is dropped.
  auto one_more = blocks_from("a b c d\ne f g h i j k\n");  // 13 tokens with EOS
  hgpt::CorpusSplit s13 = hgpt::build_split(one_more, hgpt::build_vocab(one_more), {64, 8, 8}, "t");
  ASSERT_EQ(s13.token_count, 13);
  auto ex13 = hgpt::batchify_flat(s13, 6);
  ASSERT_EQ(ex13.size(), 2u);  // windows at 0 and 6; the 1-token tail at 12 is dropped
  EXPECT_EQ(ex13[1].input.size(), 6u);
  EXPECT_THROW(hgpt::batchify_flat(s13, 0), hgpt::ConfigError);
}

TEST(Synthetic, DeterministicAndWellFormed) {
  auto a = hgpt::synthetic_blocks(7, 5);
  auto b = hgpt::synthetic_blocks(7, 5);
  ASSERT_EQ(a.size(), 5u);
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].sentences.size(), 8u);
    for (size_t s = 0; s < a[i].sentences.size(); ++s) {
      EXPECT_EQ(a[i].sentences[s], b[i].sentences[s]);
      EXPECT_GE(a[i].sentences[s].size(), 8u);
      EXPECT_LE(a[i].sentences[s].size(), 12u);
    }
  }
  auto c = hgpt::synthetic_blocks(8, 5);
  EXPECT_NE(a[0].sentences[0], c[0].sentences[0]);

  // The token process is the documented bigram chain over w00..w29.
  for (const auto& sent : a[0].sentences) {
    int prev = -1;
    for (const auto& tok : sent) {
      ASSERT_EQ(tok.size(), 3u);
      ASSERT_EQ(tok[0], 'w');
      const int cur = std::stoi(tok.substr(1));
      ASSERT_GE(cur, 0);
      ASSERT_LT(cur, 30);
      if (prev >= 0) {
        EXPECT_TRUE(cur == (2 * prev + 1) % 30 || cur == (3 * prev + 7) % 30)
            << prev << " -> " << cur;
      }
      prev = cur;
    }
  }
}

TEST(Synthetic, WriteLoadRoundTrip) {
  testutil::TempDir tmp("synth");
  hgpt::write_synthetic_corpus(tmp.str(), 99, 6, 3, 2);
  auto train = hgpt::load_corpus_file(tmp.str("ptb.train.txt"));
  auto valid = hgpt::load_corpus_file(tmp.str("ptb.valid.txt"));
  auto test = hgpt::load_corpus_file(tmp.str("ptb.test.txt"));
  EXPECT_EQ(train.size(), 6u);
  EXPECT_EQ(valid.size(), 3u);
  EXPECT_EQ(test.size(), 2u);
  for (const auto& blk : train) EXPECT_EQ(blk.sentences.size(), 8u);

  // Round trip through the on-disk format is lossless.
  auto direct = hgpt::synthetic_blocks(hgpt::mix_seed(99, 1), 6);
  ASSERT_EQ(direct.size(), train.size());
  for (size_t i = 0; i < direct.size(); ++i) {
    EXPECT_EQ(direct[i].sentences, train[i].sentences);
  }

  // Full-corpus sanity: 30 word types resolve without UNK.
  Vocabulary v = hgpt::build_vocab(train);
  EXPECT_LE(v.size(), 33);
  hgpt::CorpusSplit split = hgpt::build_split(train, v, {64, 8, 8}, "train");
  EXPECT_EQ(split.documents.size(), 6u);
  EXPECT_EQ(split.truncated_sentences, 0);
  for (const auto& s : split.sentences) {
    for (size_t i = 0; i + 1 < s.size(); ++i) EXPECT_NE(s[i], hgpt::kUnkId);
  }
}

// Only runs against a real PTB checkout (directory with ptb.{train,valid,test}.txt).
TEST(Ptb, RealCorpusStatistics) {
  const char* dir = std::getenv("HGPT_PTB_DIR");
  if (!dir) GTEST_SKIP() << "set HGPT_PTB_DIR to a PTB directory to enable";
  auto train = hgpt::load_corpus_file(std::string(dir) + "/ptb.train.txt");
  Vocabulary v = hgpt::build_vocab(train);
  EXPECT_EQ(v.size(), 9999 + hgpt::kNumReserved);  // PTB's 10k includes its own <unk>
  hgpt::CorpusSplit split = hgpt::build_split(train, v, {64, 8, 8}, "train");
  EXPECT_GT(split.token_count, 900000);
}

}  // namespace
