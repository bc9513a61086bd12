#include <gtest/gtest.h>

#include <cmath>

#include "hgpt/hgpt.hpp"
#include "test_util.hpp"

using hgpt::AttentionKind;
using hgpt::AttentionMask;
using hgpt::Tape;
using hgpt::Tensor;

namespace {

TEST(Mask, CausalStructure) {
  AttentionMask<double> m = AttentionMask<double>::causal(3);
  ASSERT_EQ(m.bias.shape(), (std::vector<int>{3, 3}));
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const double v = m.bias.at(i * 3 + j);
      if (j <= i) {
        EXPECT_EQ(v, 0.0);
      } else {
        EXPECT_EQ(v, hgpt::kMaskBias);
      }
    }
  }
  EXPECT_FALSE(AttentionMask<double>::none().defined());
}

TEST(Attention, UniformForZeroScoresAndExactMaskZeros) {
  Tape<double> tape;
  hgpt::Rng rng(1);
  Tensor<double> q = tape.leaf({4, 6});
  Tensor<double> k = tape.leaf({4, 6});
  Tensor<double> v = tape.leaf({4, 6});
  hgpt::fill_normal(v, rng, 1.0);  // q, k stay zero -> uniform rows
  Tensor<double> probs;
  hgpt::scaled_dot_attention(q, k, v, AttentionMask<double>::causal(4), &probs);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      const double p = probs.at(i * 4 + j);
      if (j > i) {
        EXPECT_EQ(p, 0.0);  // exp(-1e9) underflows to exactly zero
      } else {
        EXPECT_NEAR(p, 1.0 / (i + 1), 1e-15);
      }
    }
  }
}

TEST(Attention, MatchesManualOracle) {
  Tape<double> tape;
  hgpt::Rng rng(2);
  const int n = 3, d = 4;
  Tensor<double> q = tape.leaf({n, d});
  Tensor<double> k = tape.leaf({n, d});
  Tensor<double> v = tape.leaf({n, d});
  hgpt::fill_normal(q, rng, 1.0);
  hgpt::fill_normal(k, rng, 1.0);
  hgpt::fill_normal(v, rng, 1.0);
  Tensor<double> out = hgpt::scaled_dot_attention(q, k, v, AttentionMask<double>::none());

  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  for (int i = 0; i < n; ++i) {
    std::vector<double> row(n);
    for (int j = 0; j < n; ++j) {
      double s = 0;
      for (int t = 0; t < d; ++t) s += q.at(i * d + t) * k.at(j * d + t);
      row[j] = s * inv;
    }
    auto p = testutil::softmax_oracle(row);
    for (int t = 0; t < d; ++t) {
      double want = 0;
      for (int j = 0; j < n; ++j) want += p[j] * v.at(j * d + t);
      EXPECT_NEAR(out.at(i * d + t), want, 1e-12);
    }
  }
}

TEST(Attention, ParamCounts) {
  EXPECT_EQ(hgpt::attention_param_count(8, AttentionKind::standard), 256);
  EXPECT_EQ(hgpt::attention_param_count(8, AttentionKind::congruent), 192);
  EXPECT_EQ(hgpt::attention_param_count(512, AttentionKind::standard), 4 * 262144);
  EXPECT_EQ(hgpt::attention_param_count(512, AttentionKind::congruent), 3 * 262144);
}

TEST(Attention, CongruentSharesOneProjection) {
  Tape<float> tape;
  hgpt::Rng rng(3);
  auto p = hgpt::init_multi_head(tape, 8, 2, AttentionKind::congruent, rng, 0.02, "t");
  EXPECT_EQ(p.w_q.impl(), p.w_k.impl());  // one slot, one gradient accumulator
  auto s = hgpt::init_multi_head(tape, 8, 2, AttentionKind::standard, rng, 0.02, "t");
  EXPECT_NE(s.w_q.impl(), s.w_k.impl());
  EXPECT_THROW(hgpt::init_multi_head(tape, 8, 3, AttentionKind::standard, rng, 0.02, "t"),
               hgpt::ConfigError);
}

TEST(Attention, CongruentScoresSymmetricStandardNot) {
  Tape<float> tape;
  hgpt::Rng rng(4);
  const int d = 16, h = 4, n = 7;
  Tensor<float> x = tape.leaf({n, d});
  hgpt::fill_normal(x, rng, 1.0);

  auto con = hgpt::init_multi_head(tape, d, h, AttentionKind::congruent, rng, 0.5, "c");
  hgpt::AttentionTrace<float> tr;
  hgpt::multi_head_forward(con, x, AttentionMask<float>::none(), &tr);
  ASSERT_EQ(tr.head_scores.size(), static_cast<size_t>(h));
  for (const auto& s : tr.head_scores) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        EXPECT_EQ(s.at(i * n + j), s.at(j * n + i));  // bitwise: same accumulation order
      }
    }
  }

  auto std_p = hgpt::init_multi_head(tape, d, h, AttentionKind::standard, rng, 0.5, "s");
  hgpt::AttentionTrace<float> tr2;
  hgpt::multi_head_forward(std_p, x, AttentionMask<float>::none(), &tr2);
  double max_asym = 0;
  for (const auto& s : tr2.head_scores) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        max_asym = std::max(max_asym, std::abs(double(s.at(i * n + j)) - double(s.at(j * n + i))));
      }
    }
  }
  EXPECT_GT(max_asym, 1e-3);  // independent projections are not symmetric
}

TEST(Attention, TraceProbsRowsSumToOneAndRespectMask) {
  Tape<double> tape;
  hgpt::Rng rng(5);
  const int d = 8, h = 2, n = 5;
  Tensor<double> x = tape.leaf({n, d});
  hgpt::fill_normal(x, rng, 1.0);
  auto p = hgpt::init_multi_head(tape, d, h, AttentionKind::standard, rng, 0.3, "t");
  hgpt::AttentionTrace<double> tr;
  Tensor<double> out = hgpt::multi_head_forward(p, x, AttentionMask<double>::causal(n), &tr);
  EXPECT_EQ(out.shape(), (std::vector<int>{n, d}));
  ASSERT_EQ(tr.head_probs.size(), static_cast<size_t>(h));
  for (const auto& probs : tr.head_probs) {
    for (int i = 0; i < n; ++i) {
      double sum = 0;
      for (int j = 0; j < n; ++j) {
        const double v = probs.at(i * n + j);
        if (j > i) EXPECT_EQ(v, 0.0);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(Attention, MultiHeadGradientFiniteDiff) {
  for (auto kind : {AttentionKind::standard, AttentionKind::congruent}) {
    Tape<double> tape;
    hgpt::Rng rng(6);
    const int d = 4, h = 2, n = 3;
    Tensor<double> x = tape.leaf({n, d}, true, "x");
    hgpt::fill_normal(x, rng, 1.0);
    auto p = hgpt::init_multi_head(tape, d, h, kind, rng, 0.5, "t");
    hgpt::ParamSet<double> ps;
    ps.add(x);
    ps.add(p.w_q);
    if (!p.congruent()) ps.add(p.w_k);
    ps.add(p.w_v);
    ps.add(p.w_o);
    auto res = testutil::finite_diff_check(tape, ps, [&] {
      return hgpt::sum(hgpt::multi_head_forward(p, x, AttentionMask<double>::causal(n)));
    });
    EXPECT_LT(res.max_rel_err, 1e-7) << res.worst_tensor;
  }
}

TEST(Attention, CongruentGradientEqualsSummedStandardPaths) {
  // With w_q == w_k (by value) in a standard block, the shared-projection
  // gradient must equal the sum of the separate q/k gradients.
  Tape<double> tape;
  hgpt::Rng rng(7);
  const int d = 8, h = 2, n = 4;
  Tensor<double> x = tape.leaf({n, d});
  hgpt::fill_normal(x, rng, 1.0);

  auto con = hgpt::init_multi_head(tape, d, h, AttentionKind::congruent, rng, 0.4, "c");
  auto std_p = hgpt::init_multi_head(tape, d, h, AttentionKind::standard, rng, 0.4, "s");
  std_p.w_q.values() = con.w_q.values();
  std_p.w_k.values() = con.w_q.values();
  std_p.w_v.values() = con.w_v.values();
  std_p.w_o.values() = con.w_o.values();

  tape.backward(hgpt::sum(hgpt::multi_head_forward(con, x, AttentionMask<double>::none())));
  tape.reset();
  tape.backward(hgpt::sum(hgpt::multi_head_forward(std_p, x, AttentionMask<double>::none())));
  tape.reset();

  const auto& g_shared = con.w_q.grad();
  const auto& gq = std_p.w_q.grad();
  const auto& gk = std_p.w_k.grad();
  for (size_t i = 0; i < g_shared.size(); ++i) {
    EXPECT_NEAR(g_shared[i], gq[i] + gk[i], 1e-10);
  }
}

TEST(Attention, MaskShapeMismatchThrows) {
  Tape<double> tape;
  Tensor<double> x = tape.leaf({3, 4});
  hgpt::Rng rng(8);
  hgpt::fill_normal(x, rng, 1.0);
  auto p = hgpt::init_multi_head(tape, 4, 2, AttentionKind::standard, rng, 0.3, "t");
  EXPECT_THROW(hgpt::multi_head_forward(p, x, AttentionMask<double>::causal(5)), hgpt::ShapeError);
}

}  // namespace
