#pragma once

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hgpt/hgpt.hpp"

namespace testutil {

// Independent triple-loop matmul (different loop order from the library's).
inline std::vector<double> matmul_oracle(const std::vector<double>& a,
                                         const std::vector<double>& b, int m, int k, int n) {
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0;
      for (int t = 0; t < k; ++t) {
        acc += a[static_cast<size_t>(i) * k + t] * b[static_cast<size_t>(t) * n + j];
      }
      out[static_cast<size_t>(i) * n + j] = acc;
    }
  }
  return out;
}

// Naive 64-bit softmax of one row (no max shift: independent of the library).
inline std::vector<double> softmax_oracle(const std::vector<double>& row) {
  std::vector<double> out(row.size());
  double sum = 0;
  for (size_t i = 0; i < row.size(); ++i) {
    out[i] = std::exp(row[i]);
    sum += out[i];
  }
  for (auto& x : out) x /= sum;
  return out;
}

// Naive 64-bit per-token NLL: -log softmax(row)[target].
template <typename S>
double nll_oracle(const S* row, int vocab, int32_t target) {
  double sum = 0;
  for (int j = 0; j < vocab; ++j) sum += std::exp(static_cast<double>(row[j]));
  return std::log(sum) - static_cast<double>(row[target]);
}

struct GradCheckResult {
  double max_rel_err = 0;
  std::string worst_tensor;
  int64_t checked = 0;
};

// Central finite differences over every element of every trainable tensor,
// against the tape's analytic gradients. 64-bit only.
template <typename LossFn>
GradCheckResult finite_diff_check(hgpt::Tape<double>& tape, const hgpt::ParamSet<double>& params,
                                  LossFn&& loss_fn, double eps = 1e-4) {
  hgpt::zero_grads(params);
  hgpt::Tensor<double> loss = loss_fn();
  tape.backward(loss);
  tape.reset();
  std::vector<std::vector<double>> analytic;
  for (const auto& t : params.tensors()) analytic.push_back(t.impl()->grad);

  GradCheckResult res;
  hgpt::NoGradGuard<double> guard(tape);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const hgpt::Tensor<double>& t = params.tensors()[pi];
    std::vector<double>& w = t.impl()->data;
    for (size_t j = 0; j < w.size(); ++j) {
      const double orig = w[j];
      w[j] = orig + eps;
      const double lp = loss_fn().item();
      w[j] = orig - eps;
      const double lm = loss_fn().item();
      w[j] = orig;
      const double fd = (lp - lm) / (2 * eps);
      const double an = analytic[pi].empty() ? 0.0 : analytic[pi][j];
      const double rel = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
      ++res.checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_tensor = t.name() + "[" + std::to_string(j) + "]";
      }
    }
  }
  return res;
}

inline void fill_uniform(hgpt::Tensor<double>& t, hgpt::Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& x : t.values()) x = dist(rng);
}

struct CmdResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr, interleaved
};

inline CmdResult run_cmd(const std::string& cmd) {
  CmdResult r;
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (size_t n = fread(buf, 1, sizeof(buf), pipe)) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter_++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& child = "") const {
    return child.empty() ? path_.string() : (path_ / child).string();
  }

 private:
  std::filesystem::path path_;
  static inline int counter_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace testutil
