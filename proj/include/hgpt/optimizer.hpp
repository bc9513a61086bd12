#pragma once

#include "hgpt/transformer.hpp"

namespace hgpt {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global-norm clip; <= 0 disables
  int warmup_steps = 200;  // linear warmup to lr, then constant
};

template <typename S>
struct AdamState {
  AdamConfig config;
  int64_t step = 0;  // completed updates
  std::vector<std::vector<S>> m, v;

  void ensure_buffers(const ParamSet<S>& params) {
    if (m.empty()) {
      m.resize(params.size());
      v.resize(params.size());
      for (size_t i = 0; i < params.size(); ++i) {
        m[i].assign(static_cast<size_t>(params.tensors()[i].numel()), S(0));
        v[i].assign(static_cast<size_t>(params.tensors()[i].numel()), S(0));
      }
      return;
    }
    if (m.size() != params.size() || v.size() != params.size()) {
      throw TrainingError("optimizer state tracks " + std::to_string(m.size()) +
                          " tensors, model has " + std::to_string(params.size()));
    }
    for (size_t i = 0; i < params.size(); ++i) {
      if (static_cast<int64_t>(m[i].size()) != params.tensors()[i].numel()) {
        throw TrainingError("optimizer moment size mismatch for " + params.tensors()[i].name());
      }
    }
  }
};

template <typename S>
void zero_grads(const ParamSet<S>& params) {
  for (const auto& t : params.tensors()) t.impl()->grad.assign(t.impl()->data.size(), S(0));
}

// L2 norm over every gradient element, accumulated in double.
template <typename S>
double global_grad_norm(const ParamSet<S>& params) {
  double sq = 0;
  for (const auto& t : params.tensors()) {
    if (!t.has_grad()) continue;
    for (S g : t.impl()->grad) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

// Scales gradients so the global norm is at most max_norm; returns the
// pre-clip norm. Aborts on non-finite gradients, naming the tensor.
template <typename S>
double clip_gradients(const ParamSet<S>& params, double max_norm) {
  for (const auto& t : params.tensors()) {
    if (!t.has_grad()) continue;
    for (S g : t.impl()->grad) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw TrainingError("non-finite gradient in " + t.name());
      }
    }
  }
  const double norm = global_grad_norm(params);
  if (max_norm > 0 && norm > max_norm) {
    const S factor = static_cast<S>(max_norm / norm);
    for (const auto& t : params.tensors()) {
      if (!t.has_grad()) continue;
      for (S& g : t.impl()->grad) g *= factor;
    }
  }
  return norm;
}

inline double warmup_lr(const AdamConfig& cfg, int64_t update_index) {
  if (cfg.warmup_steps > 0 && update_index < cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(update_index + 1) / static_cast<double>(cfg.warmup_steps);
  }
  return cfg.lr;
}

// One clipped Adam update with bias correction. Parameters without an
// accumulated gradient buffer are treated as zero-gradient.
template <typename S>
void adam_step(const ParamSet<S>& params, AdamState<S>& st) {
  st.ensure_buffers(params);
  clip_gradients(params, st.config.clip_norm);
  const int64_t t = st.step + 1;
  const double lr = warmup_lr(st.config, st.step);
  const double b1 = st.config.beta1, b2 = st.config.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (size_t i = 0; i < params.size(); ++i) {
    const Tensor<S>& p = params.tensors()[i];
    TensorImpl<S>* impl = p.impl();
    const bool has_grad = !impl->grad.empty();
    S* w = impl->data.data();
    std::vector<S>& mi = st.m[i];
    std::vector<S>& vi = st.v[i];
    const int64_t n = p.numel();
    for (int64_t j = 0; j < n; ++j) {
      const double g = has_grad ? static_cast<double>(impl->grad[static_cast<size_t>(j)]) : 0.0;
      const double mj = b1 * static_cast<double>(mi[static_cast<size_t>(j)]) + (1.0 - b1) * g;
      const double vj = b2 * static_cast<double>(vi[static_cast<size_t>(j)]) + (1.0 - b2) * g * g;
      mi[static_cast<size_t>(j)] = static_cast<S>(mj);
      vi[static_cast<size_t>(j)] = static_cast<S>(vj);
      const double update = lr * (mj / bc1) / (std::sqrt(vj / bc2) + st.config.eps);
      w[j] = static_cast<S>(static_cast<double>(w[j]) - update);
    }
  }
  ++st.step;
}

}  // namespace hgpt
