#pragma once

#include <functional>
#include <memory>
#include <type_traits>
#include <utility>

#include "hgpt/common.hpp"

namespace hgpt {

template <typename S>
class Tape;

// Dense row-major tensor storage. `grad` stays empty until the backward
// pass first touches this tensor.
template <typename S>
struct TensorImpl {
  static_assert(std::is_floating_point_v<S>);

  std::vector<int> shape;
  std::vector<S> data;
  std::vector<S> grad;
  bool requires_grad = false;
  std::string name;
  Tape<S>* tape = nullptr;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }

  std::vector<S>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), S(0));
    return grad;
  }
};

inline int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    n *= d;
  }
  return n;
}

// Value-semantics handle over shared tensor storage. Copies alias the same
// storage; this is what makes congruent weight sharing (one slot, one grad
// accumulator) a plain assignment.
template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl<S>> impl) : impl_(std::move(impl)) {}

  // Constant tensor outside any tape (mask biases, test fixtures).
  static Tensor constant(std::vector<int> shape, std::vector<S> values, std::string name = {}) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
      throw ShapeError("tensor data size " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl<S>>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->name = std::move(name);
    return Tensor(impl);
  }

  static Tensor zeros(std::vector<int> shape, std::string name = {}) {
    std::vector<S> v(static_cast<size_t>(shape_numel(shape)), S(0));
    return constant(std::move(shape), std::move(v), std::move(name));
  }

  bool defined() const { return impl_ != nullptr; }
  TensorImpl<S>* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl<S>>& impl_ptr() const { return impl_; }

  const std::vector<int>& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return impl_->numel(); }

  S* data() { return impl_->data.data(); }
  const S* data() const { return impl_->data.data(); }
  std::vector<S>& values() { return impl_->data; }
  const std::vector<S>& values() const { return impl_->data; }

  S item() const {
    if (numel() != 1) throw ShapeError("item() requires a scalar tensor, got " + shape_str(shape()));
    return impl_->data[0];
  }

  S& at(int i) { return impl_->data[static_cast<size_t>(i)]; }
  S at(int i) const { return impl_->data[static_cast<size_t>(i)]; }
  S& at(int i, int j) {
    return impl_->data[static_cast<size_t>(i) * dim(1) + j];
  }
  S at(int i, int j) const {
    return impl_->data[static_cast<size_t>(i) * dim(1) + j];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::vector<S>& grad() { return impl_->grad; }
  const std::vector<S>& grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.assign(impl_->data.size(), S(0)); }

  const std::string& name() const { return impl_->name; }
  Tape<S>* tape() const { return impl_->tape; }

 private:
  std::shared_ptr<TensorImpl<S>> impl_;
};

template <typename S>
void check_finite(const std::vector<S>& v, const char* op, const std::string& name) {
  for (S x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("non-finite value produced by '") + op + "'" +
                         (name.empty() ? "" : " in tensor '" + name + "'"));
    }
  }
}

// Reverse-mode tape. Ops append one node each; backward replays the nodes
// exactly once in reverse recording order. reset() drops the nodes but
// leaves leaf gradients alone, so accumulation across multiple losses works.
template <typename S>
class Tape {
 public:
  Tensor<S> leaf(std::vector<int> shape, bool requires_grad = false, std::string name = {}) {
    auto impl = std::make_shared<TensorImpl<S>>();
    impl->data.assign(static_cast<size_t>(shape_numel(shape)), S(0));
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    impl->name = std::move(name);
    impl->tape = this;
    return Tensor<S>(impl);
  }

  Tensor<S> leaf_from(std::vector<int> shape, std::vector<S> values, bool requires_grad = false,
                      std::string name = {}) {
    Tensor<S> t = leaf(std::move(shape), requires_grad, std::move(name));
    if (t.numel() != static_cast<int64_t>(values.size())) {
      throw ShapeError("leaf data size does not match shape " + shape_str(t.shape()));
    }
    t.values() = std::move(values);
    return t;
  }

  void record(const char* op, std::vector<std::shared_ptr<TensorImpl<S>>> tensors,
              std::function<void()> backward_fn) {
    if (!recording_) return;
    nodes_.push_back(Node{op, std::move(tensors), std::move(backward_fn)});
  }

  void backward(const Tensor<S>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw ShapeError("backward() requires a scalar loss, got " +
                       (loss.defined() ? shape_str(loss.shape()) : std::string("undefined tensor")));
    }
    if (loss.tape() != this) throw Error("backward(): loss does not belong to this tape");
    if (backward_called_) {
      throw Error("backward() called twice without reset(); call Tape::reset() between passes");
    }
    backward_called_ = true;
    loss.impl()->ensure_grad()[0] += S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      it->fn();
      for (const auto& t : it->tensors) {
        if (!t->grad.empty()) check_finite(t->grad, it->op, t->name);
      }
    }
  }

  void reset() {
    nodes_.clear();
    backward_called_ = false;
  }

  size_t node_count() const { return nodes_.size(); }
  bool backward_called() const { return backward_called_; }

  bool recording() const { return recording_; }
  void set_recording(bool v) { recording_ = v; }

 private:
  struct Node {
    const char* op;
    std::vector<std::shared_ptr<TensorImpl<S>>> tensors;
    std::function<void()> fn;
  };
  std::vector<Node> nodes_;
  bool recording_ = true;
  bool backward_called_ = false;
};

// Scoped "evaluation mode": suspends recording on a tape.
template <typename S>
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape<S>& tape) : tape_(tape), prev_(tape.recording()) {
    tape_.set_recording(false);
  }
  ~NoGradGuard() { tape_.set_recording(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape<S>& tape_;
  bool prev_;
};

template <typename S>
void fill_normal(Tensor<S>& t, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& x : t.values()) x = static_cast<S>(dist(rng));
}

template <typename S>
void fill_const(Tensor<S>& t, S value) {
  for (auto& x : t.values()) x = value;
}

}  // namespace hgpt
