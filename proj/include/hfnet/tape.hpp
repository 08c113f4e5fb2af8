#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hfnet/tensor.hpp"

namespace hfnet {

template <typename T>
class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t index = 0;

  const Tensor<T>& value() const { return tape->value(index); }
  const Dims& dims() const { return value().dims(); }
  std::size_t numel() const { return value().numel(); }
  Tensor<T> grad() const { return tape->grad(*this); }
};

/// Scalar-operation tallies grouped by a caller-chosen scope label.
struct FlopCounter {
  std::map<std::string, std::uint64_t> by_scope;

  std::uint64_t total() const {
    std::uint64_t sum = 0;
    for (const auto& [scope, n] : by_scope) sum += n;
    return sum;
  }
  std::uint64_t with_prefix(std::string_view prefix) const {
    std::uint64_t sum = 0;
    for (const auto& [scope, n] : by_scope) {
      if (std::string_view(scope).substr(0, prefix.size()) == prefix) sum += n;
    }
    return sum;
  }
};

struct TapeOptions {
  /// Worker threads for ops that parallelize over independent outputs.
  int threads = 1;
  /// Throw NumericError naming the op as soon as a non-finite value appears.
  bool check_finite = false;
  /// Optional tally of executed scalar arithmetic (multiply-add = 2).
  FlopCounter* flops = nullptr;
};

/// Linear record of the forward computation. Nodes are appended in execution
/// order, so the vector is already a topological order and backward() simply
/// walks it in reverse.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  struct Node {
    std::string op;
    Tensor<T> value;
    Tensor<T> grad;  // empty until the node is reached during backward
    BackwardFn backward;
    bool requires_grad = false;
  };

  explicit Tape(TapeOptions options = {}) : options_(options) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  const TapeOptions& options() const noexcept { return options_; }

  Var<T> leaf(Tensor<T> value, bool requires_grad = true) {
    return push("leaf", std::move(value), {}, requires_grad);
  }
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Append an op result. The backward rule runs only if some input needs grad.
  Var<T> record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
    bool needs = false;
    for (const Var<T>& in : inputs) {
      if (in.tape != this) throw UsageError(std::string(op) + ": operand belongs to a different tape");
      needs = needs || nodes_[in.index].requires_grad;
    }
    if (options_.check_finite && !value.all_finite()) {
      throw NumericError("non-finite value produced by op '" + std::string(op) + "'");
    }
    return push(op, std::move(value), needs ? std::move(backward) : BackwardFn{}, needs);
  }

  const Tensor<T>& value(std::size_t index) const { return nodes_.at(index).value; }
  bool requires_grad(std::size_t index) const { return nodes_.at(index).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(std::size_t index) const { return nodes_.at(index); }

  /// Gradient buffer of a node, zero-filled on first touch. Backward rules
  /// accumulate into it additively.
  Tensor<T>& grad_buffer(std::size_t index) {
    Node& n = nodes_.at(index);
    if (n.grad.numel() != n.value.numel() || n.grad.dims() != n.value.dims()) n.grad = Tensor<T>::zeros(n.value.dims());
    return n.grad;
  }

  Tensor<T> grad(Var<T> v) const {
    const Node& n = nodes_.at(v.index);
    if (n.grad.dims() == n.value.dims() && n.grad.numel() == n.value.numel()) return n.grad;
    return Tensor<T>::zeros(n.value.dims());
  }

  /// Reverse-mode sweep from a scalar loss. Each node is visited at most once.
  void backward(Var<T> loss) {
    if (loss.tape != this) throw UsageError("backward: loss is not on this tape");
    if (value(loss.index).numel() != 1) {
      throw UsageError("backward: loss must be scalar, got dims " + to_string(value(loss.index).dims()));
    }
    if (backward_done_) throw UsageError("backward: tape already differentiated");
    backward_done_ = true;
    grad_buffer(loss.index)[0] = T{1};
    for (std::size_t i = loss.index + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward) continue;
      if (n.grad.numel() != n.value.numel() || n.grad.dims() != n.value.dims()) continue;  // unreached
      n.backward(*this, i);
    }
  }

  void count_flops(std::uint64_t n) {
    if (options_.flops) options_.flops->by_scope[scope_] += n;
  }

  /// Labels subsequent flop tallies until the guard is destroyed.
  class ScopeGuard {
   public:
    ScopeGuard(Tape& tape, std::string scope) : tape_(tape), saved_(std::move(tape.scope_)) { tape.scope_ = std::move(scope); }
    ~ScopeGuard() { tape_.scope_ = std::move(saved_); }
    ScopeGuard(const ScopeGuard&) = delete;
    ScopeGuard& operator=(const ScopeGuard&) = delete;

   private:
    Tape& tape_;
    std::string saved_;
  };
  ScopeGuard scope(std::string name) { return ScopeGuard(*this, std::move(name)); }

 private:
  Var<T> push(std::string_view op, Tensor<T> value, BackwardFn backward, bool requires_grad) {
    nodes_.push_back(Node{std::string(op), std::move(value), Tensor<T>{}, std::move(backward), requires_grad});
    return Var<T>{this, nodes_.size() - 1};
  }

  TapeOptions options_;
  std::deque<Node> nodes_;  // deque: values stay put while ops append
  std::string scope_ = "default";
  bool backward_done_ = false;
};

}  // namespace hfnet
