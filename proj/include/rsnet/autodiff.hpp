#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rsnet/tensor.hpp"

namespace rsnet {

enum class Mode { Train, Eval };

// A named learnable tensor (or, with trainable = false, a persistent buffer
// such as batch-norm running statistics).
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
  bool decay = true;  // receives decoupled weight decay

  void zero_grad() { grad.fill(T(0)); }
};

// Owns every Parameter of a model, in creation order. Names are unique.
template <typename T>
class ParameterStore {
 public:
  Parameter<T>& create(std::string name, Tensor<T> value, bool trainable = true, bool decay = true);

  Parameter<T>* find(std::string_view name);
  const Parameter<T>* find(std::string_view name) const;
  Parameter<T>& at(std::string_view name);

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grads();
  std::int64_t trainable_count() const;

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
class Tape;

// Handle to a value recorded on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Records forward operations in execution order; backward() replays them in
// reverse, which is a reverse topological order because every node's inputs
// were recorded before it. A tape is single-use: backward() consumes it.
// Parameter gradients accumulate across tapes until zero_grads().
template <typename T>
class Tape {
 public:
  // Called with the gradient of this node's output; accumulates into inputs.
  using Backward = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  // Leaf whose gradient is retained (readable via grad()).
  Var<T> input(Tensor<T> value);
  Var<T> param(Parameter<T>& p);

  Var<T> record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward);
  Var<T> record(std::string_view op, Tensor<T> value, const std::vector<Var<T>>& inputs, Backward backward);

  const Tensor<T>& value(Var<T> v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  bool requires_grad(Var<T> v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }
  // Gradient buffer of v, zero-allocated on first use; nullptr when v does
  // not require a gradient.
  Tensor<T>* grad_buffer(Var<T> v);
  // Gradient of a leaf after backward(); nullptr if it was never reached.
  const Tensor<T>* grad(Var<T> v) const;

  void backward(Var<T> loss);

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  // Non-finite forward outputs raise NumericError naming the op and scope.
  bool check_finite = true;

  // Innermost layer name, used in diagnostics. Layers push fully qualified names.
  void push_scope(std::string name) { scopes_.push_back(std::move(name)); }
  void pop_scope() { scopes_.pop_back(); }
  std::string scope() const;

  // Multiply-accumulates tallied by conv ops as they execute.
  void add_macs(std::int64_t m) { macs_ += m; }
  std::int64_t macs() const { return macs_; }

  // Parameters whose gradients were written by the last backward().
  const std::vector<const Parameter<T>*>& reached_params() const { return reached_; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool has_grad = false;
    Parameter<T>* param = nullptr;
    Backward backward;
  };

  Var<T> push(Node node);

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::int32_t> param_nodes_;
  std::vector<std::string> scopes_;
  std::vector<const Parameter<T>*> reached_;
  std::int64_t macs_ = 0;
  bool grad_enabled_;
  bool consumed_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(*this);
}

// RAII scope label used in diagnostics.
template <typename T>
class ScopeGuard {
 public:
  ScopeGuard(Tape<T>& tape, std::string name) : tape_(tape) { tape_.push_scope(std::move(name)); }
  ~ScopeGuard() { tape_.pop_scope(); }
  ScopeGuard(const ScopeGuard&) = delete;
  ScopeGuard& operator=(const ScopeGuard&) = delete;

 private:
  Tape<T>& tape_;
};

}  // namespace rsnet
