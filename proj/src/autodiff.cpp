#include "rsnet/autodiff.hpp"

namespace rsnet {

template <typename T>
Parameter<T>& ParameterStore<T>::create(std::string name, Tensor<T> value, bool trainable, bool decay) {
  if (index_.count(name)) throw UsageError("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter<T>>();
  p->name = name;
  p->grad = Tensor<T>(value.shape());
  p->value = std::move(value);
  p->trainable = trainable;
  p->decay = decay && trainable;
  index_.emplace(std::move(name), params_.size());
  params_.push_back(std::move(p));
  return *params_.back();
}

template <typename T>
Parameter<T>* ParameterStore<T>::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : params_[it->second].get();
}

template <typename T>
const Parameter<T>* ParameterStore<T>::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : params_[it->second].get();
}

template <typename T>
Parameter<T>& ParameterStore<T>::at(std::string_view name) {
  Parameter<T>* p = find(name);
  if (!p) throw UsageError("unknown parameter: " + std::string(name));
  return *p;
}

template <typename T>
void ParameterStore<T>::zero_grads() {
  for (auto& p : params_) p->zero_grad();
}

template <typename T>
std::int64_t ParameterStore<T>::trainable_count() const {
  std::int64_t total = 0;
  for (const auto& p : params_) {
    if (p->trainable) total += p->value.numel();
  }
  return total;
}

template <typename T>
Var<T> Tape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::input(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_;
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::param(Parameter<T>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var<T>{this, it->second};
  Node n;
  n.value = p.value;
  n.requires_grad = grad_enabled_ && p.trainable;
  n.param = &p;
  Var<T> v = push(std::move(n));
  param_nodes_.emplace(&p, v.id);
  return v;
}

template <typename T>
Var<T> Tape<T>::record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward) {
  return record(op, std::move(value), std::vector<Var<T>>(inputs), std::move(backward));
}

template <typename T>
Var<T> Tape<T>::record(std::string_view op, Tensor<T> value, const std::vector<Var<T>>& inputs, Backward backward) {
  if (check_finite && !value.all_finite()) {
    std::string where = scope();
    throw NumericError("non-finite output from " + std::string(op) + (where.empty() ? "" : " in layer " + where));
  }
  Node n;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (const auto& in : inputs) {
      if (in.tape != this) throw UsageError("op input recorded on a different tape");
      if (nodes_[static_cast<std::size_t>(in.id)].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.backward = std::move(backward);
  }
  return push(std::move(n));
}

template <typename T>
Tensor<T>* Tape<T>::grad_buffer(Var<T> v) {
  Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor<T>(n.value.shape());
    n.has_grad = true;
  }
  return &n.grad;
}

template <typename T>
const Tensor<T>* Tape<T>::grad(Var<T> v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  return n.has_grad ? &n.grad : nullptr;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (consumed_) throw UsageError("backward called twice on the same tape");
  if (loss.tape != this) throw UsageError("loss recorded on a different tape");
  if (value(loss).numel() != 1) throw ShapeError("backward requires a scalar loss, got " + value(loss).shape().str());
  consumed_ = true;
  reached_.clear();
  Tensor<T>* seed = grad_buffer(loss);
  if (!seed) return;
  seed->fill(T(1));
  for (std::int64_t i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.has_grad) continue;
    if (n.backward) {
      n.backward(*this, n.grad);
      n.backward = nullptr;  // release saved tensors
    }
    if (n.param) {
      n.param->grad.add_(n.grad);
      reached_.push_back(n.param);
    }
  }
}

template <typename T>
std::string Tape<T>::scope() const {
  return scopes_.empty() ? std::string() : scopes_.back();
}

template struct Parameter<float>;
template struct Parameter<double>;
template class ParameterStore<float>;
template class ParameterStore<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace rsnet
