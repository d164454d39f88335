#include "ascm/autograd.hpp"

#include <sstream>
#include <stdexcept>

namespace ascm {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <class Real>
const Tensor<Real>& BackwardContext<Real>::out_grad() const {
  return tape_.nodes_[node_].grad;
}

template <class Real>
const Tensor<Real>& BackwardContext<Real>::out_value() const {
  return tape_.nodes_[node_].value;
}

template <class Real>
std::size_t BackwardContext<Real>::num_inputs() const {
  return tape_.nodes_[node_].inputs.size();
}

template <class Real>
const Tensor<Real>& BackwardContext<Real>::input(std::size_t i) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs.at(i)].value;
}

template <class Real>
bool BackwardContext<Real>::needs_grad(std::size_t i) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs.at(i)].requires_grad;
}

template <class Real>
Tensor<Real>& BackwardContext<Real>::input_grad(std::size_t i) {
  auto& in = tape_.nodes_[tape_.nodes_[node_].inputs.at(i)];
  if (in.grad.empty()) in.grad = Tensor<Real>(in.value.shape());
  return in.grad;
}

template <class Real>
Var Tape<Real>::constant(Tensor<Real> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <class Real>
Var Tape<Real>::leaf(Tensor<Real> value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_;
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <class Real>
Var Tape<Real>::param(Parameter<Real>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{it->second};
  Node n;
  n.value = p.value;
  n.requires_grad = record_;
  n.is_leaf = true;
  n.param = record_ ? &p : nullptr;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return Var{nodes_.size() - 1};
}

template <class Real>
Var Tape<Real>::record(Tensor<Real> value, std::vector<Var> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  bool any = false;
  for (Var v : inputs) {
    if (v.id >= nodes_.size()) throw std::invalid_argument("tape: input refers to an unknown node");
    any = any || nodes_[v.id].requires_grad;
  }
  if (record_ && any) {
    n.requires_grad = true;
    n.backward = std::move(fn);
    n.inputs.reserve(inputs.size());
    for (Var v : inputs) n.inputs.push_back(v.id);
  }
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <class Real>
Tensor<Real> Tape<Real>::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.empty()) return Tensor<Real>(n.value.shape());
  return n.grad;
}

template <class Real>
void Tape<Real>::backward(Var root) {
  if (!record_) throw std::logic_error("tape: backward on a non-recording tape");
  if (done_) throw std::logic_error("tape: backward called twice");
  Node& r = nodes_.at(root.id);
  if (r.value.size() != 1) {
    throw std::invalid_argument("backward: root must be scalar, got " + shape_to_string(r.value.shape()));
  }
  done_ = true;
  if (r.requires_grad) {
    r.grad = Tensor<Real>(r.value.shape(), Real(1));
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (!n.grad.all_finite()) throw std::domain_error("backward: non-finite gradient");
      if (!n.backward) continue;
      BackwardContext<Real> ctx(*this, i);
      n.backward(ctx);
    }
  }
  for (Node& n : nodes_) {
    if (!n.param) continue;
    Tensor<Real>& acc = n.param->grad;
    if (acc.empty() || !acc.same_shape(n.value)) acc = Tensor<Real>(n.value.shape());
    if (n.grad.empty()) continue;
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += n.grad[k];
  }
}

template class Tape<float>;
template class Tape<double>;
template class BackwardContext<float>;
template class BackwardContext<double>;

}  // namespace ascm
