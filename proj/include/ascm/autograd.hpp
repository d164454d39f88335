#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ascm/tensor.hpp"

namespace ascm {

/// A named trainable tensor. `grad` accumulates across every use on a tape.
template <class Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad;

  void zero_grad() { grad = Tensor<Real>(value.shape()); }
};

/// Handle to a node on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const noexcept { return id != static_cast<std::size_t>(-1); }
};

template <class Real>
class Tape;

/// View handed to a node's backward function.
template <class Real>
class BackwardContext {
 public:
  BackwardContext(Tape<Real>& tape, std::size_t node) : tape_(tape), node_(node) {}

  const Tensor<Real>& out_grad() const;
  const Tensor<Real>& out_value() const;
  std::size_t num_inputs() const;
  const Tensor<Real>& input(std::size_t i) const;
  bool needs_grad(std::size_t i) const;
  /// Zero-initialized on first access.
  Tensor<Real>& input_grad(std::size_t i);

 private:
  Tape<Real>& tape_;
  std::size_t node_;
};

/// Records primitive operations in creation order; creation order is a
/// topological order, so backward walks the node list in reverse.
template <class Real>
class Tape {
 public:
  using BackwardFn = std::function<void(BackwardContext<Real>&)>;

  /// With `record = false` no backward closures are kept and `backward` throws.
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }

  Var constant(Tensor<Real> value);
  /// Trainable leaf owned by the tape; its gradient is read back with grad().
  Var leaf(Tensor<Real> value);
  /// Binds a Parameter. Repeated calls for the same Parameter return the same node,
  /// and backward accumulates into Parameter::grad.
  Var param(Parameter<Real>& p);

  Var record(Tensor<Real> value, std::vector<Var> inputs, BackwardFn fn);

  const Tensor<Real>& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient of a node after backward; zeros for nodes the root does not reach.
  Tensor<Real> grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Root must hold a single element. Populates leaf and parameter gradients.
  void backward(Var root);

 private:
  friend class BackwardContext<Real>;

  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
    Parameter<Real>* param = nullptr;
  };

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<Real>*, std::size_t> param_nodes_;
  bool record_;
  bool done_ = false;
};

extern template class Tape<float>;
extern template class Tape<double>;
extern template class BackwardContext<float>;
extern template class BackwardContext<double>;

}  // namespace ascm
