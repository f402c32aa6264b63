#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "seqrec/tensor.hpp"

namespace seqrec {

/// A learnable tensor plus its gradient accumulator.
struct Parameter {
  Parameter(std::string name, Tensor value);

  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value
  /// Rows (along axis 0) whose gradient is forced to zero, e.g. the PAD row.
  std::vector<std::size_t> frozen_rows;

  void zero_grad() { grad.fill(0.0); }
  void apply_freeze();
};

/// Owns parameters with stable addresses, in registration order.
class ParameterSet {
 public:
  Parameter& add(std::string name, Tensor value);

  std::size_t size() const noexcept { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }
  Parameter* find(const std::string& name);

  void zero_grad();
  std::size_t element_count() const;

  std::vector<Parameter*> list();
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Records differentiable operations in execution order.
///
/// `backward` walks the record in exact reverse order, visiting each node
/// once, and accumulates (+=) into the gradients of the parameters that
/// were bound with `param`. With recording disabled the tape only computes
/// values, which is the inference path.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }

  Var constant(Tensor value);
  Var param(Parameter& p);

  /// Called with the node's own output value and its upstream gradient.
  using BackwardFn = std::function<void(Tape&, const Tensor& output, const Tensor& upstream)>;

  /// Appends an op result. `inputs` decides whether the node needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Adds `g` into the gradient slot of `v` (allocated on first use).
  void accumulate(Var v, const Tensor& g);
  Tensor& grad_slot(Var v);

  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  /// Ids of visited nodes during the most recent backward, in visit order.
  const std::vector<std::size_t>& last_visit_order() const noexcept { return visits_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  bool recording_;
  std::vector<Node> nodes_;
  std::vector<std::size_t> visits_;
};

/// Convenience: builds a loss on a fresh tape and back-propagates it.
void backward(Var loss, Tape& tape);

}  // namespace seqrec
