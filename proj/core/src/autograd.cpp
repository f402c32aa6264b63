#include "seqrec/autograd.hpp"

#include <algorithm>

namespace seqrec {

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}

void Parameter::apply_freeze() {
  if (frozen_rows.empty()) return;
  const std::size_t stride = value.rank() == 0 ? 1 : value.size() / value.dim(0);
  for (std::size_t r : frozen_rows) {
    std::fill_n(grad.data().begin() + static_cast<std::ptrdiff_t>(r * stride), stride, 0.0);
  }
}

Parameter& ParameterSet::add(std::string name, Tensor value) {
  for (const auto& p : params_) {
    if (p->name == name) throw Error("duplicate parameter name " + name);
  }
  params_.push_back(std::make_unique<Parameter>(std::move(name), std::move(value)));
  return *params_.back();
}

Parameter* ParameterSet::find(const std::string& name) {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

std::vector<Parameter*> ParameterSet::list() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Tensor> ParameterSet::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p->value);
  return out;
}

void ParameterSet::restore(const std::vector<Tensor>& values) {
  if (values.size() != params_.size()) throw Error("snapshot size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!values[i].same_shape(params_[i]->value)) {
      throw Error("snapshot shape mismatch for " + params_[i]->name);
    }
    params_[i]->value = values[i];
  }
}

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
  Node node;
  node.value = p.value;
  node.requires_grad = recording_;
  node.param = &p;
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  if (recording_) {
    for (const Var& in : inputs) {
      if (nodes_[in.id].requires_grad) {
        node.requires_grad = true;
        break;
      }
    }
    if (node.requires_grad) node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_slot(Var v) {
  Node& node = nodes_[v.id];
  if (!node.has_grad) {
    node.grad = Tensor(node.value.shape());
    node.has_grad = true;
  }
  return node.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  Node& node = nodes_[v.id];
  if (!node.requires_grad) return;
  if (g.size() != node.value.size()) {
    throw Error("gradient shape " + shape_string(g.shape()) + " does not match value " +
                shape_string(node.value.shape()));
  }
  Tensor& slot = grad_slot(v);
  auto dst = slot.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw Error("loss does not belong to this tape");
  const Tensor& lv = nodes_[loss.id].value;
  if (lv.size() != 1) throw Error("backward requires a scalar loss, got " + shape_string(lv.shape()));
  if (!recording_) throw Error("backward on a non-recording tape");
  visits_.clear();
  grad_slot(loss).fill(1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.has_grad || !node.requires_grad) continue;
    visits_.push_back(i);
    if (node.param != nullptr) {
      Parameter& p = *node.param;
      auto dst = p.grad.data();
      auto src = node.grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      p.apply_freeze();
    } else if (node.backward) {
      node.backward(*this, node.value, node.grad);
    }
  }
}

void backward(Var loss, Tape& tape) { tape.backward(loss); }

}  // namespace seqrec
