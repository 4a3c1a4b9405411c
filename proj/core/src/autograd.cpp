#include "vtc/autograd.hpp"

#include "vtc/errors.hpp"

namespace vtc {

void zero_grads(const ParameterList& params) {
  for (Parameter* p : params) p->zero_grad();
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  Node& n = nodes_.back();
  if (n.value == nullptr) n.value = &n.owned;
  if (n.grad == nullptr) n.grad = &n.own_grad;
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Matrix value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::input(Matrix value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::leaf(Parameter& p) {
  if (auto it = leaves_.find(&p); it != leaves_.end()) return Var{this, it->second};
  if (!p.grad.same_shape(p.value)) p.zero_grad();
  Node n;
  n.value = &p.value;
  n.grad = &p.grad;
  n.requires_grad = true;
  n.touched = true;
  Var v = push(std::move(n));
  leaves_.emplace(&p, v.index);
  return v;
}

Var Tape::record(Matrix value, bool requires_grad, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.fn = std::move(fn);
  return push(std::move(n));
}

Matrix* Tape::grad_target(Var v) {
  Node& n = nodes_[v.index];
  if (!n.requires_grad) return nullptr;
  if (!n.touched) {
    *n.grad = Matrix(n.value->rows(), n.value->cols());
    n.touched = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw Error("backward called with a Var from another tape");
  const Matrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw DimensionError("backward requires a 1x1 loss, got " + lv.shape_string());
  }
  if (!nodes_[loss.index].requires_grad) return;
  Matrix* seed = grad_target(loss);
  (*seed)(0, 0) += 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.fn && n.touched) n.fn(*this, *n.value, *n.grad);
  }
}

}  // namespace vtc
