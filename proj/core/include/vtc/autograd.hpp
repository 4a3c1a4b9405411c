#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "vtc/matrix.hpp"

namespace vtc {

/// A learnable weight. `grad` always has the shape of `value`.
struct Parameter {
  Parameter() = default;
  Parameter(std::string id_, Matrix init)
      : id(std::move(id_)), value(std::move(init)), grad(value.rows(), value.cols()) {}

  std::string id;
  Matrix value;
  Matrix grad;

  void zero_grad() {
    if (grad.same_shape(value)) {
      grad.fill(0.0);
    } else {
      grad = Matrix(value.rows(), value.cols());
    }
  }
};

/// Non-owning, ordered view over the parameters of a model.
using ParameterList = std::vector<Parameter*>;

void zero_grads(const ParameterList& params);

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t index = 0;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  /// Convenience for 1x1 values.
  double scalar() const { return value()(0, 0); }
};

/// Dynamic reverse-mode graph. Operations append nodes as they execute; backward()
/// replays them in reverse order and accumulates gradients into the parameters that
/// were bound with leaf(). A tape is single-threaded.
class Tape {
 public:
  // Receives the node's output and its gradient, and pushes contributions to the inputs.
  using BackwardFn = std::function<void(Tape&, const Matrix& out, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Differentiable leaf that owns its gradient (used for input-gradient checks).
  Var input(Matrix value);
  /// Leaf bound to a Parameter; the same Parameter maps to one node per tape.
  Var leaf(Parameter& p);

  Var record(Matrix value, bool requires_grad, BackwardFn fn);

  const Matrix& value(Var v) const { return *nodes_[v.index].value; }
  bool requires_grad(Var v) const { return nodes_[v.index].requires_grad; }
  /// Gradient accumulated for an input() leaf; empty if nothing reached it.
  const Matrix& grad(Var v) const { return *nodes_[v.index].grad; }

  /// Accumulation target for the gradient of `v`, or nullptr if `v` needs none.
  Matrix* grad_target(Var v);

  /// Seeds d(loss)/d(loss) = 1 and runs the reverse sweep. loss must be 1x1.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix owned;
    const Matrix* value = nullptr;
    Matrix own_grad;
    Matrix* grad = nullptr;
    bool requires_grad = false;
    bool touched = false;
    BackwardFn fn;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::uint32_t> leaves_;
};

inline const Matrix& Var::value() const { return tape->value(*this); }

}  // namespace vtc
