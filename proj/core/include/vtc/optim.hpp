#pragma once

#include <vector>

#include "vtc/autograd.hpp"

namespace vtc {

/// Scales all gradients so their joint L2 norm is at most max_norm. Returns the
/// norm before clipping.
double clip_grad_norm(const ParameterList& params, double max_norm);

class Sgd {
 public:
  explicit Sgd(double lr) : lr_(lr) {}
  void step(const ParameterList& params) const;

 private:
  double lr_;
};

/// Adaptive moment estimation with bias correction. State is positional: the same
/// parameter list must be passed on every step.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const ParameterList& params);
  long steps() const { return t_; }

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  long t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

}  // namespace vtc
