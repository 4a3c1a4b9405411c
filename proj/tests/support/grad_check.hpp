#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "vtc/autograd.hpp"
#include "vtc/ops.hpp"
#include "vtc/rng.hpp"

namespace vtc::testing {

/// Builds a scalar loss from tape inputs.
using LossFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheck {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

inline double rel_error(const Matrix& a, const Matrix& n) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  const double scale = std::sqrt(na) + std::sqrt(nn);
  return scale < 1e-10 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = scale * rng.normal();
  return m;
}

/// Contracts a matrix output with fixed random weights so every entry affects the loss.
inline Var contract(Var out, Seed seed) {
  Rng rng(seed);
  return ops::sum(ops::mul(out, out.tape->constant(random_matrix(out.rows(), out.cols(), rng))));
}

/// Central differences over every entry of every input, compared with the tape gradient.
inline GradCheck check_inputs(const LossFn& fn, std::vector<Matrix> inputs, double step = 1e-5) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& m : inputs) vars.push_back(tape.input(m));
  tape.backward(fn(tape, vars));

  GradCheck result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Matrix analytic = tape.grad(vars[k]);
    Matrix numeric(inputs[k].rows(), inputs[k].cols());
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Matrix> shifted = inputs;
        shifted[k][i] += delta;
        Tape t;
        std::vector<Var> vs;
        for (const auto& m : shifted) vs.push_back(t.constant(m));
        return fn(t, vs).scalar();
      };
      numeric[i] = (eval(step) - eval(-step)) / (2.0 * step);
    }
    result.max_rel_error = std::max(result.max_rel_error, rel_error(analytic, numeric));
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      result.max_abs_error = std::max(result.max_abs_error, std::abs(analytic[i] - numeric[i]));
    }
  }
  return result;
}

/// Same check over model parameters. `fn` records a fresh loss on the supplied tape.
inline GradCheck check_parameters(const std::function<Var(Tape&)>& fn, const ParameterList& params,
                                  double step = 1e-5) {
  zero_grads(params);
  {
    Tape tape;
    tape.backward(fn(tape));
  }
  GradCheck result;
  for (Parameter* p : params) {
    const Matrix analytic = p->grad;
    Matrix numeric(p->value.rows(), p->value.cols());
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + step;
      double plus;
      {
        Tape t;
        plus = fn(t).scalar();
      }
      p->value[i] = saved - step;
      double minus;
      {
        Tape t;
        minus = fn(t).scalar();
      }
      p->value[i] = saved;
      numeric[i] = (plus - minus) / (2.0 * step);
    }
    result.max_rel_error = std::max(result.max_rel_error, rel_error(analytic, numeric));
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      result.max_abs_error = std::max(result.max_abs_error, std::abs(analytic[i] - numeric[i]));
    }
  }
  return result;
}

}  // namespace vtc::testing
