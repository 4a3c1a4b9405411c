#include "vtc/nn.hpp"

#include <cmath>

#include "vtc/errors.hpp"

namespace vtc {

Matrix init_weight(std::size_t rows, std::size_t cols, Rng& rng, double gain) {
  Matrix m(rows, cols);
  const double sd = gain / std::sqrt(static_cast<double>(rows));
  for (double& v : m.data()) v = rng.normal() * sd;
  return m;
}

LayerNormWeights::LayerNormWeights(const std::string& prefix, std::size_t width)
    : gain(prefix + ".gain", Matrix(1, width, 1.0)), bias(prefix + ".bias", Matrix(1, width)) {}

Var LayerNormWeights::apply(Var x, double eps) {
  Tape& t = *x.tape;
  return ops::layer_norm(x, t.leaf(gain), t.leaf(bias), eps);
}

void LayerNormWeights::collect(ParameterList& out) {
  out.push_back(&gain);
  out.push_back(&bias);
}

AttentionWeights::AttentionWeights(const std::string& prefix, std::size_t q_in, std::size_t k_in,
                                   std::size_t v_in, std::size_t width, std::size_t out,
                                   std::size_t heads_, Rng& rng)
    : wq(prefix + ".wq", init_weight(q_in, width, rng)),
      wk(prefix + ".wk", init_weight(k_in, width, rng)),
      wv(prefix + ".wv", init_weight(v_in, width, rng)),
      wo(prefix + ".wo", init_weight(width, out, rng)),
      heads(heads_) {
  if (heads == 0 || width % heads != 0) {
    throw DimensionError(prefix + ": attention width " + std::to_string(width) +
                         " not divisible by " + std::to_string(heads) + " heads");
  }
}

void AttentionWeights::collect(ParameterList& out) {
  out.push_back(&wq);
  out.push_back(&wk);
  out.push_back(&wv);
  out.push_back(&wo);
}

Var project_query(Var q_in, AttentionWeights& w) { return ops::matmul(q_in, q_in.tape->leaf(w.wq)); }
Var project_key(Var k_in, AttentionWeights& w) { return ops::matmul(k_in, k_in.tape->leaf(w.wk)); }
Var project_value(Var v_in, AttentionWeights& w) { return ops::matmul(v_in, v_in.tape->leaf(w.wv)); }

Var attend_projected(Var qp, Var kp, Var vp, AttentionWeights& w, std::vector<Matrix>* probs) {
  Var mixed = ops::attention_core(qp, kp, vp, w.heads, probs);
  return ops::matmul(mixed, qp.tape->leaf(w.wo));
}

Var multi_head_attention(Var q_in, Var k_in, Var v_in, AttentionWeights& w,
                         std::vector<Matrix>* probs) {
  if (k_in.rows() != v_in.rows()) {
    throw DimensionError("multi_head_attention: keys " + k_in.value().shape_string() +
                         " and values " + v_in.value().shape_string() + " differ in rows");
  }
  return attend_projected(project_query(q_in, w), project_key(k_in, w), project_value(v_in, w), w,
                          probs);
}

Matrix average_heads(const std::vector<Matrix>& probs) {
  if (probs.empty()) return {};
  Matrix avg(probs[0].rows(), probs[0].cols());
  for (const Matrix& p : probs) avg += p;
  const double inv = 1.0 / static_cast<double>(probs.size());
  for (double& v : avg.data()) v *= inv;
  return avg;
}

}  // namespace vtc
