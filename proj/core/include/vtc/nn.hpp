#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "vtc/autograd.hpp"
#include "vtc/ops.hpp"
#include "vtc/rng.hpp"

namespace vtc {

/// Gaussian init with standard deviation 1/sqrt(rows), i.e. fan-in scaling for x * W.
Matrix init_weight(std::size_t rows, std::size_t cols, Rng& rng, double gain = 1.0);

struct LayerNormWeights {
  Parameter gain;
  Parameter bias;

  LayerNormWeights() = default;
  LayerNormWeights(const std::string& prefix, std::size_t width);

  Var apply(Var x, double eps = 1e-5);
  void collect(ParameterList& out);
};

/// Projection weights of one multi-head attention block: queries from width
/// `q_in`, keys from `k_in`, values from `v_in`, all mapped to `width`, then an
/// output projection to `out`.
struct AttentionWeights {
  Parameter wq;
  Parameter wk;
  Parameter wv;
  Parameter wo;
  std::size_t heads = 1;

  AttentionWeights() = default;
  AttentionWeights(const std::string& prefix, std::size_t q_in, std::size_t k_in, std::size_t v_in,
                   std::size_t width, std::size_t out, std::size_t heads, Rng& rng);

  std::size_t width() const { return wq.value.cols(); }
  void collect(ParameterList& out);
};

/// softmax(Q K^T / sqrt(d_head)) V per head, heads concatenated, then output-projected.
Var multi_head_attention(Var q_in, Var k_in, Var v_in, AttentionWeights& w,
                         std::vector<Matrix>* probs = nullptr);

/// The same block split so that projections can be computed once and reused
/// across many attention calls (k/v shared across queries and vice versa).
Var project_query(Var q_in, AttentionWeights& w);
Var project_key(Var k_in, AttentionWeights& w);
Var project_value(Var v_in, AttentionWeights& w);
Var attend_projected(Var qp, Var kp, Var vp, AttentionWeights& w, std::vector<Matrix>* probs = nullptr);

/// Head-averaged attention probabilities.
Matrix average_heads(const std::vector<Matrix>& probs);

}  // namespace vtc
