#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "vtc/autograd.hpp"
#include "vtc/rng.hpp"

namespace vtc::ops {

// All operands of a call must live on the same tape.

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Hadamard product.
Var mul(Var a, Var b);
/// Adds a 1 x cols row to every row of a.
Var add_row(Var a, Var row);
Var add_constant(Var a, double c);
Var scale(Var a, double s);
/// Multiplies every entry of a by the 1x1 value s.
Var scale_by(Var a, Var s);

Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);

Var softmax_rows(Var x);
Var log_softmax_rows(Var x);

/// Per-row (x - mean) / sqrt(var + eps) * gain + bias. gain and bias are 1 x cols.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

/// Inverted dropout with a mask that depends only on (mask_seed, entry index).
Var dropout(Var x, double rate, Seed mask_seed);
/// The keep-mask dropout() would use, scaled by 1/(1-rate).
Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, Seed mask_seed);

Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var mean_rows(Var a);
Var sum(Var a);
/// Packs 1x1 values into a rows x cols matrix, row-major.
Var stack_scalars(std::span<const Var> scalars, std::size_t rows, std::size_t cols);

/// Cosine similarity of two 1 x n vectors as a 1x1 value.
Var cosine_similarity(Var a, Var b);
/// 1 - cosine_similarity.
Var cosine_distance(Var a, Var b);

/// Sum of table rows weighted by counts: a 1 x cols bag-of-rows embedding.
Var embedding_bag(Var table, std::span<const std::pair<std::size_t, double>> rows);
/// Gathers table rows in order: an n x cols matrix.
Var embedding_rows(Var table, std::span<const std::size_t> rows);

/// Scaled dot-product attention over pre-projected inputs split into `heads`
/// column blocks: concat_h softmax(Q_h K_h^T / sqrt(d_h)) V_h. If `probs` is
/// non-null it receives one n x m probability matrix per head.
Var attention_core(Var q, Var k, Var v, std::size_t heads, std::vector<Matrix>* probs = nullptr);

/// -mean_r sum_c targets(r,c) * log_probs(r,c). Zero rows yields 0.
Var weighted_nll(Var log_probs, const Matrix& targets);

/// Row-wise softmax cross-entropy where row i's target is column i:
/// mean_i (logsumexp_j L_ij - L_ii). logits must be square.
Var diagonal_cross_entropy(Var logits);

}  // namespace vtc::ops
