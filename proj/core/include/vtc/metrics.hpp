#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "vtc/autograd.hpp"
#include "vtc/matrix.hpp"

namespace vtc {

/// Contrastive loss over an S x S similarity matrix whose diagonal holds the matched pairs.
/// Logits are `lambda * similarity`; the symmetric variant averages both directions.
double infonce_from_similarity(const Matrix& similarity, double lambda, bool symmetric = false);

/// Row i of `texts` is matched with row i of `videos`; similarities are cosine.
double infonce(const Matrix& texts, const Matrix& videos, double lambda, bool symmetric = false);

/// Differentiable form. `log_temperature` is the 1x1 free parameter, lambda = exp of it.
Var infonce_from_similarity(Var similarity, Var log_temperature, bool symmetric = false);

double total_loss(double sweep, double ret);
Var total_loss(Var sweep, Var ret);

struct Metrics {
  double r1 = 0.0;  // percent
  double r5 = 0.0;
  double r10 = 0.0;
  double median_rank = 0.0;
  double mean_rank = 0.0;
  std::size_t queries = 0;

  std::string to_json() const;
};

Metrics compute_metrics(const std::vector<std::size_t>& ranks);

/// 1-based rank of `target` among `scores`: higher score first, ties by ascending id.
std::size_t rank_of(const std::vector<double>& scores, const std::vector<std::string>& ids, std::size_t target);

/// Indices of `scores` ordered best first with the same tie rule.
std::vector<std::size_t> ranking(const std::vector<double>& scores, const std::vector<std::string>& ids);

}  // namespace vtc
