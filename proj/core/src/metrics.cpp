#include "vtc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "vtc/errors.hpp"
#include "vtc/ops.hpp"

namespace vtc {
namespace {

void check_batch(std::size_t rows, std::size_t cols) {
  if (rows != cols) throw DimensionError("similarity matrix must be square, got " + std::to_string(rows) + "x" + std::to_string(cols));
  if (rows < 2) throw DegenerateInputError("contrastive batch needs S >= 2, got " + std::to_string(rows));
}

double row_loss(const Matrix& logits, bool by_column) {
  const std::size_t s = logits.rows();
  double total = 0.0;
  for (std::size_t i = 0; i < s; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < s; ++j) mx = std::max(mx, by_column ? logits(j, i) : logits(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < s; ++j) z += std::exp((by_column ? logits(j, i) : logits(i, j)) - mx);
    total += mx + std::log(z) - logits(i, i);
  }
  return total / static_cast<double>(s);
}

}  // namespace

double infonce_from_similarity(const Matrix& similarity, double lambda, bool symmetric) {
  check_batch(similarity.rows(), similarity.cols());
  if (!(lambda > 0.0)) throw ParameterError("temperature lambda must be > 0");
  Matrix logits = similarity;
  for (double& v : logits.data()) v *= lambda;
  const double forward = row_loss(logits, false);
  return symmetric ? 0.5 * (forward + row_loss(logits, true)) : forward;
}

double infonce(const Matrix& texts, const Matrix& videos, double lambda, bool symmetric) {
  if (texts.rows() != videos.rows() || texts.cols() != videos.cols()) {
    throw DimensionError("infonce needs equal shapes, got " + texts.shape_string() + " and " + videos.shape_string());
  }
  const std::size_t s = texts.rows();
  if (s < 2) throw DegenerateInputError("contrastive batch needs S >= 2, got " + std::to_string(s));
  Matrix sim(s, s);
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t j = 0; j < s; ++j) sim(i, j) = cosine_similarity(texts.row(i), videos.row(j));
  }
  return infonce_from_similarity(sim, lambda, symmetric);
}

Var infonce_from_similarity(Var similarity, Var log_temperature, bool symmetric) {
  check_batch(similarity.rows(), similarity.cols());
  if (log_temperature.rows() != 1 || log_temperature.cols() != 1) {
    throw DimensionError("log temperature must be 1x1");
  }
  Var logits = ops::scale_by(similarity, ops::exp(log_temperature));
  Var loss = ops::diagonal_cross_entropy(logits);
  if (!symmetric) return loss;
  Var reverse = ops::diagonal_cross_entropy(ops::transpose(logits));
  return ops::scale(ops::add(loss, reverse), 0.5);
}

double total_loss(double sweep, double ret) {
  if (!std::isfinite(sweep) || !std::isfinite(ret)) throw NonFiniteLossError("total_loss needs finite components");
  return sweep + ret;
}

Var total_loss(Var sweep, Var ret) { return ops::add(sweep, ret); }

Metrics compute_metrics(const std::vector<std::size_t>& ranks) {
  if (ranks.empty()) throw DegenerateInputError("compute_metrics needs at least one rank");
  for (auto r : ranks) {
    if (r == 0) throw RangeError("ranks are 1-based; got 0");
  }
  Metrics m;
  m.queries = ranks.size();
  const double n = static_cast<double>(ranks.size());
  auto recall = [&](std::size_t k) {
    return 100.0 * static_cast<double>(std::count_if(ranks.begin(), ranks.end(), [k](auto r) { return r <= k; })) / n;
  };
  m.r1 = recall(1);
  m.r5 = recall(5);
  m.r10 = recall(10);
  std::vector<std::size_t> sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  m.median_rank = static_cast<double>(sorted[(sorted.size() - 1) / 2]);
  m.mean_rank = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
  return m;
}

std::string Metrics::to_json() const {
  nlohmann::ordered_json j = {{"R@1", r1}, {"R@5", r5}, {"R@10", r10}, {"MdR", median_rank}, {"MnR", mean_rank}, {"queries", queries}};
  return j.dump();
}

std::vector<std::size_t> ranking(const std::vector<double>& scores, const std::vector<std::string>& ids) {
  if (scores.size() != ids.size()) throw DimensionError("scores and ids differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  return order;
}

std::size_t rank_of(const std::vector<double>& scores, const std::vector<std::string>& ids, std::size_t target) {
  if (target >= scores.size()) throw LookupError("target index out of range");
  const auto order = ranking(scores, ids);
  return static_cast<std::size_t>(std::find(order.begin(), order.end(), target) - order.begin()) + 1;
}

}  // namespace vtc
