#include "vtc/sweeper.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "vtc/errors.hpp"
#include "vtc/ops.hpp"

namespace vtc {

AugmentedSequence build_augmented_sequence(const TextItem& anchor, const ClusterAssignment& cluster,
                                           const Corpus& corpus, std::size_t max_length) {
  AugmentedSequence seq;
  seq.anchor_id = anchor.text_id;
  auto push = [&seq](const std::string& tok, TokenRole role, std::size_t pos) {
    seq.tokens.push_back(tok);
    seq.roles.push_back(role);
    seq.positions.push_back(pos);
  };
  auto push_segment = [&](const std::vector<std::string>& toks, TokenRole role) {
    const std::size_t first = seq.tokens.size();
    for (std::size_t i = 0; i < toks.size(); ++i) push(toks[i], role, i);
    seq.spans.push_back({first, seq.tokens.size() - 1});
    push(std::string(SpecialTokens::sep), TokenRole::special, 0);
  };

  if (anchor.tokens.empty()) throw DegenerateInputError("anchor '" + anchor.text_id + "' has no tokens");
  push(std::string(SpecialTokens::cls), TokenRole::special, 0);
  push_segment(anchor.tokens, TokenRole::anchor);

  // Resolve every id first so an unknown id fails regardless of truncation.
  std::vector<const TextItem*> neighbors;
  for (const auto& id : cluster.neighbor_ids) neighbors.push_back(&corpus.at(id));
  for (const TextItem* n : neighbors) {
    if (n->tokens.empty()) continue;
    if (seq.tokens.size() + n->tokens.size() + 1 > max_length) break;
    push_segment(n->tokens, TokenRole::neighbor);
    seq.neighbor_ids.push_back(n->text_id);
  }
  return seq;
}

namespace {

Matrix positional_table(const AugmentedSequence& seq, std::size_t dim) {
  Matrix pe(seq.tokens.size(), dim);
  for (std::size_t t = 0; t < seq.tokens.size(); ++t) {
    const double pos = static_cast<double>(seq.positions[t]);
    for (std::size_t i = 0; i < dim; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dim));
      pe(t, i) = std::sin(pos * freq);
      if (i + 1 < dim) pe(t, i + 1) = std::cos(pos * freq);
    }
  }
  return pe;
}

}  // namespace

Sweeper::Sweeper(const SweeperConfig& config, Seed init_seed) : config_(config) {
  if (config.segments < 2) throw ConfigError("sweeper needs g >= 2 segments");
  Rng rng(init_seed);
  const std::size_t d = config.dim;
  token_embedding = Parameter("sweeper.token_embedding",
                              init_weight(config.vocab_buckets + 2, d, rng,
                                          std::sqrt(static_cast<double>(config.vocab_buckets + 2))));
  role_embedding = Parameter("sweeper.role_embedding", init_weight(3, d, rng, std::sqrt(3.0)));
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = "sweeper.layer" + std::to_string(l);
    SweeperLayer layer;
    layer.attention = AttentionWeights(p + ".attn", d, d, d, d, d, config.heads, rng);
    layer.norm1 = LayerNormWeights(p + ".norm1", d);
    layer.ffn_w1 = Parameter(p + ".ffn_w1", init_weight(d, config.ffn_hidden, rng));
    layer.ffn_b1 = Parameter(p + ".ffn_b1", Matrix(1, config.ffn_hidden));
    layer.ffn_w2 = Parameter(p + ".ffn_w2", init_weight(config.ffn_hidden, d, rng));
    layer.ffn_b2 = Parameter(p + ".ffn_b2", Matrix(1, d));
    layer.norm2 = LayerNormWeights(p + ".norm2", d);
    layers.push_back(std::move(layer));
  }
  head_w = Parameter("sweeper.head_w", init_weight(d, config.segments, rng));
  head_b = Parameter("sweeper.head_b", Matrix(1, config.segments));
}

SweeperTrace Sweeper::forward(Tape& tape, const AugmentedSequence& seq) {
  if (seq.spans.empty()) throw DegenerateInputError("sweeper input has no segments");
  std::vector<std::size_t> rows(seq.tokens.size());
  std::vector<std::size_t> roles(seq.tokens.size());
  for (std::size_t t = 0; t < seq.tokens.size(); ++t) {
    const auto& tok = seq.tokens[t];
    if (tok == SpecialTokens::cls) {
      rows[t] = config_.vocab_buckets;
    } else if (tok == SpecialTokens::sep) {
      rows[t] = config_.vocab_buckets + 1;
    } else {
      rows[t] = hash_bucket(tok, config_.vocab_buckets, config_.hash_seed);
    }
    roles[t] = static_cast<std::size_t>(seq.roles[t]);
  }
  Var x = ops::add(ops::embedding_rows(tape.leaf(token_embedding), rows),
                   ops::embedding_rows(tape.leaf(role_embedding), roles));
  if (config_.positions) x = ops::add(x, tape.constant(positional_table(seq, config_.dim)));

  const double eps = config_.layer_norm_eps;
  for (SweeperLayer& layer : layers) {
    Var attn = multi_head_attention(x, x, x, layer.attention);
    x = layer.norm1.apply(ops::add(x, attn), eps);
    Var hidden = ops::relu(ops::add_row(ops::matmul(x, tape.leaf(layer.ffn_w1)), tape.leaf(layer.ffn_b1)));
    Var ffn = ops::add_row(ops::matmul(hidden, tape.leaf(layer.ffn_w2)), tape.leaf(layer.ffn_b2));
    x = layer.norm2.apply(ops::add(x, ffn), eps);
  }

  std::vector<Var> pooled;
  pooled.reserve(seq.spans.size());
  for (const TokenSpan& span : seq.spans) pooled.push_back(ops::mean_rows(ops::slice_rows(x, span.first, span.length())));
  SweeperTrace trace;
  trace.h = ops::concat_rows(pooled);
  const std::size_t k = seq.spans.size() - 1;
  if (k == 0) {
    trace.log_probs = tape.constant(Matrix(0, config_.segments));
  } else {
    Var neighbors = ops::slice_rows(trace.h, 1, k);
    Var logits = ops::add_row(ops::matmul(neighbors, tape.leaf(head_w)), tape.leaf(head_b));
    trace.log_probs = ops::log_softmax_rows(logits);
  }
  return trace;
}

SweeperOutput Sweeper::infer(const AugmentedSequence& seq) {
  Tape tape;
  SweeperTrace trace = forward(tape, seq);
  SweeperOutput out{trace.h.value(), trace.log_probs.value()};
  for (double& v : out.s.data()) v = std::exp(v);
  return out;
}

void Sweeper::collect(ParameterList& out) {
  out.push_back(&token_embedding);
  out.push_back(&role_embedding);
  for (SweeperLayer& layer : layers) {
    layer.attention.collect(out);
    layer.norm1.collect(out);
    out.push_back(&layer.ffn_w1);
    out.push_back(&layer.ffn_b1);
    out.push_back(&layer.ffn_w2);
    out.push_back(&layer.ffn_b2);
    layer.norm2.collect(out);
  }
  out.push_back(&head_w);
  out.push_back(&head_b);
}

double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::set<std::string> sa(a.begin(), a.end());
  const std::set<std::string> sb(b.begin(), b.end());
  if (sa.empty() && sb.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& t : sa) inter += sb.count(t);
  const std::size_t uni = sa.size() + sb.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::size_t segment_of(double b, std::size_t g) {
  if (g == 0) throw ConfigError("segment count must be positive");
  if (!(b >= 0.0 && b <= 1.0)) throw RangeError("Jaccard value " + std::to_string(b) + " outside [0,1]");
  if (b >= 1.0) return g;
  std::size_t k = static_cast<std::size_t>(std::floor(b * static_cast<double>(g))) + 1;
  // Guard the floating-point edges of the half-open interval rule.
  while (k > 1 && b < static_cast<double>(k - 1) / static_cast<double>(g)) --k;
  while (k < g && b >= static_cast<double>(k) / static_cast<double>(g)) ++k;
  return k;
}

SweepLabels make_sweep_labels(const std::vector<std::string>& anchor_tokens,
                              const std::vector<std::vector<std::string>>& neighbor_tokens,
                              std::size_t g) {
  SweepLabels labels;
  labels.one_hot = Matrix(neighbor_tokens.size(), g);
  for (std::size_t j = 0; j < neighbor_tokens.size(); ++j) {
    const double b = jaccard(anchor_tokens, neighbor_tokens[j]);
    const std::size_t k = segment_of(b, g);
    labels.jaccard.push_back(b);
    labels.segment.push_back(k);
    labels.one_hot(j, k - 1) = 1.0;
  }
  return labels;
}

std::vector<double> class_weights(const std::vector<std::size_t>& segments, std::size_t g,
                                  bool add_one_smoothing) {
  std::vector<double> counts(g, add_one_smoothing ? 1.0 : 0.0);
  for (std::size_t k : segments) {
    if (k == 0 || k > g) throw RangeError("segment label " + std::to_string(k) + " outside 1..g");
    counts[k - 1] += 1.0;
  }
  const double n = static_cast<double>(segments.size());
  std::vector<double> w(g);
  for (std::size_t k = 0; k < g; ++k) w[k] = n / counts[k] / static_cast<double>(g);
  return w;
}

void SweepLossConfig::validate() const {
  if (segments < 2) throw ConfigError("sweep loss needs g >= 2");
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw ConfigError("label smoothing must be in [0,1)");
  if (weights.size() != segments) {
    throw ConfigError("sweep loss has " + std::to_string(weights.size()) + " class weights for g=" +
                      std::to_string(segments));
  }
  for (double w : weights)
    if (!(w > 0.0)) throw ConfigError("class weights must be positive");
}

Matrix sweep_targets(const Matrix& one_hot, const SweepLossConfig& config) {
  config.validate();
  if (one_hot.cols() != config.segments) {
    throw DimensionError("labels have " + std::to_string(one_hot.cols()) + " columns for g=" +
                         std::to_string(config.segments));
  }
  const double g = static_cast<double>(config.segments);
  Matrix t(one_hot.rows(), one_hot.cols());
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t k = 0; k < t.cols(); ++k)
      t(r, k) = config.weights[k] * ((1.0 - config.smoothing) * one_hot(r, k) + config.smoothing / g);
  return t;
}

double sweep_loss(const Matrix& probs, const Matrix& one_hot, const SweepLossConfig& config) {
  if (!probs.same_shape(one_hot)) {
    throw DimensionError("sweep_loss probabilities " + probs.shape_string() + " vs labels " +
                         one_hot.shape_string());
  }
  if (probs.rows() == 0) return 0.0;
  const Matrix t = sweep_targets(one_hot, config);
  double loss = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t[i] != 0.0) loss -= t[i] * std::log(probs[i]);
  return loss / static_cast<double>(probs.rows());
}

Var sweep_loss(Var log_probs, const Matrix& one_hot, const SweepLossConfig& config) {
  return ops::weighted_nll(log_probs, sweep_targets(one_hot, config));
}

}  // namespace vtc
