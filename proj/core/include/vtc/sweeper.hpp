#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "vtc/ann_index.hpp"
#include "vtc/autograd.hpp"
#include "vtc/nn.hpp"
#include "vtc/text.hpp"

namespace vtc {

/// Inclusive token-index range of one segment.
struct TokenSpan {
  std::size_t first = 0;
  std::size_t last = 0;

  std::size_t length() const { return last - first + 1; }
  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

enum class TokenRole : std::size_t { special = 0, anchor = 1, neighbor = 2 };

/// [CLS] anchor [SEP] n_1 [SEP] ... n_K [SEP]. Span 0 is the anchor, spans 1..K the
/// neighbors in cluster order.
struct AugmentedSequence {
  std::string anchor_id;
  std::vector<std::string> neighbor_ids;  // after truncation
  std::vector<std::string> tokens;
  std::vector<TokenRole> roles;
  std::vector<std::size_t> positions;  // index within the token's own segment
  std::vector<TokenSpan> spans;
};

/// Neighbors that would push the sequence past max_length are dropped whole,
/// from the end. The anchor segment is always kept. Throws LookupError on an
/// unknown neighbor id.
AugmentedSequence build_augmented_sequence(const TextItem& anchor, const ClusterAssignment& cluster,
                                           const Corpus& corpus, std::size_t max_length = 512);

struct SweeperConfig {
  std::size_t vocab_buckets = 4096;
  std::size_t dim = 16;  // d
  std::size_t heads = 2;
  std::size_t layers = 1;
  std::size_t ffn_hidden = 32;
  std::size_t segments = 5;  // g
  bool positions = true;     // sinusoidal intra-segment positions
  double layer_norm_eps = 1e-5;
  Seed hash_seed = 7;
};

struct SweeperLayer {
  AttentionWeights attention;
  LayerNormWeights norm1;
  Parameter ffn_w1;
  Parameter ffn_b1;
  Parameter ffn_w2;
  Parameter ffn_b2;
  LayerNormWeights norm2;
};

/// Differentiable Sweeper outputs: h is (K+1) x d, log_probs is K x g.
struct SweeperTrace {
  Var h;
  Var log_probs;
};

/// Plain outputs: pooled segment features h and softmax rows s.
struct SweeperOutput {
  Matrix h;
  Matrix s;
};

class Sweeper {
 public:
  Sweeper() = default;
  Sweeper(const SweeperConfig& config, Seed init_seed);

  SweeperTrace forward(Tape& tape, const AugmentedSequence& seq);
  SweeperOutput infer(const AugmentedSequence& seq);

  const SweeperConfig& config() const { return config_; }
  void collect(ParameterList& out);

  Parameter token_embedding;  // (buckets + 2) x d; last two rows are [CLS], [SEP]
  Parameter role_embedding;   // 3 x d
  std::vector<SweeperLayer> layers;
  Parameter head_w;  // d x g
  Parameter head_b;  // 1 x g

 private:
  SweeperConfig config_;
};

// ---- Jaccard labels and the sweep loss -----------------------------------------

/// |A intersect B| / |A union B| over token sets; 0 when both are empty.
double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b);

/// The k in 1..g with (k-1)/g <= B < k/g; B = 1 maps to g.
std::size_t segment_of(double b, std::size_t g);

struct SweepLabels {
  std::vector<double> jaccard;       // B_ij per neighbor
  std::vector<std::size_t> segment;  // 1-based k per neighbor
  Matrix one_hot;                    // K x g
};

SweepLabels make_sweep_labels(const std::vector<std::string>& anchor_tokens,
                              const std::vector<std::vector<std::string>>& neighbor_tokens,
                              std::size_t g);

/// N_pairs / count_k / g, with count_k + 1 when add_one_smoothing is set.
std::vector<double> class_weights(const std::vector<std::size_t>& segments, std::size_t g,
                                  bool add_one_smoothing = true);

struct SweepLossConfig {
  std::size_t segments = 5;  // g
  double smoothing = 0.1;    // epsilon
  std::vector<double> weights;

  void validate() const;
};

/// Per pair row: weights_k * ((1 - eps) * y_k + eps / g).
Matrix sweep_targets(const Matrix& one_hot, const SweepLossConfig& config);

/// -mean over pairs of sum_k targets_k * log s_k on plain probabilities.
double sweep_loss(const Matrix& probs, const Matrix& one_hot, const SweepLossConfig& config);
/// Differentiable form over log-probabilities.
Var sweep_loss(Var log_probs, const Matrix& one_hot, const SweepLossConfig& config);

}  // namespace vtc
