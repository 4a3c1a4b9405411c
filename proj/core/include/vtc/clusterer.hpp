#pragma once

#include <cstddef>
#include <vector>

#include "vtc/autograd.hpp"
#include "vtc/rng.hpp"
#include "vtc/text.hpp"

namespace vtc {

struct ClustererConfig {
  double margin = 0.5;  // gamma
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double learning_rate = 0.05;
  double dropout_rate = 0.1;
  Seed seed = 7;

  void validate() const;
};

/// Anchor and positive are the same text under two independent dropout masks; the
/// negative is a different text drawn uniformly.
struct Triplet {
  std::size_t anchor = 0;
  Seed anchor_mask = 0;
  Seed positive_mask = 0;
  std::size_t negative = 0;
};

/// Throws DegenerateInputError if the corpus has fewer than two texts.
Triplet build_triplet(std::size_t anchor, std::size_t corpus_size, Rng& rng);

/// max(0, U(a,p) - U(a,q) + margin) on 1 x o embeddings.
Var clusterer_loss(Var anchor, Var positive, Var negative, double margin);
double clusterer_loss(std::span<const double> anchor, std::span<const double> positive,
                      std::span<const double> negative, double margin);

struct ClustererResult {
  TextEncoder encoder;
  Matrix embeddings;  // row i = t*_i without dropout
  std::vector<double> epoch_losses;
};

/// Trains the clusterer encoder with plain SGD on one triplet per anchor per epoch.
ClustererResult train_clusterer(const Corpus& corpus, const EncoderConfig& encoder_config,
                                const ClustererConfig& config);

/// Embeds every corpus text (no dropout), one row per text.
Matrix embed_corpus(TextEncoder& encoder, const Corpus& corpus);

}  // namespace vtc
