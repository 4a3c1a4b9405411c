#include "vtc/clusterer.hpp"

#include <algorithm>
#include <numeric>

#include "vtc/errors.hpp"
#include "vtc/ops.hpp"
#include "vtc/optim.hpp"

namespace vtc {

void ClustererConfig::validate() const {
  if (!(margin > 0.0)) throw ConfigError("clusterer margin must be > 0");
  if (batch_size == 0) throw ConfigError("clusterer batch size must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("clusterer dropout rate must be in [0,1)");
  }
  if (learning_rate < 0.0) throw ConfigError("clusterer learning rate must be >= 0");
}

Triplet build_triplet(std::size_t anchor, std::size_t corpus_size, Rng& rng) {
  if (corpus_size < 2) {
    throw DegenerateInputError("triplet needs a corpus of at least 2 texts, got " +
                               std::to_string(corpus_size));
  }
  if (anchor >= corpus_size) throw LookupError("triplet anchor index out of range");
  Triplet t;
  t.anchor = anchor;
  t.anchor_mask = rng.next();
  do {
    t.positive_mask = rng.next();
  } while (t.positive_mask == t.anchor_mask);
  t.negative = rng.below(corpus_size - 1);
  if (t.negative >= anchor) ++t.negative;
  return t;
}

Var clusterer_loss(Var anchor, Var positive, Var negative, double margin) {
  Var gap = ops::sub(ops::cosine_distance(anchor, positive), ops::cosine_distance(anchor, negative));
  return ops::relu(ops::add_constant(gap, margin));
}

double clusterer_loss(std::span<const double> anchor, std::span<const double> positive,
                      std::span<const double> negative, double margin) {
  return std::max(0.0, cosine_distance(anchor, positive) - cosine_distance(anchor, negative) + margin);
}

Matrix embed_corpus(TextEncoder& encoder, const Corpus& corpus) {
  Matrix out(corpus.size(), encoder.output_dim());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    Matrix e = encoder.embed(corpus[i]);
    std::copy(e.data().begin(), e.data().end(), out.row(i).begin());
  }
  return out;
}

ClustererResult train_clusterer(const Corpus& corpus, const EncoderConfig& encoder_config,
                                const ClustererConfig& config) {
  config.validate();
  if (corpus.size() < 2) {
    throw DegenerateInputError("clusterer training needs at least 2 texts");
  }
  EncoderConfig enc = encoder_config;
  enc.dropout_rate = config.dropout_rate;
  ClustererResult result{TextEncoder("clusterer", enc, mix_seed(config.seed, 0xC1)), {}, {}};
  ParameterList params;
  result.encoder.collect(params);
  zero_grads(params);

  Rng rng(mix_seed(config.seed, 0xC2));
  Sgd sgd(config.learning_rate);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      Tape tape;
      std::vector<Var> losses;
      for (std::size_t k = start; k < end; ++k) {
        const Triplet tr = build_triplet(order[k], corpus.size(), rng);
        Var a = result.encoder.encode(tape, corpus[tr.anchor], tr.anchor_mask);
        Var p = result.encoder.encode(tape, corpus[tr.anchor], tr.positive_mask);
        Var q = result.encoder.encode(tape, corpus[tr.negative]);
        losses.push_back(clusterer_loss(a, p, q, config.margin));
      }
      Var batch = ops::scale(ops::sum(ops::concat_rows(losses)),
                             1.0 / static_cast<double>(losses.size()));
      epoch_loss += batch.scalar() * static_cast<double>(losses.size());
      tape.backward(batch);
      sgd.step(params);
      zero_grads(params);
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(corpus.size()));
  }
  result.embeddings = embed_corpus(result.encoder, corpus);
  return result;
}

}  // namespace vtc
