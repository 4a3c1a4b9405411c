#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "support/grad_check.hpp"
#include "vtc/errors.hpp"
#include "vtc/sweeper.hpp"

using namespace vtc;
using vtc::testing::check_parameters;
using vtc::testing::contract;

namespace {

using Tokens = std::vector<std::string>;

Corpus small_corpus() {
  return Corpus({make_text_item("a", "a cat", ""), make_text_item("b", "a dog", ""),
                 make_text_item("c", "the red balloon floats", ""), make_text_item("d", "one", ""),
                 make_text_item("e", "two birds sing loudly", "")});
}

SweeperConfig tiny_sweeper(bool positions = true) {
  SweeperConfig c;
  c.vocab_buckets = 16;
  c.dim = 4;
  c.heads = 2;
  c.ffn_hidden = 6;
  c.segments = 3;
  c.positions = positions;
  return c;
}

std::size_t interval_scan(double b, std::size_t g) {
  for (std::size_t k = 1; k <= g; ++k) {
    const double lo = static_cast<double>(k - 1) / static_cast<double>(g);
    const double hi = static_cast<double>(k) / static_cast<double>(g);
    if (lo <= b && (b < hi || k == g)) return k;
  }
  return 0;
}

Tokens random_tokens(Rng& rng) {
  Tokens t(rng.below(7));
  for (auto& s : t) s = "w" + std::to_string(rng.below(8));
  return t;
}

// Euclidean projection onto the probability simplex (sort-based).
std::vector<double> project_simplex(std::vector<double> v) {
  std::vector<double> u = v;
  std::sort(u.rbegin(), u.rend());
  double cum = 0, theta = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    cum += u[i];
    const double t = (cum - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0) theta = t;
  }
  for (double& x : v) x = std::max(x - theta, 1e-12);
  return v;
}

}  // namespace

TEST(AugmentedSequence, LayoutExample) {
  const Corpus corpus = small_corpus();
  const auto seq = build_augmented_sequence(corpus.at("a"), {"a", {"b"}}, corpus);
  EXPECT_EQ(seq.tokens, (Tokens{"[CLS]", "a", "cat", "[SEP]", "a", "dog", "[SEP]"}));
  EXPECT_EQ(seq.spans, (std::vector<TokenSpan>{{1, 2}, {4, 5}}));
  EXPECT_EQ(seq.neighbor_ids, (Tokens{"b"}));
}

TEST(AugmentedSequence, EmptyCluster) {
  const Corpus corpus = small_corpus();
  const auto seq = build_augmented_sequence(corpus.at("c"), {"c", {}}, corpus);
  EXPECT_EQ(seq.tokens.front(), "[CLS]");
  EXPECT_EQ(seq.tokens.back(), "[SEP]");
  EXPECT_EQ(seq.spans.size(), 1u);
}

TEST(AugmentedSequence, SpansRejoinToNeighborTokensAndCoverNonSpecial) {
  const Corpus corpus = small_corpus();
  const ClusterAssignment cluster{"a", {"c", "e", "b", "d"}};
  const auto seq = build_augmented_sequence(corpus.at("a"), cluster, corpus);
  ASSERT_EQ(seq.spans.size(), 5u);
  std::size_t covered = 0;
  for (std::size_t s = 0; s < seq.spans.size(); ++s) {
    const TokenSpan sp = seq.spans[s];
    if (s) { EXPECT_GT(sp.first, seq.spans[s - 1].last); }
    const Tokens got(seq.tokens.begin() + sp.first, seq.tokens.begin() + sp.last + 1);
    const auto& expected = s == 0 ? corpus.at("a").tokens : corpus.at(cluster.neighbor_ids[s - 1]).tokens;
    EXPECT_EQ(got, expected);
    covered += sp.length();
  }
  const auto specials = std::count_if(seq.roles.begin(), seq.roles.end(), [](TokenRole r) { return r == TokenRole::special; });
  EXPECT_EQ(covered + static_cast<std::size_t>(specials), seq.tokens.size());
}

TEST(AugmentedSequence, TruncationDropsWholeTrailingNeighbors) {
  const Corpus corpus = small_corpus();
  // [CLS] a cat [SEP] = 4, + "the red balloon floats" [SEP] = 9, + "two birds sing loudly" [SEP] = 14
  const auto seq = build_augmented_sequence(corpus.at("a"), {"a", {"c", "e"}}, corpus, 12);
  EXPECT_EQ(seq.neighbor_ids, (Tokens{"c"}));
  EXPECT_EQ(seq.tokens.size(), 9u);
  EXPECT_EQ(seq.tokens.back(), "[SEP]");
}

TEST(AugmentedSequence, UnknownNeighborIsLookupError) {
  const Corpus corpus = small_corpus();
  EXPECT_THROW(build_augmented_sequence(corpus.at("a"), {"a", {"nope"}}, corpus), LookupError);
}

TEST(Sweeper, OutputShapesAndSoftmaxRows) {
  const Corpus corpus = small_corpus();
  Sweeper sweeper(tiny_sweeper(), 1);
  for (std::size_t k = 0; k <= 4; ++k) {
    ClusterAssignment cluster{"a", {}};
    for (const char* id : {"b", "c", "d", "e"}) {
      if (cluster.neighbor_ids.size() < k) cluster.neighbor_ids.push_back(id);
    }
    const auto out = sweeper.infer(build_augmented_sequence(corpus.at("a"), cluster, corpus));
    EXPECT_EQ(out.h.rows(), k + 1);
    EXPECT_EQ(out.h.cols(), 4u);
    EXPECT_EQ(out.s.rows(), k);
    EXPECT_EQ(out.s.cols(), 3u);
    for (std::size_t r = 0; r < out.s.rows(); ++r) {
      EXPECT_NEAR(std::accumulate(out.s.row(r).begin(), out.s.row(r).end(), 0.0), 1.0, 1e-9);
    }
  }
}

TEST(Sweeper, DeterministicInference) {
  const Corpus corpus = small_corpus();
  Sweeper sweeper(tiny_sweeper(), 2);
  const auto seq = build_augmented_sequence(corpus.at("a"), {"a", {"b", "c"}}, corpus);
  const auto x = sweeper.infer(seq);
  const auto y = sweeper.infer(seq);
  EXPECT_EQ(x.h, y.h);
  EXPECT_EQ(x.s, y.s);
}

TEST(Sweeper, SwappingNeighborsSwapsRowsWithoutPositions) {
  const Corpus corpus = small_corpus();
  Sweeper sweeper(tiny_sweeper(false), 3);
  const auto x = sweeper.infer(build_augmented_sequence(corpus.at("a"), {"a", {"b", "c", "e"}}, corpus));
  const auto y = sweeper.infer(build_augmented_sequence(corpus.at("a"), {"a", {"e", "c", "b"}}, corpus));
  const std::size_t perm[] = {2, 1, 0};
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(x.s(r, c), y.s(perm[r], c), 1e-12);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(x.h(r + 1, c), y.h(perm[r] + 1, c), 1e-12);
  }
}

TEST(Sweeper, ParameterGradientsMatchFiniteDifferences) {
  const Corpus corpus = small_corpus();
  for (bool positions : {false, true}) {
    Sweeper sweeper(tiny_sweeper(positions), 4);
    const auto seq = build_augmented_sequence(corpus.at("a"), {"a", {"c", "b"}}, corpus);
    const auto labels = make_sweep_labels(corpus.at("a").tokens, {corpus.at("c").tokens, corpus.at("b").tokens}, 3);
    const SweepLossConfig lc{3, 0.1, {0.5, 1.0, 2.0}};
    ParameterList params;
    sweeper.collect(params);
    const auto check = check_parameters(
        [&](Tape& tape) {
          SweeperTrace tr = sweeper.forward(tape, seq);
          return ops::add(sweep_loss(tr.log_probs, labels.one_hot, lc), contract(tr.h, 17));
        },
        params);
    EXPECT_LT(check.max_rel_error, 1e-4) << "positions " << positions;
  }
}

TEST(Jaccard, Examples) {
  EXPECT_EQ(jaccard({"a", "cat"}, {"a", "cat"}), 1.0);
  EXPECT_EQ(jaccard({"a", "cat"}, {"the", "dog"}), 0.0);
  EXPECT_EQ(jaccard(tokenize("a cat plays"), tokenize("a dog plays")), 0.5);
  EXPECT_EQ(jaccard({}, {}), 0.0);
  EXPECT_EQ(jaccard({"a", "a", "b"}, {"a"}), 0.5);
}

TEST(Jaccard, SymmetricAndBounded) {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const Tokens a = random_tokens(rng), b = random_tokens(rng);
    const double j = jaccard(a, b);
    EXPECT_EQ(j, jaccard(b, a));
    EXPECT_GE(j, 0.0);
    EXPECT_LE(j, 1.0);
  }
}

TEST(SegmentOf, Examples) {
  EXPECT_EQ(segment_of(0.0, 5), 1u);
  EXPECT_EQ(segment_of(1.0, 5), 5u);
  EXPECT_EQ(segment_of(0.5, 5), 3u);
  EXPECT_EQ(segment_of(0.4, 5), 3u);
  EXPECT_EQ(segment_of(0.2, 5), 2u);
  EXPECT_THROW(segment_of(-0.01, 5), RangeError);
  EXPECT_THROW(segment_of(1.01, 5), RangeError);
  EXPECT_THROW(segment_of(std::nan(""), 5), RangeError);
}

TEST(SegmentOf, MatchesIntervalScanOnRandomPairs) {
  Rng rng(6);
  for (std::size_t g : {2u, 5u, 10u}) {
    for (int i = 0; i < 1000; ++i) {
      const double b = jaccard(random_tokens(rng), random_tokens(rng));
      EXPECT_EQ(segment_of(b, g), interval_scan(b, g)) << "B=" << b << " g=" << g;
    }
    for (std::size_t k = 0; k <= g; ++k) {
      const double b = static_cast<double>(k) / static_cast<double>(g);
      EXPECT_EQ(segment_of(b, g), interval_scan(b, g)) << "boundary " << b;
    }
  }
}

TEST(SegmentOf, MonotoneInB) {
  for (std::size_t g : {2u, 3u, 7u}) {
    std::size_t prev = 1;
    for (int i = 0; i <= 1000; ++i) {
      const std::size_t k = segment_of(i / 1000.0, g);
      EXPECT_GE(k, prev);
      prev = k;
    }
  }
}

TEST(SweepLabels, OneHotRows) {
  Rng rng(7);
  std::vector<Tokens> neighbors;
  for (int i = 0; i < 50; ++i) neighbors.push_back(random_tokens(rng));
  const auto labels = make_sweep_labels(random_tokens(rng), neighbors, 5);
  for (std::size_t r = 0; r < labels.one_hot.rows(); ++r) {
    double sum = 0;
    for (double v : labels.one_hot.row(r)) {
      EXPECT_TRUE(v == 0.0 || v == 1.0);
      sum += v;
    }
    EXPECT_EQ(sum, 1.0);
    EXPECT_EQ(labels.one_hot(r, labels.segment[r] - 1), 1.0);
  }
}

TEST(ClassWeights, Examples) {
  const auto w = class_weights({1, 1, 1, 2}, 2, false);
  EXPECT_NEAR(w[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(w[1], 2.0, 1e-15);

  const auto uniform = class_weights({1, 2, 3, 1, 2, 3}, 3, false);
  for (double v : uniform) EXPECT_NEAR(v, 1.0, 1e-15);

  const auto smoothed = class_weights({1, 1, 1}, 3, true);
  for (double v : smoothed) EXPECT_TRUE(std::isfinite(v) && v > 0);
}

TEST(SweepLoss, UniformPredictionIsLnTwo) {
  const SweepLossConfig lc{2, 0.0, {1.0, 1.0}};
  EXPECT_NEAR(sweep_loss(Matrix{{0.5, 0.5}}, Matrix{{1, 0}}, lc), std::log(2.0), 1e-15);
  EXPECT_NEAR(sweep_loss(Matrix{{0.5, 0.5}, {0.5, 0.5}}, Matrix{{1, 0}, {0, 1}}, lc), std::log(2.0), 1e-15);
}

TEST(SweepLoss, ApproachesZeroOnConfidentCorrectPrediction) {
  const SweepLossConfig lc{3, 0.0, {1, 1, 1}};
  EXPECT_LT(sweep_loss(Matrix{{1e-9, 1 - 2e-9, 1e-9}}, Matrix{{0, 1, 0}}, lc), 1e-8);
}

TEST(SweepLoss, NonNegativeAndIncreasesAsLabeledProbabilityFalls) {
  const SweepLossConfig lc{3, 0.0, {0.7, 1.3, 2.0}};
  double prev = -1;
  for (double p = 0.99; p > 0.05; p -= 0.05) {
    const double rest = (1 - p) / 2;
    const double loss = sweep_loss(Matrix{{rest, rest, p}}, Matrix{{0, 0, 1}}, lc);
    EXPECT_GE(loss, 0.0);
    EXPECT_GT(loss, prev);
    prev = loss;
  }
}

TEST(SweepLoss, DifferentiableFormMatchesPlain) {
  const SweepLossConfig lc{3, 0.1, {0.5, 1.0, 2.0}};
  const Matrix logits{{0.2, -1.0, 0.7}, {1.5, 0.1, -0.3}};
  const Matrix labels{{0, 0, 1}, {1, 0, 0}};
  Tape tape;
  Var lp = ops::log_softmax_rows(tape.constant(logits));
  EXPECT_NEAR(sweep_loss(lp, labels, lc).scalar(), sweep_loss(softmax_rows(logits), labels, lc), 1e-12);
}

TEST(SweepLoss, MinimizerIsWeightedSmoothedLabelDistribution) {
  const SweepLossConfig lc{4, 0.2, {0.5, 1.5, 1.0, 3.0}};
  const Matrix y{{0, 1, 0, 0}};
  std::vector<double> s(4, 0.25);
  for (int it = 0; it < 20000; ++it) {
    const Matrix t = sweep_targets(y, lc);
    std::vector<double> next(4);
    for (std::size_t k = 0; k < 4; ++k) next[k] = s[k] + 1e-3 * t(0, k) / s[k];
    s = project_simplex(next);
  }
  const Matrix t = sweep_targets(y, lc);
  const double total = t(0, 0) + t(0, 1) + t(0, 2) + t(0, 3);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(s[k], t(0, k) / total, 1e-4);
  // No other point on a grid over the simplex does better.
  const double best = sweep_loss(Matrix{{s[0], s[1], s[2], s[3]}}, y, lc);
  Rng rng(8);
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> p(4);
    double z = 0;
    for (double& v : p) z += (v = rng.uniform() + 1e-6);
    for (double& v : p) v /= z;
    EXPECT_GE(sweep_loss(Matrix{{p[0], p[1], p[2], p[3]}}, y, lc), best - 1e-9);
  }
}

TEST(SweepLossConfig, Validation) {
  EXPECT_THROW((SweepLossConfig{1, 0.1, {1}}).validate(), ConfigError);
  EXPECT_THROW((SweepLossConfig{2, 1.0, {1, 1}}).validate(), ConfigError);
  EXPECT_THROW((SweepLossConfig{2, 0.1, {1, 0}}).validate(), ConfigError);
  EXPECT_THROW((SweepLossConfig{2, 0.1, {1}}).validate(), ConfigError);
}
