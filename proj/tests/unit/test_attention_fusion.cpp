#include <gtest/gtest.h>

#include <numeric>

#include "support/grad_check.hpp"
#include "vtc/errors.hpp"
#include "vtc/vtc_attention.hpp"

using namespace vtc;
using vtc::testing::check_inputs;
using vtc::testing::check_parameters;
using vtc::testing::contract;
using vtc::testing::random_matrix;

namespace {

constexpr std::size_t kO = 8;
constexpr std::size_t kD = 4;

VtcAttentionWeights make_weights(Seed seed, std::size_t heads = 2) {
  Rng rng(seed);
  VtcAttentionWeights w(kO, kD, heads, rng);
  // Non-trivial layer norm parameters so their gradients are exercised.
  ParameterList params;
  w.collect(params);
  for (Parameter* p : params) {
    if (p->id.ends_with(".gain")) {
      for (double& v : p->value.data()) v = 1.0 + 0.3 * rng.normal();
    } else if (p->id.ends_with(".bias")) {
      for (double& v : p->value.data()) v = 0.2 * rng.normal();
    }
  }
  return w;
}

Matrix layer_norm_plain(const Matrix& x, const Parameter& gain, const Parameter& bias, double eps) {
  Tape t;
  return ops::layer_norm(t.constant(x), t.constant(gain.value), t.constant(bias.value), eps).value();
}

void expect_near(const Matrix& a, const Matrix& b, double tol) {
  ASSERT_TRUE(a.same_shape(b)) << a.shape_string() << " vs " << b.shape_string();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "entry " << i;
}

Matrix permute_rows(const Matrix& m, const std::vector<std::size_t>& order) {
  Matrix out(order.size(), m.cols());
  for (std::size_t r = 0; r < order.size(); ++r) {
    std::copy(m.row(order[r]).begin(), m.row(order[r]).end(), out.row(r).begin());
  }
  return out;
}

}  // namespace

TEST(VtcAtt, OutputIsOneEmbeddingRegardlessOfShapes) {
  VtcAttentionWeights w = make_weights(1);
  Rng rng(2);
  for (std::size_t frames : {1u, 3u, 8u}) {
    for (std::size_t k : {0u, 2u, 5u}) {
      Tape tape;
      Var out = vtc_att(tape.constant(random_matrix(frames, kO, rng)), tape.constant(random_matrix(k + 1, kO, rng)),
                        tape.constant(random_matrix(k + 1, kD, rng)), w);
      EXPECT_EQ(out.rows(), 1u);
      EXPECT_EQ(out.cols(), kO);
    }
  }
}

TEST(VtcAtt, SingleKeyYieldsAnchorValueProjection) {
  VtcAttentionWeights w = make_weights(3);
  Rng rng(4);
  const Matrix n = random_matrix(1, kO, rng);
  Tape tape;
  Var out = vtc_att(tape.constant(random_matrix(6, kO, rng)), tape.constant(n), tape.constant(random_matrix(1, kD, rng)), w);
  const Matrix projected = ::vtc::matmul(::vtc::matmul(n, w.final_block.wv.value), w.final_block.wo.value);
  expect_near(out.value(), layer_norm_plain(projected, w.output_norm.gain, w.output_norm.bias, w.layer_norm_eps), 1e-12);
}

TEST(VtcAtt, ShapeErrorsNameTheStage) {
  VtcAttentionWeights w = make_weights(5);
  Tape tape;
  auto stage_of = [&](const Matrix& f, const Matrix& n, const Matrix& h) {
    try {
      vtc_att(tape.constant(f), tape.constant(n), tape.constant(h), w);
    } catch (const DimensionError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(stage_of(Matrix(2, kO), Matrix(3, kO), Matrix(2, kD)).find("key stage"), std::string::npos);
  EXPECT_NE(stage_of(Matrix(2, kO), Matrix(2, kO), Matrix(2, kD + 1)).find("key stage"), std::string::npos);
  EXPECT_NE(stage_of(Matrix(2, kO + 1), Matrix(2, kO), Matrix(2, kD)).find("query stage"), std::string::npos);
  EXPECT_THROW(vtc_att(tape.constant(Matrix(0, kO)), tape.constant(Matrix(1, kO)), tape.constant(Matrix(1, kD)), w),
               DegenerateInputError);
}

TEST(VtcAtt, InputGradientsThroughAllBlocks) {
  VtcAttentionWeights w = make_weights(6);
  Rng rng(7);
  const auto check = check_inputs(
      [&](Tape&, const std::vector<Var>& v) { return contract(vtc_att(v[0], v[1], v[2], w), 8); },
      {random_matrix(3, kO, rng), random_matrix(4, kO, rng), random_matrix(4, kD, rng)});
  EXPECT_LT(check.max_rel_error, 1e-4);
}

TEST(VtcAtt, ParameterGradientsThroughAllBlocks) {
  VtcAttentionWeights w = make_weights(9);
  Rng rng(10);
  const Matrix f = random_matrix(3, kO, rng), n = random_matrix(3, kO, rng), h = random_matrix(3, kD, rng);
  ParameterList params;
  w.query_block.collect(params);
  w.query_norm.collect(params);
  w.key_block.collect(params);
  w.key_norm.collect(params);
  w.final_block.collect(params);
  w.output_norm.collect(params);
  const auto check = check_parameters(
      [&](Tape& t) { return contract(vtc_att(t.constant(f), t.constant(n), t.constant(h), w), 11); }, params);
  EXPECT_LT(check.max_rel_error, 1e-4);
}

TEST(VtcAtt, DeterministicAndFramePermutationInvariant) {
  VtcAttentionWeights w = make_weights(12);
  Rng rng(13);
  const Matrix f = random_matrix(5, kO, rng), n = random_matrix(3, kO, rng), h = random_matrix(3, kD, rng);
  auto run = [&](const Matrix& frames) {
    Tape t;
    return vtc_att(t.constant(frames), t.constant(n), t.constant(h), w).value();
  };
  EXPECT_EQ(run(f), run(f));
  expect_near(run(f), run(permute_rows(f, {3, 0, 4, 2, 1})), 1e-12);
}

TEST(AttentionScores, RowsSumToOneAndSingleKeyIsOne) {
  VtcAttentionWeights w = make_weights(14);
  Rng rng(15);
  const Matrix scores = attention_scores(random_matrix(6, kO, rng), random_matrix(4, kO, rng), random_matrix(4, kD, rng), w);
  ASSERT_EQ(scores.rows(), 6u);
  ASSERT_EQ(scores.cols(), 4u);
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    EXPECT_NEAR(std::accumulate(scores.row(r).begin(), scores.row(r).end(), 0.0), 1.0, 1e-9);
  }
  const Matrix single = attention_scores(random_matrix(6, kO, rng), random_matrix(1, kO, rng), random_matrix(1, kD, rng), w);
  for (double v : single.data()) EXPECT_EQ(v, 1.0);
}

TEST(Fuse, SingleFrameIsNormalizedValueProjection) {
  VtcAttentionWeights w = make_weights(16);
  Rng rng(17);
  const Matrix f = random_matrix(1, kO, rng);
  Tape tape;
  Var v = fuse(tape.constant(random_matrix(1, kO, rng)), tape.constant(f), w);
  const Matrix projected = ::vtc::matmul(::vtc::matmul(f, w.fusion_block.wv.value), w.fusion_block.wo.value);
  expect_near(v.value(), layer_norm_plain(projected, w.fusion_norm.gain, w.fusion_norm.bias, w.layer_norm_eps), 1e-12);
}

TEST(Fuse, DuplicatingAndPermutingFramesLeavesOutputUnchanged) {
  VtcAttentionWeights w = make_weights(18);
  Rng rng(19);
  const Matrix t = random_matrix(1, kO, rng), f = random_matrix(4, kO, rng);
  auto run = [&](const Matrix& frames) {
    Tape tape;
    return fuse(tape.constant(t), tape.constant(frames), w).value();
  };
  expect_near(run(f), run(permute_rows(f, {0, 1, 2, 3, 0, 1, 2, 3})), 1e-12);
  expect_near(run(f), run(permute_rows(f, {2, 3, 1, 0})), 1e-12);
}

TEST(Fuse, EmptyFramesAndBadQuery) {
  VtcAttentionWeights w = make_weights(20);
  Tape tape;
  EXPECT_THROW(fuse(tape.constant(Matrix(1, kO)), tape.constant(Matrix(0, kO)), w), DegenerateInputError);
  EXPECT_THROW(fuse(tape.constant(Matrix(2, kO)), tape.constant(Matrix(3, kO, 1.0)), w), DimensionError);
}

TEST(Fuse, Gradients) {
  VtcAttentionWeights w = make_weights(21);
  Rng rng(22);
  const Matrix t = random_matrix(1, kO, rng), f = random_matrix(5, kO, rng);
  const auto inputs = check_inputs([&](Tape&, const std::vector<Var>& v) { return contract(fuse(v[0], v[1], w), 23); },
                                   {t, f});
  EXPECT_LT(inputs.max_rel_error, 1e-4);
  ParameterList params;
  w.collect_fusion(params);
  const auto weights = check_parameters([&](Tape& tp) { return contract(fuse(tp.constant(t), tp.constant(f), w), 24); }, params);
  EXPECT_LT(weights.max_rel_error, 1e-4);
}

TEST(VtcAttentionWeights, HeadsMustDivideWidth) {
  Rng rng(1);
  EXPECT_THROW(VtcAttentionWeights(kO, kD, 3, rng), DimensionError);
}
