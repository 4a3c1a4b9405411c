#include <gtest/gtest.h>

#include <cmath>

#include "support/grad_check.hpp"
#include "vtc/errors.hpp"
#include "vtc/nn.hpp"
#include "vtc/ops.hpp"

using namespace vtc;
using vtc::testing::check_inputs;
using vtc::testing::contract;
using vtc::testing::random_matrix;

namespace {

constexpr double kGradTol = 1e-4;

void expect_near(const Matrix& a, const Matrix& b, double tol) {
  ASSERT_TRUE(a.same_shape(b)) << a.shape_string() << " vs " << b.shape_string();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "entry " << i;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Rng rng(1);
  const Matrix m = random_matrix(3, 4, rng);
  EXPECT_EQ(matmul(Matrix::identity(3), m), m);
}

TEST(Matmul, HandEvaluatedProduct) {
  EXPECT_EQ(matmul(Matrix{{1, 2}, {3, 4}}, Matrix{{1}, {1}}), (Matrix{{3}, {7}}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Matrix(2, 3), Matrix(2, 3));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientOfSumIsOnesTimesBTransposed) {
  Rng rng(2);
  const Matrix a = random_matrix(3, 4, rng);
  const Matrix b = random_matrix(4, 2, rng);
  Tape tape;
  Var va = tape.input(a);
  tape.backward(ops::sum(ops::matmul(va, tape.constant(b))));
  expect_near(tape.grad(va), matmul(Matrix(3, 2, 1.0), b.transposed()), 1e-12);
}

TEST(Softmax, Examples) {
  expect_near(softmax_rows(Matrix{{0, 0}}), Matrix{{0.5, 0.5}}, 1e-15);
  expect_near(softmax_rows(Matrix{{std::log(1.0), std::log(2.0), std::log(3.0)}}),
              Matrix{{1.0 / 6, 1.0 / 3, 0.5}}, 1e-15);
}

TEST(Softmax, ShiftInvariant) {
  Rng rng(3);
  Matrix x = random_matrix(4, 5, rng);
  Matrix shifted = x;
  for (std::size_t r = 0; r < 4; ++r)
    for (double& v : shifted.row(r)) v += 100.0 * static_cast<double>(r + 1);
  expect_near(softmax_rows(x), softmax_rows(shifted), 1e-12);
}

TEST(Softmax, RowsSumToOneAndEntriesInOpenInterval) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix p = softmax_rows(random_matrix(1 + rng.below(8), 1 + rng.below(8), rng, 5.0));
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double s = 0.0;
      for (double v : p.row(r)) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, p.cols() == 1 ? 1.0 + 1e-15 : 1.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Softmax, LargeLogitsStayFinite) {
  const Matrix p = softmax_rows(Matrix{{1000.0, 999.0, -1000.0}});
  EXPECT_TRUE(p.all_finite());
  EXPECT_NEAR(p(0, 0) + p(0, 1) + p(0, 2), 1.0, 1e-12);
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  Tape tape;
  Var y = ops::layer_norm(tape.constant(Matrix{{5, 5, 5}}), tape.constant(Matrix(1, 3, 1.0)),
                          tape.constant(Matrix(1, 3, 0.0)));
  expect_near(y.value(), Matrix{{0, 0, 0}}, 1e-12);
}

TEST(LayerNorm, TwoValuesMapToMinusOneOne) {
  Tape tape;
  Var y = ops::layer_norm(tape.constant(Matrix{{1, 3}}), tape.constant(Matrix(1, 2, 1.0)),
                          tape.constant(Matrix(1, 2, 0.0)), 1e-12);
  expect_near(y.value(), Matrix{{-1, 1}}, 1e-9);
}

TEST(LayerNorm, MomentsWithinTolerance) {
  Rng rng(5);
  const double eps = 1e-5;
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t cols = 2 + rng.below(15);
    Tape tape;
    Var y = ops::layer_norm(tape.constant(random_matrix(1 + rng.below(8), cols, rng, 3.0)),
                            tape.constant(Matrix(1, cols, 1.0)), tape.constant(Matrix(1, cols, 0.0)), eps);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double mean = 0.0, var = 0.0;
      for (double v : y.value().row(r)) mean += v;
      mean /= static_cast<double>(cols);
      for (double v : y.value().row(r)) var += (v - mean) * (v - mean);
      var /= static_cast<double>(cols);
      EXPECT_LT(std::abs(mean), 1e-9);
      EXPECT_LT(std::abs(var - 1.0), 10 * eps);
    }
  }
}

TEST(Dropout, RateZeroIsIdentity) {
  Rng rng(6);
  Tape tape;
  const Matrix x = random_matrix(3, 3, rng);
  EXPECT_EQ(ops::dropout(tape.constant(x), 0.0, 9).value(), x);
}

TEST(Dropout, SameSeedSameMask) {
  EXPECT_EQ(ops::dropout_mask(5, 7, 0.3, 11), ops::dropout_mask(5, 7, 0.3, 11));
  EXPECT_NE(ops::dropout_mask(5, 7, 0.3, 11), ops::dropout_mask(5, 7, 0.3, 12));
}

TEST(Dropout, SurvivorFractionMonteCarlo) {
  const Matrix mask = ops::dropout_mask(1, 100000, 0.5, 2024);
  std::size_t kept = 0;
  for (double v : mask.data()) {
    if (v != 0.0) {
      ++kept;
      EXPECT_DOUBLE_EQ(v, 2.0);
    }
  }
  EXPECT_NEAR(static_cast<double>(kept) / 100000.0, 0.5, 0.01);
}

TEST(Dropout, RateOneOrMoreRejected) {
  EXPECT_THROW(ops::dropout_mask(2, 2, 1.0, 1), ParameterError);
  EXPECT_THROW(ops::dropout_mask(2, 2, -0.1, 1), ParameterError);
}

TEST(Attention, SingleKeyReturnsProjectedValue) {
  Rng rng(7);
  AttentionWeights w("t", 4, 3, 3, 4, 5, 2, rng);
  const Matrix q = random_matrix(6, 4, rng);
  const Matrix kv = random_matrix(1, 3, rng);
  Tape tape;
  Var out = multi_head_attention(tape.constant(q), tape.constant(kv), tape.constant(kv), w);
  const Matrix expected_row = matmul(matmul(kv, w.wv.value), w.wo.value);
  ASSERT_EQ(out.rows(), 6u);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(out.value()(r, c), expected_row(0, c), 1e-12);
}

TEST(Attention, ScoreRowsSumToOnePerHead) {
  Rng rng(8);
  AttentionWeights w("t", 4, 4, 4, 8, 4, 4, rng);
  Tape tape;
  std::vector<Matrix> probs;
  multi_head_attention(tape.constant(random_matrix(3, 4, rng)), tape.constant(random_matrix(5, 4, rng)),
                       tape.constant(random_matrix(5, 4, rng)), w, &probs);
  ASSERT_EQ(probs.size(), 4u);
  for (const Matrix& p : probs) {
    ASSERT_EQ(p.rows(), 3u);
    ASSERT_EQ(p.cols(), 5u);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double s = 0.0;
      for (double v : p.row(r)) s += v;
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Attention, HeadDivisibilityAndKeyValueRowsChecked) {
  Rng rng(9);
  EXPECT_THROW(AttentionWeights("t", 4, 4, 4, 6, 4, 4, rng), DimensionError);
  AttentionWeights w("t", 4, 4, 4, 4, 4, 2, rng);
  Tape tape;
  EXPECT_THROW(multi_head_attention(tape.constant(Matrix(2, 4)), tape.constant(Matrix(3, 4)),
                                    tape.constant(Matrix(2, 4)), w),
               DimensionError);
}

TEST(CosineDistance, Examples) {
  const std::vector<double> v{0.3, -1.2, 2.0};
  EXPECT_NEAR(cosine_distance(v, v), 0.0, 1e-15);
  const std::vector<double> e0{1, 0}, e1{0, 1}, neg{-1, 0};
  EXPECT_DOUBLE_EQ(cosine_distance(e0, e1), 1.0);
  EXPECT_DOUBLE_EQ(cosine_distance(e0, neg), 2.0);
}

TEST(CosineDistance, ZeroVectorIsDegenerate) {
  const std::vector<double> z{0, 0}, e0{1, 0};
  EXPECT_THROW(cosine_distance(z, e0), DegenerateInputError);
}

TEST(CosineDistance, RangeProperty) {
  Rng rng(10);
  for (int i = 0; i < 200; ++i) {
    const Matrix a = random_matrix(1, 6, rng), b = random_matrix(1, 6, rng);
    const double u = cosine_distance(a.row(0), b.row(0));
    EXPECT_GE(u, 0.0);
    EXPECT_LE(u, 2.0);
  }
}

TEST(Parameters, ZeroGradsClearsExactly) {
  Parameter p("p", Matrix{{1, 2}, {3, 4}});
  p.grad = Matrix{{5, 6}, {7, 8}};
  zero_grads({&p});
  EXPECT_EQ(p.grad, Matrix(2, 2, 0.0));
  EXPECT_TRUE(p.grad.same_shape(p.value));
}

TEST(Tape, RepeatedBackwardIsBitIdentical) {
  Rng rng(11);
  AttentionWeights w("t", 4, 4, 4, 4, 4, 2, rng);
  const Matrix x = random_matrix(3, 4, rng);
  ParameterList params;
  w.collect(params);
  auto run = [&] {
    zero_grads(params);
    Tape tape;
    Var xv = tape.constant(x);
    tape.backward(contract(ops::softmax_rows(multi_head_attention(xv, xv, xv, w)), 3));
    std::vector<Matrix> grads;
    for (auto* p : params) grads.push_back(p->grad);
    return grads;
  };
  EXPECT_EQ(run(), run());
}

TEST(Tape, BackwardRequiresScalar) {
  Tape tape;
  Var x = tape.input(Matrix(2, 2, 1.0));
  EXPECT_THROW(tape.backward(x), DimensionError);
}

// Finite-difference checks for every differentiable op on random shapes up to 8x8.
class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
  Rng rng(1000 + GetParam());
  const std::size_t r = 1 + rng.below(8), c = 1 + rng.below(8), k = 1 + rng.below(8);
  const Seed s = rng.next();
  struct Case {
    const char* name;
    vtc::testing::LossFn fn;
    std::vector<Matrix> inputs;
  };
  Matrix positive = random_matrix(r, c, rng);
  for (double& v : positive.data()) v = 0.5 + std::abs(v);
  Matrix row = random_matrix(1, c, rng);
  const std::vector<Case> cases = {
      {"matmul", [&](Tape&, const std::vector<Var>& v) { return contract(ops::matmul(v[0], v[1]), s); },
       {random_matrix(r, k, rng), random_matrix(k, c, rng)}},
      {"matmul_nt", [&](Tape&, const std::vector<Var>& v) { return contract(ops::matmul_nt(v[0], v[1]), s); },
       {random_matrix(r, k, rng), random_matrix(c, k, rng)}},
      {"transpose", [&](Tape&, const std::vector<Var>& v) { return contract(ops::transpose(v[0]), s); },
       {random_matrix(r, c, rng)}},
      {"add_sub_mul",
       [&](Tape&, const std::vector<Var>& v) {
         return contract(ops::mul(ops::add(v[0], v[1]), ops::sub(v[0], v[1])), s);
       },
       {random_matrix(r, c, rng), random_matrix(r, c, rng)}},
      {"add_row", [&](Tape&, const std::vector<Var>& v) { return contract(ops::add_row(v[0], v[1]), s); },
       {random_matrix(r, c, rng), row}},
      {"scale_by", [&](Tape&, const std::vector<Var>& v) { return contract(ops::scale_by(v[0], v[1]), s); },
       {random_matrix(r, c, rng), random_matrix(1, 1, rng)}},
      {"tanh_exp", [&](Tape&, const std::vector<Var>& v) { return contract(ops::exp(ops::tanh(v[0])), s); },
       {random_matrix(r, c, rng)}},
      {"log", [&](Tape&, const std::vector<Var>& v) { return contract(ops::log(v[0]), s); }, {positive}},
      {"relu", [&](Tape&, const std::vector<Var>& v) { return contract(ops::relu(v[0]), s); },
       {random_matrix(r, c, rng)}},
      {"softmax", [&](Tape&, const std::vector<Var>& v) { return contract(ops::softmax_rows(v[0]), s); },
       {random_matrix(r, c, rng)}},
      {"log_softmax",
       [&](Tape&, const std::vector<Var>& v) { return contract(ops::log_softmax_rows(v[0]), s); },
       {random_matrix(r, c, rng)}},
      {"layer_norm",
       [&](Tape&, const std::vector<Var>& v) { return contract(ops::layer_norm(v[0], v[1], v[2]), s); },
       {random_matrix(r, std::max<std::size_t>(c, 2), rng), random_matrix(1, std::max<std::size_t>(c, 2), rng),
        random_matrix(1, std::max<std::size_t>(c, 2), rng)}},
      {"attention_core",
       [&](Tape&, const std::vector<Var>& v) { return contract(ops::attention_core(v[0], v[1], v[2], 2), s); },
       {random_matrix(r, 4, rng), random_matrix(k, 4, rng), random_matrix(k, 4, rng)}},
      {"concat_slice_mean",
       [&](Tape&, const std::vector<Var>& v) {
         std::vector<Var> parts{v[0], v[1]};
         Var cat = ops::concat_rows(parts);
         return contract(ops::mean_rows(ops::slice_rows(cat, 1, cat.rows() - 1)), s);
       },
       {random_matrix(r, c, rng), random_matrix(k, c, rng)}},
      {"cosine",
       [&](Tape&, const std::vector<Var>& v) {
         return ops::add(ops::cosine_similarity(v[0], v[1]), ops::scale(ops::cosine_distance(v[1], v[0]), 0.3));
       },
       {random_matrix(1, c + 1, rng), random_matrix(1, c + 1, rng)}},
      {"stack_scalars",
       [&](Tape&, const std::vector<Var>& v) {
         std::vector<Var> sc{ops::sum(v[0]), ops::sum(ops::tanh(v[0])), ops::sum(ops::exp(v[0])), ops::sum(v[1])};
         return contract(ops::stack_scalars(sc, 2, 2), s);
       },
       {random_matrix(r, c, rng), random_matrix(r, c, rng)}},
      {"diagonal_cross_entropy",
       [&](Tape&, const std::vector<Var>& v) { return ops::diagonal_cross_entropy(v[0]); },
       {random_matrix(r + 1, r + 1, rng, 2.0)}},
  };
  for (const Case& cs : cases) {
    const auto result = check_inputs(cs.fn, cs.inputs);
    EXPECT_LT(result.max_rel_error, kGradTol) << cs.name << " (" << r << "x" << c << ", k=" << k << ")";
  }
}

INSTANTIATE_TEST_SUITE_P(RandomShapes, OpGradient, ::testing::Range(0, 6));

TEST(OpGradientSparse, EmbeddingLookupsAndWeightedNll) {
  Rng rng(77);
  const Matrix table = random_matrix(7, 5, rng);
  const std::vector<std::pair<std::size_t, double>> bag{{1, 0.5}, {4, 2.0}, {6, 1.0}};
  const std::vector<std::size_t> rows{3, 0, 3, 5};
  Matrix targets(4, 5);
  for (std::size_t i = 0; i < 4; ++i) targets(i, rng.below(5)) = 0.5 + rng.uniform();
  const auto result = check_inputs(
      [&](Tape&, const std::vector<Var>& v) {
        Var a = contract(ops::embedding_bag(v[0], bag), 1);
        Var b = ops::weighted_nll(ops::log_softmax_rows(ops::embedding_rows(v[0], rows)), targets);
        return ops::add(a, b);
      },
      {table});
  EXPECT_LT(result.max_rel_error, kGradTol);
}

TEST(OpGradientSparse, DropoutUsesFixedMask) {
  Rng rng(78);
  const auto result = check_inputs(
      [&](Tape&, const std::vector<Var>& v) { return contract(ops::dropout(v[0], 0.4, 5), 2); },
      {random_matrix(4, 6, rng)});
  EXPECT_LT(result.max_rel_error, kGradTol);
}

TEST(Ops, LogOfNonPositiveIsDegenerate) {
  Tape tape;
  EXPECT_THROW(ops::log(tape.constant(Matrix{{1.0, 0.0}})), DegenerateInputError);
}

TEST(Ops, AllOutputsFiniteOnFiniteInputs) {
  Rng rng(12);
  Tape tape;
  Var x = tape.constant(random_matrix(5, 5, rng, 30.0));
  for (Var y : {ops::softmax_rows(x), ops::log_softmax_rows(x), ops::tanh(x),
                ops::layer_norm(x, tape.constant(Matrix(1, 5, 1.0)), tape.constant(Matrix(1, 5)))}) {
    EXPECT_TRUE(y.value().all_finite());
  }
}
