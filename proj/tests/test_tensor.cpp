#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "muan/autograd.hpp"
#include "support.hpp"

using namespace muan;
using muan::test::random_tensor;

namespace {

Tensor triple_loop(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < a.cols(); ++t) s += a.at(i, t) * b.at(t, j);
      c.at(i, j) = s;
    }
  return c;
}

}  // namespace

TEST(Tensor, DataLengthMustMatchShape) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_THROW(t.reshaped({4}), DimensionError);
  EXPECT_EQ(t.reshaped({3, 2}).rows(), 3u);
}

TEST(Matmul, IdentityTimesB) {
  Tensor b = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  EXPECT_TRUE(bitwise_equal(kernels::matmul(eye, b), b));
}

TEST(Matmul, ZerosTimesB) {
  RngStream rng(1);
  Tensor b = random_tensor({4, 5}, rng);
  Tensor c = kernels::matmul(Tensor({3, 4}), b);
  for (double v : c.values()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, MatchesTripleLoop) {
  RngStream rng(2);
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  EXPECT_LE(max_abs_diff(kernels::matmul(a, b), triple_loop(a, b)), 1e-12);
}

TEST(Matmul, MatchesTripleLoopAcrossTileEdges) {
  RngStream rng(3);
  for (std::size_t m : {1, 3, 4, 5, 9})
    for (std::size_t k : {1, 7, 16})
      for (std::size_t n : {1, 7, 8, 9, 17, 33}) {
        Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
        EXPECT_LE(max_abs_diff(kernels::matmul(a, b), triple_loop(a, b)), 1e-12) << m << "x" << k << "x" << n;
      }
}

TEST(Matmul, RowResultsIndependentOfRowPosition) {
  RngStream rng(4);
  Tensor a = random_tensor({9, 13}, rng), b = random_tensor({13, 11}, rng);
  Tensor c = kernels::matmul(a, b);
  // Move row 0 to every other position; its product row must not change a bit.
  for (std::size_t pos = 1; pos < 9; ++pos) {
    Tensor p = a;
    std::copy(a.row(0).begin(), a.row(0).end(), p.row(pos).begin());
    std::copy(a.row(pos).begin(), a.row(pos).end(), p.row(0).begin());
    Tensor cp = kernels::matmul(p, b);
    for (std::size_t j = 0; j < 11; ++j) EXPECT_EQ(cp.at(pos, j), c.at(0, j));
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape tape;
  Var a = tape.leaf(Tensor({2, 3})), b = tape.leaf(Tensor({4, 2}));
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x2]"), std::string::npos) << msg;
  }
}

TEST(Softmax, SymmetricPair) {
  Tensor y = kernels::softmax_rows(Tensor::matrix(1, 2, {0, 0}), Tensor({1, 2}));
  EXPECT_EQ(y[0], 0.5);
  EXPECT_EQ(y[1], 0.5);
}

TEST(Softmax, SingleSurvivor) {
  Tensor y = kernels::softmax_rows(Tensor::matrix(1, 2, {5, 7}), Tensor::matrix(1, 2, {0, -1e9}));
  EXPECT_EQ(y[0], 1.0);
  EXPECT_EQ(y[1], 0.0);
}

TEST(Softmax, MatchesLongDoubleOracle) {
  Tensor y = kernels::softmax_rows(Tensor::matrix(1, 3, {1, 2, 3}), Tensor({1, 3}));
  long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y[i], static_cast<double>(std::exp(static_cast<long double>(i + 1)) / z), 1e-12);
}

TEST(Softmax, AllMaskedRowIsDegenerate) {
  Tensor mask = Tensor::matrix(2, 2, {0, -1e9, -1e9, -1e9});
  EXPECT_THROW(kernels::softmax_rows(Tensor({2, 2}), mask), DegenerateRowError);
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  Tape tape;
  Var x = tape.constant(Tensor::matrix(1, 4, {3, 3, 3, 3}));
  Var y = layer_norm(x, tape.constant(Tensor({4}, 1.0)), tape.constant(Tensor({4})));
  for (double v : y.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, NormalizedRowUnchangedUpToEps) {
  Tape tape;
  Var y = layer_norm(tape.constant(Tensor::matrix(1, 2, {1, -1})), tape.constant(Tensor({2}, 1.0)),
                     tape.constant(Tensor({2})), 1e-6);
  EXPECT_NEAR(y.value()[0], 1.0, 1e-6);
  EXPECT_NEAR(y.value()[1], -1.0, 1e-6);
}

TEST(LayerNorm, RandomRowHasZeroMeanUnitVariance) {
  RngStream rng(5);
  Tape tape;
  Var y = layer_norm(tape.constant(random_tensor({3, 32}, rng, -4, 9)), tape.constant(Tensor({32}, 1.0)),
                     tape.constant(Tensor({32})));
  for (std::size_t i = 0; i < 3; ++i) {
    auto r = y.value().row(i);
    const double mu = std::accumulate(r.begin(), r.end(), 0.0) / 32.0;
    double var = 0.0;
    for (double v : r) var += (v - mu) * (v - mu);
    EXPECT_LT(std::abs(mu), 1e-12);
    EXPECT_NEAR(var / 32.0, 1.0, 1e-6);
  }
}
