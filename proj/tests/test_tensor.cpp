#include "dim3d/tensor.hpp"

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace dim3d {
namespace {

using testing::check_gradients;
using testing::uniform_tensor;

// Elementwise triple-loop reference, independent of the library kernel.
std::vector<double> matmul_oracle(const Tensor& a, const Tensor& b) {
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> y(m * n, 0.0);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j)
      for (int64_t l = 0; l < k; ++l)
        y[i * n + j] += a.data()[i * k + l] * b.data()[l * n + j];
  return y;
}

std::vector<double> conv_oracle(const Tensor& x, const Tensor& w) {
  const int64_t L = x.dim(0), E = x.dim(1), k = w.dim(1);
  std::vector<double> y(L * E, 0.0);
  for (int64_t t = 0; t < L; ++t)
    for (int64_t e = 0; e < E; ++e)
      for (int64_t j = 0; j < k; ++j) {
        const int64_t s = t - (k - 1) + j;
        if (s >= 0 && s < L) y[t * E + e] += w.data()[e * k + j] * x.data()[s * E + e];
      }
  return y;
}

Tensor eye(int64_t n) {
  Tensor t = Tensor::zeros({n, n});
  for (int64_t i = 0; i < n; ++i) t.raw()[i * n + i] = 1.0;
  return t;
}

TEST(Matmul, IdentityTimesIdentity) {
  Tensor y = matmul(eye(3), eye(3));
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 3; ++j)
      EXPECT_DOUBLE_EQ(y.at({i, j}), i == j ? 1.0 : 0.0);
}

TEST(Matmul, HandArithmetic) {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({2, 1}, {1, 1});
  Tensor y = matmul(a, b);
  EXPECT_DOUBLE_EQ(y.at({0, 0}), 3.0);
  EXPECT_DOUBLE_EQ(y.at({1, 0}), 7.0);
}

TEST(Matmul, MatchesTripleLoopOracle) {
  Rng rng(42);
  Tensor a = uniform_tensor({4, 5}, rng);
  Tensor b = uniform_tensor({5, 6}, rng);
  Tensor y = matmul(a, b);
  const auto expect = matmul_oracle(a, b);
  for (int64_t i = 0; i < y.numel(); ++i)
    EXPECT_NEAR(y.data()[i], expect[i], 1e-12);
}

TEST(Matmul, BatchedBroadcast) {
  Rng rng(7);
  Tensor a = uniform_tensor({3, 4, 5}, rng);
  Tensor b = uniform_tensor({5, 6}, rng);
  Tensor y = matmul(a, b);
  ASSERT_EQ(y.shape(), (Shape{3, 4, 6}));
  for (int64_t bi = 0; bi < 3; ++bi) {
    Tensor ai = Tensor::from(
        {4, 5}, {a.data().begin() + bi * 20, a.data().begin() + (bi + 1) * 20});
    const auto expect = matmul_oracle(ai, b);
    for (int64_t i = 0; i < 24; ++i)
      EXPECT_NEAR(y.data()[bi * 24 + i], expect[i], 1e-12);
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL() << "expected an exception";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4,2]"), std::string::npos) << msg;
  }
}

TEST(Matmul, AssociativityWithinTolerance) {
  Rng rng(3);
  for (int round = 0; round < 5; ++round) {
    Tensor a = uniform_tensor({9, 32}, rng);
    Tensor b = uniform_tensor({32, 17}, rng);
    Tensor c = uniform_tensor({17, 12}, rng);
    Tensor left = matmul(matmul(a, b), c);
    Tensor right = matmul(a, matmul(b, c));
    for (int64_t i = 0; i < left.numel(); ++i)
      EXPECT_NEAR(left.data()[i], right.data()[i], 1e-10);
  }
}

TEST(Conv1dDepthwise, LastTapIsIdentity) {
  Rng rng(5);
  Tensor x = uniform_tensor({7, 3}, rng);
  Tensor w = Tensor::zeros({3, 4});
  for (int e = 0; e < 3; ++e) w.raw()[e * 4 + 3] = 1.0;
  Tensor y = conv1d_depthwise(x, w);
  for (int64_t i = 0; i < x.numel(); ++i)
    EXPECT_DOUBLE_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv1dDepthwise, ImpulseResponseAllOnes) {
  Tensor x = Tensor::zeros({6, 1});
  x.raw()[0] = 1.0;
  Tensor w = Tensor::full({1, 4}, 1.0);
  Tensor y = conv1d_depthwise(x, w);
  for (int64_t t = 0; t < 6; ++t)
    EXPECT_DOUBLE_EQ(y.at({t, 0}), t < 4 ? 1.0 : 0.0);
}

TEST(Conv1dDepthwise, MatchesDoubleLoopOracle) {
  Rng rng(11);
  Tensor x = uniform_tensor({10, 4}, rng);
  Tensor w = uniform_tensor({4, 3}, rng);
  Tensor y = conv1d_depthwise(x, w);
  const auto expect = conv_oracle(x, w);
  for (int64_t i = 0; i < y.numel(); ++i)
    EXPECT_NEAR(y.data()[i], expect[i], 1e-12);
}

TEST(Conv1dDepthwise, KernelLongerThanSequence) {
  Rng rng(13);
  Tensor x = uniform_tensor({2, 2}, rng);
  Tensor w = uniform_tensor({2, 5}, rng);
  Tensor y = conv1d_depthwise(x, w);
  const auto expect = conv_oracle(x, w);
  for (int64_t i = 0; i < y.numel(); ++i)
    EXPECT_NEAR(y.data()[i], expect[i], 1e-12);
}

TEST(Conv1dDepthwise, RejectsNonPositiveWidth) {
  Tensor x = Tensor::zeros({4, 2});
  EXPECT_THROW(conv1d_depthwise(x, Tensor::zeros({2, 1})), std::exception);
  // k = 0 cannot even be constructed as a tensor extent
  EXPECT_THROW(Tensor::zeros({2, 0}), std::invalid_argument);
}

TEST(Pointwise, ClosedForms) {
  Tensor x = Tensor::from({3}, {0.0, 0.0, 40.0});
  EXPECT_DOUBLE_EQ(silu(x).data()[0], 0.0);
  EXPECT_NEAR(softplus(x).data()[1], std::log(2.0), 1e-15);
  EXPECT_NEAR(softplus(x).data()[2], 40.0, 1e-12);  // no overflow
  EXPECT_DOUBLE_EQ(exp(Tensor::scalar(0.0)).item(), 1.0);
}

TEST(Layernorm, ConstantRowGoesToZero) {
  Tensor x = Tensor::full({2, 5}, 3.7);
  Tensor y = layernorm(x, Tensor::full({5}, 1.0), Tensor::zeros({5}));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Layernorm, RowMomentsNormalized) {
  Rng rng(17);
  Tensor x = uniform_tensor({6, 32}, rng);
  Tensor y = layernorm(x, Tensor::full({32}, 1.0), Tensor::zeros({32}));
  for (int64_t r = 0; r < 6; ++r) {
    double mean = 0.0, var = 0.0;
    for (int64_t j = 0; j < 32; ++j) mean += y.at({r, j});
    mean /= 32;
    for (int64_t j = 0; j < 32; ++j) {
      const double d = y.at({r, j}) - mean;
      var += d * d;
    }
    var /= 32;
    EXPECT_LT(std::abs(mean), 1e-12);
    EXPECT_LT(std::abs(var - 1.0), 1e-6);
  }
}

TEST(Backward, SumGivesOnes) {
  Rng rng(19);
  Tensor x = uniform_tensor({4, 3}, rng);
  x.set_requires_grad(true);
  Tensor loss = sum_all(x);
  backward(loss);
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Backward, QuadraticGivesTwoX) {
  Rng rng(23);
  Tensor x = uniform_tensor({5}, rng);
  x.set_requires_grad(true);
  Tensor loss = sum_all(mul(x, x));
  backward(loss);
  for (int64_t i = 0; i < 5; ++i)
    EXPECT_NEAR(x.grad()[i], 2.0 * x.data()[i], 1e-14);
}

TEST(Backward, RejectsNonScalarLoss) {
  Tensor x = Tensor::zeros({2, 2});
  x.set_requires_grad(true);
  Tensor y = scale(x, 2.0);
  EXPECT_THROW(backward(y), std::invalid_argument);
}

TEST(Backward, TapeConsumedAfterBackward) {
  Rng rng(29);
  Tensor x = uniform_tensor({3}, rng);
  x.set_requires_grad(true);
  Tensor loss = sum_all(mul(x, x));
  EXPECT_GT(Tape::active().size(), 0u);
  backward(loss);
  EXPECT_EQ(Tape::active().size(), 0u);
}

TEST(NoGrad, DisablesRecording) {
  Rng rng(31);
  Tensor x = uniform_tensor({3}, rng);
  x.set_requires_grad(true);
  {
    NoGradGuard guard;
    Tensor y = mul(x, x);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_EQ(Tape::active().size(), 0u);
}

// Finite-difference check of every registered operation.

TEST(GradCheck, Matmul) {
  Rng rng(101);
  Tensor a = uniform_tensor({3, 4}, rng);
  Tensor b = uniform_tensor({4, 5}, rng);
  check_gradients([&]() { return matmul(a, b); }, {a, b}, 1);
}

TEST(GradCheck, MatmulBatched) {
  Rng rng(102);
  Tensor a = uniform_tensor({2, 3, 4}, rng);
  Tensor b = uniform_tensor({2, 4, 2}, rng);
  check_gradients([&]() { return matmul(a, b); }, {a, b}, 2);
}

TEST(GradCheck, Conv1dDepthwise) {
  Rng rng(103);
  Tensor x = uniform_tensor({6, 3}, rng);
  Tensor w = uniform_tensor({3, 4}, rng);
  check_gradients([&]() { return conv1d_depthwise(x, w); }, {x, w}, 3);
}

TEST(GradCheck, PointwiseSuite) {
  Rng rng(104);
  Tensor x = uniform_tensor({4, 5}, rng);
  check_gradients([&]() { return silu(x); }, {x}, 4);
  check_gradients([&]() { return softplus(x); }, {x}, 5);
  check_gradients([&]() { return exp(x); }, {x}, 6);
}

TEST(GradCheck, Layernorm) {
  Rng rng(105);
  Tensor x = uniform_tensor({4, 6}, rng);
  Tensor g = uniform_tensor({6}, rng);
  Tensor b = uniform_tensor({6}, rng);
  check_gradients([&]() { return layernorm(x, g, b); }, {x, g, b}, 7, 1e-5,
                  1e-5, 1e-8);
}

TEST(GradCheck, ElementwiseAndStructural) {
  Rng rng(106);
  Tensor a = uniform_tensor({4, 3}, rng);
  Tensor b = uniform_tensor({4, 3}, rng);
  Tensor bias = uniform_tensor({3}, rng);
  Tensor col = uniform_tensor({4, 1}, rng);
  check_gradients([&]() { return add(a, b); }, {a, b}, 8);
  check_gradients([&]() { return sub(a, b); }, {a, b}, 9);
  check_gradients([&]() { return mul(a, b); }, {a, b}, 10);
  check_gradients([&]() { return scale(a, -2.5); }, {a}, 11);
  check_gradients([&]() { return add_bias(a, bias); }, {a, bias}, 12);
  check_gradients([&]() { return broadcast_add(col, bias); }, {col, bias}, 13);
  check_gradients([&]() { return reverse_rows(a); }, {a}, 14);
  check_gradients([&]() { return concat_rows(a, b); }, {a, b}, 15);
  check_gradients([&]() { return slice_rows(a, 1, 2); }, {a}, 16);
  check_gradients([&]() { return mean_all(mul(a, a)); }, {a}, 17);
  check_gradients([&]() { return reshape(a, {3, 4}); }, {a}, 18);
}

TEST(GradCheck, GatherFlat) {
  Rng rng(107);
  Tensor x = uniform_tensor({6}, rng);
  auto idx = std::make_shared<std::vector<int64_t>>(
      std::vector<int64_t>{5, 0, 3, 3, 1});
  check_gradients([&]() { return gather_flat(x, idx, {5}); }, {x}, 19);
}

TEST(Tensor, InvariantsAfterOps) {
  Rng rng(203);
  Tensor a = uniform_tensor({8, 8}, rng);
  Tensor b = uniform_tensor({8, 8}, rng);
  testing::expect_all_finite(matmul(a, b));
  testing::expect_all_finite(layernorm(a, Tensor::full({8}, 1.0),
                                       Tensor::zeros({8})));
  testing::expect_all_finite(softplus(scale(a, 500.0)));
  EXPECT_EQ(shape_numel(a.shape()), static_cast<int64_t>(a.data().size()));
}

}  // namespace
}  // namespace dim3d
