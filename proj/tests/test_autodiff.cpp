#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "gridlearn/autodiff.hpp"
#include "gridlearn/error.hpp"

using namespace gridlearn;
using namespace gridlearn::ad;
using namespace gridlearn::testing;

TEST(Autodiff, ReluForward) {
  EXPECT_EQ(relu(Tensor::constant({2}, {-1.0, 2.0})).values(), (std::vector<double>{0.0, 2.0}));
}

TEST(Autodiff, IdentityMatmul) {
  const auto eye = Tensor::constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const auto v = Tensor::constant({3, 1}, {0.5, -2.0, 7.0});
  EXPECT_EQ(matmul(eye, v).values(), v.values());
}

TEST(Autodiff, SoftmaxLn2) {
  const auto s = softmax(Tensor::constant({3}, {std::log(2.0), 0.0, 0.0})).values();
  EXPECT_NEAR(s[0], 0.5, 1e-15);
  EXPECT_NEAR(s[1], 0.25, 1e-15);
  EXPECT_NEAR(s[2], 0.25, 1e-15);
}

TEST(Autodiff, SquareGradient) {
  auto x = Tensor::parameter({1}, {3.0});
  backward(sum(square(x)));
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Autodiff, LinearFormGradient) {
  auto w = Tensor::parameter({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto x = Tensor::constant({3, 1}, {0.5, -1.0, 2.0});
  backward(sum(matmul(w, x)));
  EXPECT_EQ(w.grad(), (std::vector<double>{0.5, -1.0, 2.0, 0.5, -1.0, 2.0}));
}

TEST(Autodiff, ReluKinkConvention) {
  auto x = Tensor::parameter({3}, {-1.0, 0.0, 2.0});
  backward(sum(relu(x)));
  EXPECT_EQ(x.grad(), (std::vector<double>{0.0, 0.0, 1.0}));
}

TEST(Autodiff, MaxpoolRoutesToFirstMaximum) {
  auto x = Tensor::parameter({1, 1, 4}, {2.0, 2.0, 1.0, 3.0});
  const auto y = maxpool1d(x, 2, 2);
  EXPECT_EQ(y.values(), (std::vector<double>{2.0, 3.0}));
  backward(sum(y));
  EXPECT_EQ(x.grad(), (std::vector<double>{1.0, 0.0, 0.0, 1.0}));
}

TEST(Autodiff, LogClampedBelowFloor) {
  auto x = Tensor::parameter({2}, {1e-20, 2.0});
  const auto y = log_clamped(x, 1e-12);
  EXPECT_DOUBLE_EQ(y.values()[0], std::log(1e-12));
  backward(sum(y));
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 0.5);
}

TEST(Autodiff, StraightThrough) {
  auto a = Tensor::parameter({1, 3}, {0.2, -0.1, 0.4});
  const auto soft = softmax(a);
  const auto hard = Tensor::constant({1, 3}, {0.0, 0.0, 1.0});
  const auto st = straight_through(hard, soft);
  EXPECT_EQ(st.values(), hard.values());
  backward(sum(mul(st, Tensor::constant({1, 3}, {1.0, 2.0, 3.0}))));
  auto b = Tensor::parameter({1, 3}, {0.2, -0.1, 0.4});
  backward(sum(mul(softmax(b), Tensor::constant({1, 3}, {1.0, 2.0, 3.0}))));
  EXPECT_EQ(a.grad(), b.grad());
}

TEST(Autodiff, LowerTriangular) {
  const auto l = lower_triangular(Tensor::constant({6}, {1, 2, 3, 4, 5, 6}), 3);
  EXPECT_EQ(l.values(), (std::vector<double>{1, 0, 0, 2, 3, 0, 4, 5, 6}));
}

TEST(Autodiff, Conv1dMatchesLoopOracle) {
  Rng rng(5);
  const auto x = Tensor::constant({2, 3, 10}, uniform_values(rng, 60));
  const auto w = Tensor::constant({4, 3, 3}, uniform_values(rng, 36));
  const auto b = Tensor::constant({4}, uniform_values(rng, 4));
  for (std::size_t stride : {1u, 2u}) {
    const auto y = conv1d(x, w, b, stride);
    const std::size_t len = (10 - 3) / stride + 1;
    ASSERT_EQ(y.shape(), (Shape{2, 4, len}));
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t o = 0; o < 4; ++o)
        for (std::size_t t = 0; t < len; ++t) {
          double acc = b.values()[o];
          for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t k = 0; k < 3; ++k)
              acc += w.values()[(o * 3 + c) * 3 + k] * x.values()[(n * 3 + c) * 10 + t * stride + k];
          EXPECT_NEAR(y.values()[(n * 4 + o) * len + t], acc, 1e-14);
        }
  }
}

TEST(Autodiff, ShapeErrorsNameTheOp) {
  const auto a = Tensor::constant({2, 3}, std::vector<double>(6, 1.0));
  const auto b = Tensor::constant({3, 2}, std::vector<double>(6, 1.0));
  try {
    add(a, b);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("add"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos);
  }
  EXPECT_THROW(matmul(a, a), ShapeError);
  EXPECT_THROW(backward(a), ShapeError);
}

TEST(Autodiff, LeafGradientsAccumulate) {
  auto x = Tensor::parameter({1}, {2.0});
  backward(sum(square(x)));
  backward(sum(square(x)));
  EXPECT_EQ(x.grad()[0], 8.0);
  x.zero_grad();
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Autodiff, InteriorGradientsResetPerPass) {
  auto x = Tensor::parameter({1}, {2.0});
  const auto h = scale(x, 3.0);
  const auto loss = sum(square(h));
  backward(loss);
  backward(loss);
  EXPECT_EQ(x.grad()[0], 2.0 * 36.0);
}

TEST(Autodiff, SharedSubexpression) {
  auto x = Tensor::parameter({1}, {1.5});
  const auto h = sin(x);
  backward(sum(mul(h, h)));
  EXPECT_NEAR(x.grad()[0], 2.0 * std::sin(1.5) * std::cos(1.5), 1e-15);
}

TEST(Autodiff, BackwardIsLinear) {
  Rng rng(2);
  auto w = random_param(rng, {3, 3});
  const auto x = Tensor::constant({3, 2}, uniform_values(rng, 6));
  auto f = [&] { return sum(tanh(matmul(w, x))); };
  auto g = [&] { return sum(square(matmul(w, x))); };
  backward(f());
  const auto gf = w.grad();
  w.zero_grad();
  backward(g());
  const auto gg = w.grad();
  w.zero_grad();
  backward(add(scale(f(), 2.0), scale(g(), -0.5)));
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(w.grad()[i], 2.0 * gf[i] - 0.5 * gg[i], 1e-14);
}

TEST(Autodiff, ForwardIsPure) {
  Rng rng(3);
  const auto a = Tensor::constant({4, 5}, uniform_values(rng, 20));
  const auto b = Tensor::constant({5, 3}, uniform_values(rng, 15));
  EXPECT_EQ(softmax(matmul(a, b)).values(), softmax(matmul(a, b)).values());
}

TEST(GradCheck, QuadraticForm) {
  Rng rng(4);
  auto x = random_param(rng, {4, 1});
  const auto q = Tensor::constant({4, 4}, uniform_values(rng, 16));
  const double err = grad_check([&] { return sum(mul(x, matmul(q, x))); }, {x}, 1e-5);
  EXPECT_LT(err, 1e-7);
}

TEST(GradCheck, TwoLayerTanhNetwork) {
  Rng rng(6);
  auto w1 = random_param(rng, {3, 5});
  auto w2 = random_param(rng, {5, 2});
  const auto x = Tensor::constant({4, 3}, uniform_values(rng, 12));
  EXPECT_LT(grad_check([&] { return sum(square(matmul(tanh(matmul(x, w1)), w2))); }, {w1, w2}), 1e-5);
}

TEST(GradCheck, ConstantFunction) {
  auto x = Tensor::parameter({3}, {1.0, 2.0, 3.0});
  EXPECT_EQ(grad_check([&] { return sum(scale(x, 0.0)); }, {x}), 0.0);
}

TEST(GradCheck, RestoresValuesAndRejectsBadStep) {
  auto x = Tensor::parameter({2}, {0.3, 0.7});
  grad_check([&] { return sum(exp(x)); }, {x});
  EXPECT_EQ(x.values(), (std::vector<double>{0.3, 0.7}));
  EXPECT_EQ(x.grad(), (std::vector<double>{0.0, 0.0}));
  EXPECT_THROW(grad_check([&] { return sum(x); }, {x}, 1e-2), ConfigError);
}

TEST(GradCheck, KinkOpsAwayFromKinks) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    auto a = Tensor::parameter({3, 4}, nonzero_values(rng, 12, 1e-2, 2.0));
    EXPECT_LT(grad_check([&] { return weighted_sum(relu(a), seed); }, {a}), 1e-5);
    auto p = Tensor::parameter({3, 4}, uniform_values(rng, 12, 0.05, 2.0));
    EXPECT_LT(grad_check([&] { return weighted_sum(log_clamped(p, 1e-12), seed); }, {p}), 1e-5);
  }
}
