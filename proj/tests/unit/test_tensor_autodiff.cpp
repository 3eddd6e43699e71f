#include <gtest/gtest.h>

#include <cstdint>
#include <cstring>
#include <random>

#include "motion3d/autodiff.hpp"
#include "motion3d/gradcheck.hpp"
#include "oracles.hpp"

namespace m3 = motion3d;
using m3::Shape;
using m3::Tape;
using m3::Tensor;
using m3::Var;

namespace {

Tensor<double> random_tensor(Shape s, std::uint64_t seed) {
  return Tensor<double>(s, m3::SeededNormal{seed, 1.0});
}

}  // namespace

TEST(Tensor, ConstantFills) {
  Tensor<float> z(Shape{1, 1, 1, 1, 1}, 0.0f);
  ASSERT_EQ(z.numel(), 1);
  EXPECT_EQ(z[0], 0.0f);

  Tensor<float> ones(Shape{2, 3}, 1.0f);
  ASSERT_EQ(ones.numel(), 6);
  for (float v : ones.data()) EXPECT_EQ(v, 1.0f);
}

TEST(Tensor, NonPositiveExtentIsRejected) {
  EXPECT_THROW(Shape({2, 0, 3}), m3::ShapeError);
  EXPECT_THROW(Shape({-1}), m3::ShapeError);
  EXPECT_THROW(Shape({1, 1, 1, 1, 1, 1}), m3::ShapeError);
}

TEST(Tensor, SeededNormalIsReproducible) {
  const auto spec = m3::SeededNormal::he(7, 2);
  Tensor<float> a(Shape{2, 2}, spec), b(Shape{2, 2}, spec);
  EXPECT_EQ(std::memcmp(a.ptr(), b.ptr(), sizeof(float) * 4), 0);
  Tensor<float> c(Shape{2, 2}, m3::SeededNormal::he(8, 2));
  EXPECT_FALSE(a == c);
}

TEST(Tensor, DataLengthMustMatchShape) {
  EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>(3)), m3::ShapeError);
  EXPECT_THROW(Tensor<float>(Shape{2}).reshaped(Shape{3}), m3::ShapeError);
}

// Run-to-run reproducibility of Eigen kernels depends on this.
TEST(Tensor, StorageIs64ByteAligned) {
  for (m3::Index n : {1, 3, 17, 1000}) {
    const Tensor<float> a(Shape{n});
    const Tensor<double> b(Shape{n}, std::vector<double>(static_cast<std::size_t>(n)));
    EXPECT_EQ(reinterpret_cast<std::uintptr_t>(a.ptr()) % 64, 0u) << n;
    EXPECT_EQ(reinterpret_cast<std::uintptr_t>(b.ptr()) % 64, 0u) << n;
  }
}

TEST(Relu, SignCases) {
  Tape<double> t;
  Var<double> x = t.leaf(Tensor<double>(Shape{3}, std::vector<double>{-1, 0, 2}));
  Var<double> y = m3::relu(x);
  EXPECT_EQ(y.value()[0], 0.0);
  EXPECT_EQ(y.value()[1], 0.0);
  EXPECT_EQ(y.value()[2], 2.0);
  t.backward(m3::sum(y));
  EXPECT_EQ(t.grad(x)[0], 0.0);
  EXPECT_EQ(t.grad(x)[1], 0.0);  // subgradient at exactly zero
  EXPECT_EQ(t.grad(x)[2], 1.0);
}

TEST(Relu, AllNegativeGivesZeroOutputAndGradient) {
  Tape<double> t;
  Var<double> x = t.leaf(Tensor<double>(Shape{2, 3}, -0.5));
  Var<double> y = m3::relu(x);
  t.backward(m3::sum(y));
  for (double v : y.value().data()) EXPECT_EQ(v, 0.0);
  for (double v : t.grad(x).data()) EXPECT_EQ(v, 0.0);
}

TEST(Relu, GradCheckOnRandomShapes) {
  const Shape shapes[] = {{2, 3, 4}, {5}, {3, 3}, {1, 2, 2, 2, 2}, {7, 1}};
  std::uint64_t seed = 1;
  for (const Shape& s : shapes) {
    auto f = [](Tape<double>&, const Var<double>& x) { return m3::half_squared_norm(m3::relu(x)); };
    EXPECT_LT(m3::grad_check(f, random_tensor(s, seed++), 1e-6), 1e-4) << s.str();
  }
}

TEST(Linear, IdentityWeightsAndZeroInput) {
  Tape<double> t;
  Tensor<double> eye(Shape{3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1;
  const Tensor<double> x = random_tensor(Shape{2, 3}, 3);
  Var<double> y = m3::linear(t.constant(x), t.constant(eye), t.constant(Tensor<double>(Shape{3})));
  EXPECT_EQ(y.value(), x);

  const Tensor<double> b(Shape{3}, std::vector<double>{1, -2, 3});
  Var<double> z = m3::linear(t.constant(Tensor<double>(Shape{4, 3})), t.constant(eye), t.constant(b));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_EQ(z.value().at(i, j), b[j]);
}

TEST(Linear, MatchesLoopOracle) {
  const auto x = random_tensor(Shape{3, 5}, 10);
  const auto w = random_tensor(Shape{4, 5}, 11);
  const auto b = random_tensor(Shape{4}, 12);
  Tape<double> t;
  Var<double> y = m3::linear(t.constant(x), t.constant(w), t.constant(b));
  const auto ref = m3::oracle::linear(x, w, b);
  for (m3::Index i = 0; i < ref.numel(); ++i) EXPECT_NEAR(y.value()[i], ref[i], 1e-6);
}

TEST(Linear, DimensionMismatchNamesBothShapes) {
  Tape<double> t;
  try {
    m3::linear(t.constant(Tensor<double>(Shape{2, 3})), t.constant(Tensor<double>(Shape{4, 5})),
               t.constant(Tensor<double>(Shape{4})));
    FAIL();
  } catch (const m3::ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("(2,3)"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("(4,5)"), std::string::npos);
  }
}

TEST(Linear, GradCheckAllOperands) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const m3::Index n = 1 + s, din = 2 + s, dout = 3 + (s % 2);
    const auto x = random_tensor(Shape{n, din}, 100 + s);
    const auto w = random_tensor(Shape{dout, din}, 200 + s);
    const auto b = random_tensor(Shape{dout}, 300 + s);
    auto wrt_x = [&](Tape<double>& t, const Var<double>& v) {
      return m3::half_squared_norm(m3::linear(v, t.constant(w), t.constant(b)));
    };
    auto wrt_w = [&](Tape<double>& t, const Var<double>& v) {
      return m3::half_squared_norm(m3::linear(t.constant(x), v, t.constant(b)));
    };
    auto wrt_b = [&](Tape<double>& t, const Var<double>& v) {
      return m3::half_squared_norm(m3::linear(t.constant(x), t.constant(w), v));
    };
    EXPECT_LT(m3::grad_check(wrt_x, x), 1e-4);
    EXPECT_LT(m3::grad_check(wrt_w, w), 1e-4);
    EXPECT_LT(m3::grad_check(wrt_b, b), 1e-4);
  }
}

TEST(ChannelConcat, FullScaleFeatureWidth) {
  Tape<float> t;
  Var<float> a = t.constant(Tensor<float>(Shape{1, 2048}, 1.0f));
  Var<float> b = t.constant(Tensor<float>(Shape{1, 2048}, 2.0f));
  EXPECT_EQ(m3::channel_concat(a, b).shape(), Shape({1, 4096}));
}

TEST(ChannelConcat, MinimalCaseKeepsOrder) {
  Tape<double> t;
  Var<double> c = m3::channel_concat(t.constant(Tensor<double>(Shape{1, 1}, 3.0)),
                                     t.constant(Tensor<double>(Shape{1, 1}, 4.0)));
  ASSERT_EQ(c.shape(), Shape({1, 2}));
  EXPECT_EQ(c.value()[0], 3.0);
  EXPECT_EQ(c.value()[1], 4.0);
}

TEST(ChannelConcat, SumGradientIsAllOnes) {
  Tape<double> t;
  Var<double> a = t.leaf(random_tensor(Shape{2, 3, 2}, 1));
  Var<double> b = t.leaf(random_tensor(Shape{2, 1, 2}, 2));
  Var<double> c = m3::channel_concat(a, b);
  EXPECT_EQ(c.shape(), Shape({2, 4, 2}));
  EXPECT_EQ(c.value().at(1, 3, 1), b.value().at(1, 0, 1));
  t.backward(m3::sum(c));
  for (double v : t.grad(a).data()) EXPECT_EQ(v, 1.0);
  for (double v : t.grad(b).data()) EXPECT_EQ(v, 1.0);
}

TEST(ChannelConcat, NonChannelMismatchIsShapeError) {
  Tape<double> t;
  EXPECT_THROW(m3::channel_concat(t.constant(Tensor<double>(Shape{2, 3})),
                                  t.constant(Tensor<double>(Shape{3, 3}))),
               m3::ShapeError);
}

TEST(ChannelConcat, GradCheck) {
  const Shape shapes[] = {{1, 2}, {2, 3, 4}, {3, 1, 2, 2}, {2, 2, 1, 2, 3}, {4, 5}};
  std::uint64_t seed = 40;
  for (const Shape& s : shapes) {
    const auto other = random_tensor(s.with(1, s[1] + 1), seed + 1000);
    auto f = [&](Tape<double>& t, const Var<double>& v) {
      return m3::half_squared_norm(m3::channel_concat(t.constant(other), v));
    };
    EXPECT_LT(m3::grad_check(f, random_tensor(s, seed++)), 1e-4);
  }
}

TEST(Backward, SumGivesOnes) {
  Tape<double> t;
  Var<double> x = t.leaf(random_tensor(Shape{4, 2}, 5));
  t.backward(m3::sum(x));
  for (double v : t.grad(x).data()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, NonScalarLossIsContractViolation) {
  Tape<double> t;
  Var<double> x = t.leaf(random_tensor(Shape{2}, 5));
  EXPECT_THROW(t.backward(x), m3::ContractError);
}

TEST(Backward, FanOutAccumulates) {
  Tape<double> t;
  Var<double> x = t.leaf(random_tensor(Shape{3}, 9));
  t.backward(m3::sum(m3::add(x, x)));
  for (double v : t.grad(x).data()) EXPECT_EQ(v, 2.0);
}

TEST(Backward, LinearInLossScale) {
  const auto x0 = random_tensor(Shape{3, 4}, 21);
  const auto w0 = random_tensor(Shape{2, 4}, 22);
  auto grad_for = [&](double alpha) {
    m3::Parameter<double> w("w", w0);
    Tape<double> t;
    Var<double> y = m3::relu(m3::linear(t.constant(x0), t.param(w), t.constant(Tensor<double>(Shape{2}))));
    t.backward(m3::scale(m3::half_squared_norm(y), alpha));
    return w.grad;
  };
  const auto g1 = grad_for(1.0), g3 = grad_for(3.0);
  for (m3::Index i = 0; i < g1.numel(); ++i) EXPECT_NEAR(g3[i], 3.0 * g1[i], 1e-12);
}

TEST(Backward, UnreachableParameterGetsZeroGradient) {
  m3::Parameter<double> used("used", random_tensor(Shape{2}, 1));
  m3::Parameter<double> unused("unused", random_tensor(Shape{2}, 2));
  unused.grad.fill(42.0);
  Tape<double> t;
  Var<double> u = t.param(used);
  t.param(unused);
  t.backward(m3::sum(u));
  for (double v : used.grad.data()) EXPECT_EQ(v, 1.0);
  for (double v : unused.grad.data()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, SharedParameterBindsOnce) {
  m3::Parameter<double> p("p", random_tensor(Shape{3}, 1));
  Tape<double> t;
  Var<double> a = t.param(p);
  Var<double> b = t.param(p);
  EXPECT_EQ(a.id(), b.id());
  t.backward(m3::add(m3::sum(a), m3::sum(b)));
  for (double v : p.grad.data()) EXPECT_EQ(v, 2.0);
}

TEST(Backward, NonRecordingTapeRefusesBackward) {
  Tape<double> t(false);
  Var<double> x = t.leaf(Tensor<double>(Shape{2}, 1.0));
  EXPECT_FALSE(t.requires_grad(x.id()));
  EXPECT_THROW(t.backward(m3::sum(x)), m3::ContractError);
}

TEST(GradCheck, SumIsExact) {
  auto f = [](Tape<double>&, const Var<double>& x) { return m3::sum(x); };
  EXPECT_LE(m3::grad_check(f, random_tensor(Shape{3, 4}, 77), 1e-3), 1e-10);
}

TEST(GradCheck, HalfSquaredNorm) {
  const auto x = random_tensor(Shape{5, 3}, 78);
  Tape<double> t;
  Var<double> v = t.leaf(x);
  t.backward(m3::half_squared_norm(v));
  EXPECT_EQ(t.grad(v), x);
  auto f = [](Tape<double>&, const Var<double>& v) { return m3::half_squared_norm(v); };
  EXPECT_LT(m3::grad_check(f, x), 1e-6);
}

TEST(GradCheck, RejectsNonScalarAndBadEps) {
  auto vec = [](Tape<double>&, const Var<double>& x) { return m3::relu(x); };
  EXPECT_THROW(m3::grad_check(vec, Tensor<double>(Shape{2}, 1.0)), m3::ContractError);
  auto f = [](Tape<double>&, const Var<double>& x) { return m3::sum(x); };
  EXPECT_THROW(m3::grad_check(f, Tensor<double>(Shape{2}, 1.0), 1e-2), m3::ContractError);
  EXPECT_THROW(m3::grad_check(f, Tensor<double>(Shape{2}, 1.0), 1e-9), m3::ContractError);
}

TEST(Determinism, RepeatedForwardBackwardIsBitwiseIdentical) {
  auto run = [] {
    m3::Parameter<float> w("w", Tensor<float>(Shape{6, 8}, m3::SeededNormal::he(5, 8)));
    m3::Parameter<float> b("b", Tensor<float>(Shape{6}));
    Tape<float> t;
    const Tensor<float> x(Shape{4, 8}, m3::SeededUniform{9, -1, 1});
    Var<float> y = m3::relu(m3::linear(t.constant(x), t.param(w), t.param(b)));
    Var<float> l = m3::half_squared_norm(y);
    t.backward(l);
    return std::make_pair(l.value()[0], w.grad);
  };
  const auto a = run(), b = run();
  EXPECT_EQ(std::memcmp(&a.first, &b.first, sizeof(float)), 0);
  EXPECT_EQ(a.second, b.second);
}
