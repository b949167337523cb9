#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "litmas/errors.hpp"
#include "litmas/numgrad.hpp"
#include "suites.hpp"

using namespace litmas;
namespace ng = litmas::ng;

namespace {

void expect_tensor(const Tensor& t, std::vector<double> want, double tol = 0.0) {
  ASSERT_EQ(t.numel(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(t[i], want[i], tol) << "at " << i;
}

}  // namespace

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  Tensor t({2, 3});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(Tensor().numel(), 1u);
}

TEST(Matmul, IdentityAndSelector) {
  ng::Tape tape;
  auto i2 = tape.constant(Tensor::matrix({{1, 0}, {0, 1}}));
  auto m = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  expect_tensor(ng::matmul(i2, m).tensor(), {1, 2, 3, 4});
  auto sel = ng::matmul(tape.constant(Tensor::matrix({{1, 0}})),
                        tape.constant(Tensor::matrix({{2}, {5}})));
  EXPECT_EQ(sel.shape(), (Shape{1, 1}));
  EXPECT_EQ(sel.tensor()[0], 2.0);
}

TEST(Matmul, GradOfSumMatchesFiniteDifference) {
  const Tensor a = Tensor::matrix({{1, 2}}), b = Tensor::matrix({{3}, {4}});
  ng::Tape tape;
  auto A = tape.leaf(a);
  tape.backward(ng::sum(ng::matmul(A, tape.constant(b))));
  expect_tensor(A.grad(), {3, 4}, 1e-12);
  const double rel = oracle::gradcheck({a, b}, [](ng::Tape&, const std::vector<ng::Value>& x) {
    return ng::sum(ng::matmul(x[0], x[1]));
  });
  EXPECT_LT(rel, 1e-4);
}

TEST(Matmul, InnerDimensionMismatch) {
  ng::Tape tape;
  EXPECT_THROW(ng::matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2, 3}))),
               DimensionError);
}

TEST(Relu, ForwardAndSubgradient) {
  ng::Tape tape;
  auto x = tape.leaf(Tensor::vector({-1, 0, 2}));
  auto y = ng::relu(x);
  expect_tensor(y.tensor(), {0, 0, 2});
  tape.backward(ng::sum(y));
  expect_tensor(x.grad(), {0, 0, 1});
}

TEST(Relu, IndicatorGradient) {
  ng::Tape tape;
  auto x = tape.leaf(Tensor::vector({-1, 2}));
  tape.backward(ng::sum(ng::relu(x)));
  expect_tensor(x.grad(), {0, 1});
}

TEST(Relu, UpstreamGradientPassesThrough) {
  ng::Tape tape;
  auto x = tape.leaf(Tensor::vector({3.5}));
  tape.backward(ng::sum(ng::scale(ng::relu(x), 2.0)));
  expect_tensor(x.grad(), {2.0}, 1e-12);
  const double rel = oracle::gradcheck({Tensor::vector({3.5})},
                                       [](ng::Tape&, const std::vector<ng::Value>& v) {
                                         return ng::sum(ng::scale(ng::relu(v[0]), 2.0));
                                       });
  EXPECT_LT(rel, 1e-4);
}

TEST(LogSoftmax, Examples) {
  ng::Tape tape;
  expect_tensor(ng::log_softmax(tape.constant(Tensor::vector({0, 0}))).tensor(),
                {-std::log(2.0), -std::log(2.0)}, 1e-15);
  const double e = std::exp(1.0);
  expect_tensor(ng::log_softmax(tape.constant(Tensor::vector({1, 0}))).tensor(),
                {std::log(e / (e + 1)), std::log(1 / (e + 1))}, 1e-15);
  auto big = ng::log_softmax(tape.constant(Tensor::vector({1000, 0})));
  EXPECT_TRUE(big.tensor().all_finite());
  EXPECT_NEAR(big.tensor()[0], 0.0, 1e-300);
  EXPECT_NEAR(big.tensor()[1], -1000.0, 1e-12);
}

TEST(LogSoftmax, EmptyInputIsDimensionError) {
  ng::Tape tape;
  EXPECT_THROW(ng::log_softmax(tape.constant(Tensor(Shape{0}))), DimensionError);
}

TEST(LogSoftmax, ExpSumsToOne) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 200; ++t) {
    ng::Tape tape;
    const auto x = suites::random_tensor(rng, {suites::pick(rng, 1, 20)}, -700, 700);
    double s = 0;
    for (double v : ng::log_softmax(tape.constant(x)).tensor().data()) s += std::exp(v);
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(CosineRows, Examples) {
  ng::Tape tape;
  auto c = tape.constant(Tensor::vector({1, 0}));
  auto s = ng::cosine_rows(tape.constant(Tensor::matrix({{1, 0}, {0, 1}, {1, 1}})), c);
  expect_tensor(s.tensor(), {1.0, 0.0, 1.0 / std::sqrt(2.0)}, 1e-15);
}

TEST(CosineRows, DegenerateNormsRaise) {
  ng::Tape tape;
  EXPECT_THROW(ng::cosine_rows(tape.constant(Tensor::matrix({{0, 0}})),
                               tape.constant(Tensor::vector({1, 0}))),
               DegenerateEmbeddingError);
  EXPECT_THROW(ng::cosine_rows(tape.constant(Tensor::matrix({{1, 0}})),
                               tape.constant(Tensor::vector({1e-13, 0}))),
               DegenerateEmbeddingError);
}

TEST(CosineRows, MagnitudeBounded) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 200; ++t) {
    ng::Tape tape;
    const std::size_t d = suites::pick(rng, 1, 8);
    auto c = suites::random_tensor(rng, {d}, -5, 5);
    auto z = suites::random_tensor(rng, {4, d}, -5, 5);
    for (std::size_t j = 0; j < d; ++j) {
      z.row(0)[j] = -0.5 * c[j];
      z.row(1)[j] = 3.0 * c[j];
    }
    for (double v : ng::cosine_rows(tape.constant(z), tape.constant(c)).tensor().data()) {
      EXPECT_LE(std::abs(v), 1.0 + 1e-12);
    }
  }
}

TEST(Reduce, MeanSumAndEmpty) {
  ng::Tape tape;
  EXPECT_EQ(ng::mean(tape.constant(Tensor::vector({1, 2, 3}))).tensor().item(), 2.0);
  EXPECT_THROW(ng::sum(tape.constant(Tensor(Shape{0}))), DimensionError);
  auto x = tape.leaf(Tensor::vector({1, 2, 3, 4}));
  tape.backward(ng::mean(x));
  expect_tensor(x.grad(), {0.25, 0.25, 0.25, 0.25});
}

TEST(Backward, SumGivesOnes) {
  ng::Tape tape;
  auto x = tape.leaf(Tensor::vector({5, 7}));
  tape.backward(ng::sum(x));
  expect_tensor(x.grad(), {1, 1});
}

TEST(Backward, NonScalarRootIsContractError) {
  ng::Tape tape;
  auto x = tape.leaf(Tensor::vector({5, 7}));
  EXPECT_THROW(tape.backward(ng::relu(x)), ContractError);
}

TEST(Backward, RepeatedCallRejectedUntilReset) {
  ng::Tape tape;
  auto x = tape.leaf(Tensor::vector({5, 7}));
  auto root = ng::sum(x);
  tape.backward(root);
  EXPECT_THROW(tape.backward(root), ContractError);
  tape.zero_grad();
  tape.backward(root);
  expect_tensor(x.grad(), {1, 1});
}

TEST(Backward, SharedSubexpressionAccumulates) {
  ng::Tape tape;
  auto x = tape.leaf(Tensor::vector({3}));
  auto y = ng::mul(x, x);  // d/dx = 2x
  tape.backward(ng::sum(ng::add(y, x)));
  expect_tensor(x.grad(), {7});
}

TEST(Backward, CrossEntropyGradIsSoftmaxMinusOneHot) {
  ng::Tape tape;
  const Tensor logits = Tensor::matrix({{0.3, -1.2}});
  auto x = tape.leaf(logits);
  const int label[] = {1};
  tape.backward(cross_entropy(x, label));
  const double p0 = std::exp(0.3) / (std::exp(0.3) + std::exp(-1.2));
  expect_tensor(x.grad(), {p0, (1 - p0) - 1}, 1e-12);
}

TEST(Backward, IsLinear) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 100; ++t) {
    const auto x0 = suites::random_tensor(rng, {3, 4});
    const auto c = suites::random_tensor(rng, {4});
    const double a = std::uniform_real_distribution<double>(-2, 2)(rng);
    const double b = std::uniform_real_distribution<double>(-2, 2)(rng);
    auto f = [&](ng::Tape&, const ng::Value& x) {
      return ng::sum(ng::log_softmax(ng::mul(x, x)));
    };
    auto g = [&](ng::Tape& tape, const ng::Value& x) {
      return ng::sum(ng::cosine_rows(x, tape.constant(c)));
    };
    auto grad_of = [&](auto&& build) {
      ng::Tape tape;
      auto x = tape.leaf(x0);
      tape.backward(build(tape, x));
      return x.grad();
    };
    const Tensor gf = grad_of(f), gg = grad_of(g);
    const Tensor gc = grad_of([&](ng::Tape& tape, const ng::Value& x) {
      return ng::add(ng::scale(f(tape, x), a), ng::scale(g(tape, x), b));
    });
    for (std::size_t i = 0; i < gc.numel(); ++i) EXPECT_NEAR(gc[i], a * gf[i] + b * gg[i], 1e-10);
  }
}

TEST(StopGradient, BlocksGradient) {
  ng::Tape tape;
  auto x = tape.leaf(Tensor::vector({1, 2}));
  tape.backward(ng::sum(ng::add(ng::stop_gradient(x), ng::scale(x, 0.0))));
  expect_tensor(x.grad(), {0, 0});
}

TEST(GatherScatter, ScatterInvertsGather) {
  ng::Tape tape;
  auto x = tape.constant(Tensor::matrix({{1, 2}, {3, 4}, {5, 6}}));
  const std::vector<std::size_t> a{2, 0}, b{1};
  const ng::Value parts[] = {ng::gather_rows(x, a), ng::gather_rows(x, b)};
  const std::vector<std::size_t> pos[] = {a, b};
  EXPECT_EQ(ng::scatter_rows(parts, pos, 3).tensor(), x.tensor());
  const std::vector<std::size_t> bad[] = {a, a};
  EXPECT_THROW(ng::scatter_rows(parts, bad, 3), DimensionError);
}

TEST(GradientSuite, EveryOpPassesFiniteDifferenceCheck) {
  for (const auto& c : suites::gradient_suite(100)) {
    EXPECT_GE(c.trials, 100u) << c.name;
    EXPECT_LT(c.max_rel, 1e-4) << c.name;
  }
}
