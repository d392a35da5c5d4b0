#include <gtest/gtest.h>

#include <cmath>

#include "bnn/autodiff.hpp"
#include "bnn/errors.hpp"
#include "bnn/random.hpp"
#include "oracles.hpp"

using namespace bnn;

namespace {

Tensor eval1(Graph& g, Var out, const Bindings& b) { return g.evaluate(b).value(out); }

}  // namespace

TEST(Tensor, RowMajorLayoutAndShapes) {
  Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t.at(1, 0), 4.0);
  EXPECT_EQ(t.matrix()(0, 2), 3.0);
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(ForwardEval, SquareOfThree) {
  Graph g;
  Var x = g.leaf("x", {});
  Var y = square(x);
  EXPECT_DOUBLE_EQ(eval1(g, y, {{"x", Tensor::scalar(3.0)}}).item(), 9.0);
}

TEST(ForwardEval, TanhAtZero) {
  Graph g;
  Var x = g.leaf("x", {});
  EXPECT_EQ(eval1(g, tanh(x), {{"x", Tensor::scalar(0.0)}}).item(), 0.0);
}

TEST(ForwardEval, IdentityMatrixMap) {
  Graph g;
  Var w = g.leaf("W", {2, 2});
  Var x = g.leaf("x", {2, 1});
  const Tensor out = eval1(g, matmul(w, x), {{"W", Tensor({2, 2}, std::vector<double>{1, 0, 0, 1})},
                                            {"x", Tensor({2, 1}, std::vector<double>{0.3, -1.2})}});
  EXPECT_EQ(out[0], 0.3);
  EXPECT_EQ(out[1], -1.2);
}

TEST(ForwardEval, OutputsByName) {
  Graph g;
  Var x = g.leaf("x", {});
  const auto out = forward_eval(g, {{"x", Tensor::scalar(2.0)}}, {{"sq", square(x)}, {"ex", exp(x)}});
  EXPECT_DOUBLE_EQ(out.at("sq").item(), 4.0);
  EXPECT_DOUBLE_EQ(out.at("ex").item(), std::exp(2.0));
}

TEST(ForwardEval, ShapeMismatchNamesNode) {
  Graph g;
  Var a = g.leaf("a", {2, 3});
  Var b = g.leaf("b", {2, 3});
  try {
    matmul(a, b);
    FAIL() << "expected a dimension error";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
  }
  EXPECT_THROW(a + g.leaf("c", {3, 2}), DimensionError);
}

TEST(ForwardEval, BindingShapeChecked) {
  Graph g;
  Var x = g.leaf("x", {2});
  (void)sum(x);
  EXPECT_THROW(g.evaluate({{"x", Tensor({3})}}), DimensionError);
  EXPECT_THROW(g.evaluate({}), ContractError);
}

TEST(ForwardEval, NonFiniteNamesNode) {
  Graph g;
  Var x = g.leaf("x", {});
  Var y = log(x);
  (void)y;
  try {
    g.evaluate({{"x", Tensor::scalar(-1.0)}});
    FAIL() << "expected a numeric error";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("log"), std::string::npos);
  }
}

TEST(ForwardEval, Deterministic) {
  CounterRng rng(3);
  Graph g;
  Var w = g.leaf("w", {4, 3});
  Var x = g.leaf("x", {5, 3});
  Var y = sum(tanh(matmul(x, transpose(w))));
  const Bindings b{{"w", oracle::random_tensor({4, 3}, rng)}, {"x", oracle::random_tensor({5, 3}, rng)}};
  EXPECT_EQ(g.evaluate(b).scalar(y), g.evaluate(b).scalar(y));
}

TEST(Backward, SquareGradient) {
  Graph g;
  Var x = g.leaf("x", {});
  const auto grads = g.backward(square(x), Bindings{{"x", Tensor::scalar(3.0)}});
  EXPECT_DOUBLE_EQ(grads.at("x").item(), 6.0);
}

TEST(Backward, TanhGradientAtZero) {
  Graph g;
  Var x = g.leaf("x", {});
  const auto grads = g.backward(tanh(x), Bindings{{"x", Tensor::scalar(0.0)}});
  EXPECT_DOUBLE_EQ(grads.at("x").item(), 1.0);
}

TEST(Backward, NonScalarOutputRejected) {
  Graph g;
  Var x = g.leaf("x", {3});
  EXPECT_THROW(g.backward(square(x), Bindings{{"x", Tensor({3}, 1.0)}}), ContractError);
}

TEST(Backward, UnreachableLeafGetsZeros) {
  Graph g;
  Var x = g.leaf("x", {});
  Var unused = g.leaf("u", {2, 2});
  (void)unused;
  const auto grads = g.backward(square(x), Bindings{{"x", Tensor::scalar(1.0)}, {"u", Tensor({2, 2}, 5.0)}});
  EXPECT_EQ(grads.at("u"), Tensor({2, 2}, 0.0));
}

TEST(Backward, NonTrainableLeafOmitted) {
  Graph g;
  Var x = g.leaf("x", {});
  Var c = g.leaf("c", {}, false);
  const auto grads = g.backward(x * c, Bindings{{"x", Tensor::scalar(2.0)}, {"c", Tensor::scalar(3.0)}});
  EXPECT_EQ(grads.count("c"), 0u);
  EXPECT_DOUBLE_EQ(grads.at("x").item(), 3.0);
}

TEST(Backward, ReluSubgradientAtZeroIsZero) {
  Graph g;
  Var x = g.leaf("x", {});
  EXPECT_EQ(g.backward(relu(x), Bindings{{"x", Tensor::scalar(0.0)}}).at("x").item(), 0.0);
}

TEST(FiniteDifference, Square) {
  const Tensor grad = finite_difference_gradient([](const Tensor& t) { return t[0] * t[0]; }, Tensor::scalar(3.0), 1e-5);
  EXPECT_NEAR(grad.item(), 6.0, 1e-6);
}

TEST(FiniteDifference, SumIsAllOnes) {
  CounterRng rng(5);
  const Tensor p = oracle::random_tensor({3, 4}, rng);
  const Tensor grad = finite_difference_gradient([](const Tensor& t) { return t.values().sum(); }, p, 1e-5);
  for (std::size_t i = 0; i < grad.size(); ++i) EXPECT_NEAR(grad[i], 1.0, 1e-9);
}

TEST(FiniteDifference, RejectsNonPositiveStep) {
  EXPECT_THROW(finite_difference_gradient([](const Tensor&) { return 0.0; }, Tensor::scalar(1.0), 0.0), ContractError);
}

// Every op in one randomly shaped expression, checked against central
// differences leaf by leaf.
TEST(BackwardProperty, RandomGraphsMatchFiniteDifferences) {
  for (std::uint64_t trial = 0; trial < 25; ++trial) {
    CounterRng rng(trial, 11);
    const std::size_t rows = 1 + trial % 4, in = 1 + (trial / 2) % 3, out = 2 + trial % 3;
    Bindings b{{"x", oracle::random_tensor({rows, in}, rng)},
               {"w", oracle::random_tensor({out, in}, rng)},
               {"v", oracle::random_tensor({out}, rng)},
               {"s", Tensor::scalar(0.5 + rng.uniform())}};
    auto build = [&](Graph& g) {
      Var x = g.leaf("x", {rows, in});
      Var w = g.leaf("w", {out, in});
      Var v = g.leaf("v", {out});
      Var s = g.leaf("s", {});
      Var h = matmul(x, transpose(w)) + broadcast(v, {rows, out});
      Var a = tanh(h) * softplus(h) + relu(h + 0.3) - abs(h) * 0.1;
      Var pos = exp(h * 0.2) + square(h);
      Var t = log(pos + 1.0) + sqrt(pos + 0.5) + broadcast(s, {rows, out}) * a;
      Var lsm = log_softmax(t);
      return sum(lsm) * 0.5 + mean(square(t)) + (-s);
    };
    Graph g;
    Var y = build(g);
    const auto grads = g.backward(y, b);
    for (const auto& [name, value] : b) {
      auto f = [&](const Tensor& p) {
        Bindings bb = b;
        bb.at(name) = p;
        return g.evaluate(bb).scalar(y);
      };
      const Tensor fd = finite_difference_gradient(f, value, 1e-5);
      EXPECT_LT(oracle::max_relative_error(grads.at(name), fd, 1e-3), 1e-4) << "leaf " << name << " trial " << trial;
    }
  }
}

TEST(BackwardProperty, Linearity) {
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    CounterRng rng(trial, 12);
    const double a = rng.normal(), c = rng.normal();
    Graph g;
    Var x = g.leaf("x", {3, 2});
    Var f = sum(tanh(x));
    Var h = sum(square(x));
    Var combo = f * a + h * c;
    const Bindings b{{"x", oracle::random_tensor({3, 2}, rng)}};
    const auto ev = g.evaluate(b);
    const Tensor gf = g.backward(f, ev).at("x");
    const Tensor gh = g.backward(h, ev).at("x");
    const Tensor gc = g.backward(combo, ev).at("x");
    for (std::size_t i = 0; i < gc.size(); ++i) EXPECT_NEAR(gc[i], a * gf[i] + c * gh[i], 1e-14);
  }
}

TEST(Helpers, StableSoftplusAndSigmoid) {
  EXPECT_DOUBLE_EQ(softplus(0.0), std::log(2.0));
  EXPECT_DOUBLE_EQ(softplus(800.0), 800.0);
  EXPECT_GT(softplus(-800.0), -1.0);
  EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
  EXPECT_EQ(sigmoid(-800.0), 0.0);
}
