#include <gtest/gtest.h>

#include <cmath>

#include "bnn/distributions.hpp"
#include "bnn/errors.hpp"
#include "oracles.hpp"

using namespace bnn;

namespace {

DiagonalNormal scalar_normal(double m, double s) { return {Tensor::scalar(m), Tensor::scalar(s)}; }

}  // namespace

TEST(LogProb, StandardNormalAtZero) {
  EXPECT_NEAR(log_prob(scalar_normal(0, 1), Tensor::scalar(0)).item(), -0.9189385, 1e-7);
}

TEST(LogProb, MatchesOracleOnRandomPoints) {
  CounterRng rng(1);
  for (int i = 0; i < 50; ++i) {
    const double m = rng.normal(), s = 0.1 + rng.uniform(), x = rng.normal();
    EXPECT_NEAR(log_prob(scalar_normal(m, s), Tensor::scalar(x)).item(), oracle::normal_logpdf(x, m, s), 1e-12);
  }
}

TEST(LogProb, UniformCategoricalAndFairBernoulli) {
  const CategoricalDist c(Tensor({1, 2}, 0.0));
  EXPECT_NEAR(log_prob(c, Tensor({1, 1}, 0.0))[0], -std::log(2.0), 1e-15);
  const BernoulliDist b{Tensor({1}, 0.0)};
  EXPECT_NEAR(log_prob(b, Tensor({1}, 1.0))[0], -std::log(2.0), 1e-15);
}

TEST(LogProb, OutOfSupportRaises) {
  EXPECT_THROW(log_prob(BernoulliDist{Tensor({1}, 0.0)}, Tensor({1}, 0.5)), SupportError);
  EXPECT_THROW(log_prob(CategoricalDist(Tensor({1, 3}, 0.0)), Tensor({1, 1}, 3.0)), SupportError);
  EXPECT_THROW(log_prob(CategoricalDist(Tensor({1, 3}, 0.0)), Tensor({1, 1}, -1.0)), SupportError);
}

TEST(LogProb, CategoricalNormalizesProperty) {
  CounterRng rng(2);
  for (std::size_t k = 2; k <= 10; ++k) {
    const CategoricalDist c(oracle::random_tensor({1, k}, rng, 3.0));
    double total = 0.0;
    for (std::size_t y = 0; y < k; ++y) total += std::exp(log_prob(c, Tensor({1, 1}, static_cast<double>(y)))[0]);
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(LogProb, BernoulliStableAtExtremeLogits) {
  const Tensor lp = log_prob(BernoulliDist{Tensor({2}, std::vector<double>{800.0, -800.0})}, Tensor({2}, std::vector<double>{0.0, 1.0}));
  EXPECT_NEAR(lp[0], -800.0, 1e-9);
  EXPECT_NEAR(lp[1], -800.0, 1e-9);
}

TEST(Sample, ZeroNoiseReturnsMean) {
  const DiagonalNormal d(Tensor({3}, std::vector<double>{1, 2, 3}), Tensor({3}, 0.5));
  EXPECT_EQ(sample_reparameterized(d, Tensor({3}, 0.0)), d.mean());
}

TEST(Sample, Standardization) {
  EXPECT_EQ(sample_reparameterized(scalar_normal(0, 1), Tensor::scalar(1.5)).item(), 1.5);
}

TEST(Sample, ShapeMismatchRaises) {
  EXPECT_THROW(sample_reparameterized(scalar_normal(0, 1), Tensor({2})), DimensionError);
}

TEST(Sample, MonteCarloMoments) {
  const DiagonalNormal d = scalar_normal(2.0, 0.5);
  CounterRng rng(7);
  const std::size_t n = 100000;
  double s = 0, s2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = sample_reparameterized(d, Tensor::scalar(rng.normal())).item();
    s += x;
    s2 += x * x;
  }
  const double mean = s / n;
  EXPECT_NEAR(mean, 2.0, 0.01);
  EXPECT_NEAR(std::sqrt(s2 / n - mean * mean), 0.5, 0.01);
}

TEST(Sample, GradientsMatchFiniteDifferences) {
  Graph g;
  Var m = g.leaf("m", {3});
  Var s = g.leaf("s", {3});
  const Tensor eps({3}, std::vector<double>{0.3, -1.1, 2.0});
  Var y = sum(square(sample_reparameterized(m, s, g.constant(eps))));
  const Bindings b{{"m", Tensor({3}, std::vector<double>{0.1, -0.4, 1.0})}, {"s", Tensor({3}, std::vector<double>{0.5, 0.2, 1.5})}};
  const auto grads = g.backward(y, b);
  for (const char* name : {"m", "s"}) {
    auto f = [&](const Tensor& p) {
      Bindings bb = b;
      bb.at(name) = p;
      return g.evaluate(bb).scalar(y);
    };
    EXPECT_LT(oracle::max_relative_error(grads.at(name), finite_difference_gradient(f, b.at(name), 1e-5)), 1e-6);
  }
}

TEST(Kl, IdentityIsZero) { EXPECT_EQ(kl_normal_normal(scalar_normal(0.3, 2), scalar_normal(0.3, 2)), 0.0); }

TEST(Kl, MeanShift) { EXPECT_DOUBLE_EQ(kl_normal_normal(scalar_normal(1, 1), scalar_normal(0, 1)), 0.5); }

TEST(Kl, WiderQ) {
  EXPECT_NEAR(kl_normal_normal(scalar_normal(0, 2), scalar_normal(0, 1)), std::log(0.5) + 2.0 - 0.5, 1e-15);
  EXPECT_NEAR(kl_normal_normal(scalar_normal(0, 2), scalar_normal(0, 1)), 0.80685, 1e-5);
}

TEST(Kl, WiderQMonteCarloWithinOnePercent) {
  CounterRng rng(9);
  const std::size_t n = 1000000;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = 2.0 * rng.normal();
    acc += oracle::normal_logpdf(w, 0, 2) - oracle::normal_logpdf(w, 0, 1);
  }
  EXPECT_NEAR(acc / n, kl_normal_normal(scalar_normal(0, 2), scalar_normal(0, 1)), 0.01 * 0.80685);
}

TEST(KlProperty, NonNegativeAndMatchesOracle) {
  CounterRng rng(10);
  for (int i = 0; i < 200; ++i) {
    const double qm = rng.normal(), qs = 0.05 + 2 * rng.uniform(), pm = rng.normal(), ps = 0.05 + 2 * rng.uniform();
    const double kl = kl_normal_normal(scalar_normal(qm, qs), scalar_normal(pm, ps));
    EXPECT_GE(kl, 0.0);
    EXPECT_NEAR(kl, oracle::kl_normal(qm, qs, pm, ps), 1e-12 * std::max(1.0, kl));
    EXPECT_NEAR(kl_normal_normal(scalar_normal(qm, qs), scalar_normal(qm, qs)), 0.0, 1e-12);
  }
}

TEST(Kl, GraphVersionAgrees) {
  CounterRng rng(11);
  const Tensor qm = oracle::random_tensor({2, 3}, rng), qs = Tensor({2, 3}, 0.7);
  const DiagonalNormal p(oracle::random_tensor({2, 3}, rng), Tensor({2, 3}, 1.3));
  Graph g;
  Var kl = kl_normal_normal(g.leaf("m", {2, 3}), g.leaf("r", {2, 3}), p);
  const Tensor rho({2, 3}, std::log(0.7));
  EXPECT_NEAR(g.evaluate({{"m", qm}, {"r", rho}}).scalar(kl), kl_normal_normal(DiagonalNormal(qm, qs), p), 1e-12);
}

TEST(Entropy, Examples) {
  EXPECT_NEAR(entropy(CategoricalDist(Tensor({1, 2}, std::vector<double>{30, -30})))[0], 0.0, 1e-20);
  EXPECT_NEAR(entropy(CategoricalDist(Tensor({1, 10}, 0.0)))[0], std::log(10.0), 1e-12);
  const double e = entropy(CategoricalDist(Tensor({1, 2}, std::vector<double>{std::log(0.7), std::log(0.3)})))[0];
  EXPECT_NEAR(e, -(0.7 * std::log(0.7) + 0.3 * std::log(0.3)), 1e-12);
  EXPECT_NEAR(e, 0.6109, 5e-5);
}

TEST(DiagonalNormal, SdFloorAndValidation) {
  const DiagonalNormal d(Tensor::scalar(0), Tensor::scalar(1e-9));
  EXPECT_EQ(d.sd().item(), kMinSd);
  EXPECT_THROW(DiagonalNormal(Tensor::scalar(0), Tensor::scalar(-1)), ContractError);
  EXPECT_THROW(DiagonalNormal(Tensor({2}), Tensor({3}, 1.0)), DimensionError);
}

TEST(Laplace, LogProbAndSampling) {
  const PriorDistribution d = DiagonalLaplace(Tensor::scalar(0.5), Tensor::scalar(2.0));
  EXPECT_NEAR(log_prob(d, Tensor::scalar(1.5)).item(), -std::log(4.0) - 0.5, 1e-14);
  CounterRng rng(12);
  double abs_dev = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) abs_dev += std::abs(sample(d, rng).item() - 0.5);
  EXPECT_NEAR(abs_dev / n, 2.0, 0.03);  // E|x - loc| = scale
}
