#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>

#include "bnn/errors.hpp"
#include "bnn/priors.hpp"
#include "bnn/svi.hpp"
#include "elbo_check.hpp"
#include "oracles.hpp"

using namespace bnn;

namespace {

VariationalBNN make_bnn(const std::vector<LayerSpec>& specs, Likelihood lik, double sd_init = 0.1,
                        std::uint64_t seed = 0, const SiteFilter& filter = {}) {
  Network net = assign_priors(build_network(specs), IidPrior{}, filter, seed);
  MeanFieldGuide guide = init_guide(net, {LayerScaled{seed}, sd_init});
  VariationalBNN bnn(std::move(net), std::move(guide), lik);
  bnn.seed = seed;
  return bnn;
}

std::vector<LayerSpec> mlp(std::size_t in, std::size_t hidden, std::size_t out) {
  return {DenseSpec{in, hidden, true}, Activation::tanh, DenseSpec{hidden, out, true}};
}

Batch regression_batch(std::size_t rows, std::size_t in, CounterRng& rng) {
  return {oracle::random_tensor({rows, in}, rng), oracle::random_tensor({rows, 1}, rng), std::nullopt};
}

// Single dense unit x=(1,1), mu=(0.5,0.5), sd=(0.3,0.4), no bias.
VariationalBNN worked_unit() {
  Network net = assign_priors(build_network({DenseSpec{2, 1, false}}), IidPrior{});
  MeanFieldGuide g = init_guide(net, {Pretrained{{{"layer0.weight", Tensor({1, 2}, 0.5)}}}, 0.3});
  g.sites[0].rho[1] = std::log(0.4);
  return VariationalBNN(std::move(net), std::move(g), Likelihood::homoskedastic(1, 1.0));
}

}  // namespace

TEST(Elbo, LossIsKlMinusScaledLogLikelihood) {
  CounterRng rng(1);
  VariationalBNN bnn = make_bnn(mlp(2, 5, 1), Likelihood::homoskedastic(40, 0.5));
  const Batch batch = regression_batch(8, 2, rng);
  const auto noise = draw_noise(bnn.net, ContextMode::plain, 8, rng);
  const ElboResult r = elbo_loss(bnn, batch, noise, {});
  EXPECT_NEAR(r.loss, r.kl - 40.0 / 8.0 * r.log_likelihood, 1e-10);
  EXPECT_NEAR(r.kl, guide_kl(bnn.guide, bnn.net), 1e-10);
  bnn.likelihood.dataset_size = 8;
  const ElboResult full = elbo_loss(bnn, batch, noise, {});
  EXPECT_NEAR(full.loss, full.kl - full.log_likelihood, 1e-10);
  bnn.likelihood.dataset_size = 4;
  EXPECT_THROW(elbo_loss(bnn, batch, noise, {}), ContractError);
}

// With no stochastic sites the mean mini-batch loss equals the full-batch loss.
TEST(Elbo, MiniBatchAverageMatchesFullBatchWhenDeterministic) {
  CounterRng rng(2);
  SiteFilter all_hidden;
  all_hidden.expose_names = std::set<std::string>{};
  VariationalBNN bnn = make_bnn(mlp(2, 5, 1), Likelihood::homoskedastic(12, 0.5), 0.1, 3, all_hidden);
  const Batch full = regression_batch(12, 2, rng);
  const double full_loss = elbo_loss(bnn, full, {}, {}).loss;
  double acc = 0.0;
  for (std::size_t b = 0; b < 3; ++b) {
    Batch part{Tensor({4, 2}), Tensor({4, 1}), std::nullopt};
    for (std::size_t i = 0; i < 4; ++i) {
      part.targets[i] = full.targets[4 * b + i];
      for (std::size_t c = 0; c < 2; ++c) part.inputs.at(i, c) = full.inputs.at(4 * b + i, c);
    }
    acc += elbo_loss(bnn, part, {}, {}).loss;
  }
  EXPECT_NEAR(acc / 3.0, full_loss, 1e-10 * std::abs(full_loss));
}

TEST(ElboProperty, GradientsMatchFiniteDifferencesInAllModes) {
  for (std::uint64_t trial = 0; trial < 6; ++trial) {
    for (ContextMode mode : {ContextMode::plain, ContextMode::local_reparameterization, ContextMode::flipout}) {
      CounterRng rng(trial, 7);
      const Likelihood lik = trial % 2 ? Likelihood::categorical(20) : Likelihood::homoskedastic(20, 0.3);
      const std::size_t out = trial % 2 ? 3 : 1;
      SiteFilter filter;
      if (trial % 3 == 2) filter.hide_names = {"layer2.bias"};
      VariationalBNN bnn = make_bnn(mlp(2, 4, out), lik, 0.2 + 0.1 * trial, trial, filter);
      Batch batch = regression_batch(5, 2, rng);
      if (trial % 2)
        for (std::size_t i = 0; i < 5; ++i) batch.targets[i] = static_cast<double>(i % 3);
      const auto noise = draw_noise(bnn.net, mode, 5, rng);
      EXPECT_LT(testing_support::elbo_gradient_error(bnn, batch, noise, mode), 1e-4)
          << "trial " << trial << " mode " << format_context(mode);
    }
  }
}

TEST(Contexts, CollapseWhenGuideSdVanishes) {
  CounterRng rng(3);
  VariationalBNN bnn = make_bnn(mlp(2, 6, 2), Likelihood::categorical(10), 1e-6, 1);
  const Tensor x = oracle::random_tensor({7, 2}, rng);
  CounterRng a(1), b(2), c(3);
  const Tensor plain = forward_under({ContextMode::plain}, bnn.net, bnn.guide, x, a);
  const Tensor lr = forward_under({ContextMode::local_reparameterization}, bnn.net, bnn.guide, x, b);
  const Tensor fo = forward_under({ContextMode::flipout}, bnn.net, bnn.guide, x, c);
  for (std::size_t i = 0; i < plain.size(); ++i) {
    EXPECT_NEAR(plain[i], lr[i], 1e-4);
    EXPECT_NEAR(plain[i], fo[i], 1e-4);
  }
}

TEST(Contexts, LocalReparameterizationWorkedExample) {
  const VariationalBNN bnn = worked_unit();
  const std::size_t n = 100000;
  CounterRng rng(4);
  const Tensor out = forward_under({ContextMode::local_reparameterization}, bnn.net, bnn.guide, Tensor({n, 2}, 1.0), rng);
  const double mean = out.values().mean();
  const double var = (out.values().array() - mean).square().mean();
  EXPECT_NEAR(mean, 1.0, 0.02);
  EXPECT_NEAR(var, 0.25, 0.02 * 0.25);
}

TEST(Contexts, FlipoutMarginalMoments) {
  const VariationalBNN bnn = worked_unit();
  CounterRng rng(5);
  double s = 0, s2 = 0;
  const std::size_t calls = 20000, rows = 5;
  for (std::size_t k = 0; k < calls; ++k) {
    const Tensor out = forward_under({ContextMode::flipout}, bnn.net, bnn.guide, Tensor({rows, 2}, 1.0), rng);
    s += out.values().sum();
    s2 += out.values().squaredNorm();
  }
  const double n = calls * rows, mean = s / n, var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, 1.0, 0.02);
  EXPECT_NEAR(var, 0.25, 0.03 * 0.25);
}

TEST(Noise, KeysPerMode) {
  const VariationalBNN bnn = make_bnn(mlp(2, 3, 1), Likelihood::homoskedastic(1, 1));
  CounterRng rng(6);
  const auto plain = draw_noise(bnn.net, ContextMode::plain, 4, rng);
  EXPECT_EQ(plain.size(), 4u);
  const auto lr = draw_noise(bnn.net, ContextMode::local_reparameterization, 4, rng);
  EXPECT_EQ(lr.at(preactivation_noise_key(0)).shape(), (Shape{4, 3}));
  const auto fo = draw_noise(bnn.net, ContextMode::flipout, 4, rng);
  EXPECT_EQ(fo.at(sign_in_key(2)).shape(), (Shape{4, 3}));
  EXPECT_EQ(fo.at(sign_out_key(2)).shape(), (Shape{4, 1}));
  EXPECT_TRUE(fo.count(bias_noise_key(0)));
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(std::abs(fo.at(sign_in_key(2))[i]), 1.0);
  EXPECT_EQ(parse_context("local-reparam"), ContextMode::local_reparameterization);
  EXPECT_EQ(parse_context(format_context(ContextMode::flipout)), ContextMode::flipout);
  EXPECT_THROW(parse_context("lrt"), ConfigError);
}

TEST(Fit, RejectsZeroEpochsAndEmptyData) {
  CounterRng rng(7);
  VariationalBNN bnn = make_bnn(mlp(2, 3, 1), Likelihood::homoskedastic(4, 1));
  AdamState adam;
  EXPECT_THROW(fit(bnn, {regression_batch(4, 2, rng)}, 0, adam), ContractError);
  EXPECT_THROW(fit(bnn, {}, 1, adam), ContractError);
}

TEST(Fit, ZeroLearningRateLeavesParameters) {
  CounterRng rng(8);
  VariationalBNN bnn = make_bnn(mlp(2, 3, 1), Likelihood::homoskedastic(4, 1));
  const MeanFieldGuide before = bnn.guide;
  AdamState adam(AdamConfig{0.0});
  fit(bnn, {regression_batch(4, 2, rng)}, 3, adam);
  for (std::size_t i = 0; i < before.sites.size(); ++i) {
    EXPECT_EQ(bnn.guide.sites[i].mean, before.sites[i].mean);
    EXPECT_EQ(bnn.guide.sites[i].rho, before.sites[i].rho);
  }
  EXPECT_EQ(bnn.step, 3u);
}

TEST(Fit, FirstAdamStepIsLearningRateTimesSign) {
  CounterRng rng(9);
  VariationalBNN bnn = make_bnn(mlp(2, 3, 1), Likelihood::homoskedastic(4, 1));
  const Batch batch = regression_batch(4, 2, rng);
  CounterRng step_rng(bnn.seed, 0);
  const auto grads = elbo_loss(bnn, batch, draw_noise(bnn.net, ContextMode::plain, 4, step_rng), {}).gradients;
  const MeanFieldGuide before = bnn.guide;
  AdamState adam(AdamConfig{0.01});
  fit(bnn, {batch}, 1, adam);
  const std::string key = MeanFieldGuide::mean_key("layer0.weight");
  const Tensor& g = grads.at(key);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (std::abs(g[i]) < 1e-4) continue;
    const double delta = bnn.guide.sites[0].mean[i] - before.sites[0].mean[i];
    EXPECT_NEAR(delta, -0.01 * (g[i] > 0 ? 1.0 : -1.0), 1e-6);
  }
}

TEST(Fit, CallbackStopsEarly) {
  CounterRng rng(10);
  VariationalBNN bnn = make_bnn(mlp(2, 3, 1), Likelihood::homoskedastic(4, 1));
  AdamState adam;
  FitOptions opts;
  opts.callback = [](std::size_t epoch, double) { return epoch == 2; };
  const FitHistory h = fit(bnn, {regression_batch(4, 2, rng)}, 10, adam, {}, opts);
  EXPECT_EQ(h.epoch_elbo.size(), 3u);
  EXPECT_EQ(h.stop_epoch, std::optional<std::size_t>(2));
  EXPECT_EQ(h.step_loss.size(), 3u);
}

TEST(Fit, FullyMaskedBatchLeavesOnlyKl) {
  CounterRng rng(11);
  VariationalBNN bnn = make_bnn(mlp(2, 3, 1), Likelihood::homoskedastic(4, 1));
  const Batch batch = regression_batch(4, 2, rng);
  FitOptions opts;
  opts.mask_fn = [](const Batch& b) { return ObservationMask{std::vector<bool>(b.inputs.dim(0), false)}; };
  AdamState adam(AdamConfig{0.0});
  const double kl = guide_kl(bnn.guide, bnn.net);
  const FitHistory h = fit(bnn, {batch}, 1, adam, {}, opts);
  EXPECT_NEAR(h.step_loss[0], kl, 1e-10);
}

TEST(Fit, FrozenMeansStayBitIdentical) {
  CounterRng rng(12);
  VariationalBNN bnn = make_bnn(mlp(2, 3, 1), Likelihood::homoskedastic(4, 1));
  bnn.guide.train_mean = false;
  const MeanFieldGuide before = bnn.guide;
  AdamState adam(AdamConfig{0.05});
  fit(bnn, {regression_batch(4, 2, rng)}, 5, adam, {ContextMode::local_reparameterization});
  for (std::size_t i = 0; i < before.sites.size(); ++i) {
    EXPECT_EQ(bnn.guide.sites[i].mean, before.sites[i].mean);
    EXPECT_FALSE(bnn.guide.sites[i].rho == before.sites[i].rho);
  }
}

TEST(Fit, ReducesLossOnSimpleRegression) {
  CounterRng rng(13);
  Tensor x({32, 1}), y({32, 1});
  for (std::size_t i = 0; i < 32; ++i) {
    x[i] = -1.0 + 2.0 * i / 31.0;
    y[i] = 2.0 * x[i] + 0.5;
  }
  VariationalBNN bnn = make_bnn({DenseSpec{1, 1, true}}, Likelihood::homoskedastic(32, 0.1), 1e-3);
  AdamState adam(AdamConfig{0.05});
  const FitHistory h = fit(bnn, {{x, y, std::nullopt}}, 400, adam, {ContextMode::local_reparameterization});
  EXPECT_GT(h.epoch_elbo.back(), h.epoch_elbo.front());
  EXPECT_NEAR(bnn.guide.site("layer0.weight").mean[0], 2.0, 0.05);
  EXPECT_NEAR(bnn.guide.site("layer0.bias").mean[0], 0.5, 0.05);
}

TEST(Predict, ShapesAndSimplex) {
  CounterRng rng(14);
  const VariationalBNN bnn = make_bnn(mlp(2, 4, 3), Likelihood::categorical(10), 0.5);
  const Tensor x = oracle::random_tensor({6, 2}, rng);
  EXPECT_EQ(predict_stacked(bnn, x, 5, 1).shape(), (Shape{5, 6, 3}));
  const Aggregate a = predict(bnn, x, 5, 1);
  EXPECT_EQ(a.mean.shape(), (Shape{6, 3}));
  for (std::size_t r = 0; r < 6; ++r) EXPECT_NEAR(a.mean.matrix().row(r).sum(), 1.0, 1e-12);
  EXPECT_THROW(predict(bnn, x, 0, 1), ContractError);
  const VariationalBNN reg = make_bnn(mlp(2, 4, 1), Likelihood::homoskedastic(10, 0.1), 0.5);
  const Aggregate g = predict(reg, x, 5, 1);
  EXPECT_EQ(g.sd->shape(), (Shape{6, 1}));
}

// Under the plain context one weight sample is shared by the batch, so
// permuting inputs permutes predictions.
TEST(Predict, RowPermutationEquivariant) {
  CounterRng rng(15);
  const VariationalBNN bnn = make_bnn(mlp(2, 4, 3), Likelihood::categorical(10), 0.5);
  const Tensor x = oracle::random_tensor({5, 2}, rng);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  Tensor xp({5, 2});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 2; ++c) xp.at(i, c) = x.at(perm[i], c);
  const Tensor a = predict(bnn, x, 4, 2).mean, b = predict(bnn, xp, 4, 2).mean;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(b.at(i, c), a.at(perm[i], c), 1e-14);
}

TEST(Predict, SeedDeterminism) {
  CounterRng rng(16);
  const VariationalBNN bnn = make_bnn(mlp(2, 4, 1), Likelihood::homoskedastic(10, 0.1), 0.5);
  const Tensor x = oracle::random_tensor({3, 2}, rng);
  EXPECT_EQ(predict_stacked(bnn, x, 4, 9), predict_stacked(bnn, x, 4, 9));
  EXPECT_FALSE(predict_stacked(bnn, x, 4, 9) == predict_stacked(bnn, x, 4, 10));
}

TEST(Evaluate, PerfectAndUniformPredictors) {
  SiteFilter none;
  none.expose_names = std::set<std::string>{};
  VariationalBNN reg = make_bnn({DenseSpec{1, 1, false}}, Likelihood::homoskedastic(3, 0.1), 0.1, 0, none);
  reg.net.site("layer0.weight").treatment = Deterministic{Tensor({1, 1}, 1.0)};
  const Tensor x({3, 1}, std::vector<double>{0.1, 0.5, -2.0});
  const EvaluationResult r = evaluate(reg, x, x, 4, 0);
  EXPECT_EQ(r.error, 0.0);
  EXPECT_NEAR(r.log_likelihood, 1.3836, 5e-5);
  VariationalBNN cat = make_bnn({DenseSpec{1, 4, false}}, Likelihood::categorical(3), 0.1, 0, none);
  cat.net.site("layer0.weight").treatment = Deterministic{Tensor({4, 1}, 0.0)};
  EXPECT_NEAR(evaluate(cat, x, Tensor({3}, 2.0), 4, 0).log_likelihood, -std::log(4.0), 1e-12);
}

TEST(KlCached, ForwardCachesClosedFormKl) {
  CounterRng rng(17);
  const VariationalBNN bnn = make_bnn(mlp(2, 4, 1), Likelihood::homoskedastic(10, 0.1), 0.3);
  KlCachedModule module(bnn.net, bnn.guide);
  EXPECT_EQ(module.cached_kl(), 0.0);
  const auto [out, kl] = kl_cached_forward(module, oracle::random_tensor({3, 2}, rng), rng);
  EXPECT_EQ(out.shape(), (Shape{3, 1}));
  EXPECT_NEAR(kl, guide_kl(bnn.guide, bnn.net), 1e-10);
  EXPECT_EQ(module.cached_kl(), kl);
}

TEST(KlCached, MonteCarloEstimateIsUnbiased) {
  CounterRng rng(18);
  const VariationalBNN bnn = make_bnn({DenseSpec{1, 2, false}}, Likelihood::homoskedastic(10, 0.1), 0.5);
  KlCachedModule module(bnn.net, bnn.guide, KlEstimator::monte_carlo);
  double acc = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) acc += kl_cached_forward(module, Tensor({1, 1}, 1.0), rng).second;
  EXPECT_NEAR(acc / n, guide_kl(bnn.guide, bnn.net), 0.05);
}

TEST(Threads, EnvironmentVariable) {
  CounterRng rng(19);
  const VariationalBNN bnn = make_bnn(mlp(2, 4, 1), Likelihood::homoskedastic(10, 0.1), 0.5);
  const Tensor x = oracle::random_tensor({3, 2}, rng);
  ::unsetenv("BNN_THREADS");
  EXPECT_EQ(prediction_threads(), 1u);
  const Tensor serial = predict_stacked(bnn, x, 16, 3);
  ::setenv("BNN_THREADS", "4", 1);
  EXPECT_EQ(prediction_threads(), 4u);
  EXPECT_EQ(predict_stacked(bnn, x, 16, 3), serial);
  ::setenv("BNN_THREADS", "zero", 1);
  EXPECT_THROW(prediction_threads(), ConfigError);
  ::unsetenv("BNN_THREADS");
}
