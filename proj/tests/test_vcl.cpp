#include <gtest/gtest.h>

#include <json.hpp>

#include "bnn/errors.hpp"
#include "bnn/priors.hpp"
#include "bnn/vcl.hpp"
#include "oracles.hpp"

using namespace bnn;

namespace {

VariationalBNN classifier(std::uint64_t seed = 0) {
  Network net = assign_priors(
      build_network({DenseSpec{2, 8, true}, Activation::relu, DenseSpec{8, 2, true}}), IidPrior{});
  MeanFieldGuide guide = init_guide(net, {LayerScaled{seed}, 0.05});
  return VariationalBNN(std::move(net), std::move(guide), Likelihood::categorical(1));
}

}  // namespace

TEST(PosteriorToPrior, KlVanishesAfterPromotion) {
  VariationalBNN bnn = classifier();
  EXPECT_GT(guide_kl(bnn.guide, bnn.net), 1.0);
  posterior_to_prior(bnn);
  EXPECT_NEAR(guide_kl(bnn.guide, bnn.net), 0.0, 1e-12);
}

TEST(PosteriorToPrior, Idempotent) {
  VariationalBNN bnn = classifier();
  posterior_to_prior(bnn);
  const Network once = bnn.net;
  posterior_to_prior(bnn);
  for (const auto& s : once.sites()) {
    const auto& a = std::get<DiagonalNormal>(s.prior());
    const auto& b = std::get<DiagonalNormal>(bnn.net.site(s.name).prior());
    EXPECT_EQ(a.mean(), b.mean());
    EXPECT_EQ(a.sd(), b.sd());
  }
}

TEST(PosteriorToPrior, NoBayesianSitesIsNoOp) {
  SiteFilter none;
  none.expose_names = std::set<std::string>{};
  Network net = assign_priors(build_network({DenseSpec{2, 2, true}}), IidPrior{}, none);
  VariationalBNN bnn(net, init_guide(net, {}), Likelihood::categorical(1));
  EXPECT_NO_THROW(posterior_to_prior(bnn));
}

TEST(TaskMatrix, JsonShape) {
  TaskMatrix m;
  m.accuracy = {{0.9}, {0.8, 0.95}};
  EXPECT_EQ(m.tasks(), 2u);
  EXPECT_DOUBLE_EQ(m.final_mean(), 0.875);
  const auto j = nlohmann::json::parse(m.to_json());
  EXPECT_EQ(j["tasks"], 2);
  EXPECT_EQ(j["accuracy"][1].size(), 2u);
  EXPECT_DOUBLE_EQ(j["accuracy"][1][1].get<double>(), 0.95);
  EXPECT_THROW(TaskMatrix{}.final_mean(), ContractError);
}

TEST(Sequence, SingleTaskGivesOneByOneMatrix) {
  VariationalBNN bnn = classifier();
  SequenceConfig cfg;
  cfg.epochs = 5;
  cfg.adam.lr = 1e-2;
  const TaskMatrix m = run_task_sequence(bnn, {gen_split_tasks(SplitKind::gaussian_blobs, 2, 50, 0)[0]}, cfg);
  ASSERT_EQ(m.tasks(), 1u);
  ASSERT_EQ(m.accuracy[0].size(), 1u);
  EXPECT_GE(m.accuracy[0][0], 0.0);
  EXPECT_LE(m.accuracy[0][0], 1.0);
  // The prior now matches the posterior just fitted.
  EXPECT_NEAR(guide_kl(bnn.guide, bnn.net), 0.0, 1e-12);
}

TEST(Sequence, TriangularAndDeterministic) {
  const TaskSequence tasks = gen_split_tasks(SplitKind::gaussian_blobs, 3, 40, 1);
  SequenceConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.adam.lr = 1e-2;
  cfg.context.mode = ContextMode::local_reparameterization;
  VariationalBNN a = classifier(2), b = classifier(2);
  const TaskMatrix ma = run_task_sequence(a, tasks, cfg), mb = run_task_sequence(b, tasks, cfg);
  ASSERT_EQ(ma.tasks(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(ma.accuracy[i].size(), i + 1);
  EXPECT_EQ(ma.accuracy, mb.accuracy);
}

TEST(Sequence, LearnsFirstTask) {
  VariationalBNN bnn = classifier(3);
  SequenceConfig cfg;
  cfg.epochs = 60;
  cfg.adam.lr = 1e-2;
  const TaskMatrix m = run_task_sequence(bnn, {gen_split_tasks(SplitKind::gaussian_blobs, 2, 100, 3)[0]}, cfg);
  EXPECT_GT(m.accuracy[0][0], 0.9);
}

TEST(Accuracy, NeedsDiscreteLikelihood) {
  VariationalBNN bnn = classifier();
  bnn.likelihood = Likelihood::homoskedastic(1, 1.0);
  const Dataset d{Tensor({1, 2}), Tensor({1, 2})};
  EXPECT_THROW(accuracy(bnn, d, 2, 0), ContractError);
  EXPECT_THROW(run_task_sequence(bnn, {}, SequenceConfig{}), ContractError);
}
