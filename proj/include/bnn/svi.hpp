#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bnn/guides.hpp"
#include "bnn/likelihoods.hpp"
#include "bnn/network.hpp"
#include "bnn/optim.hpp"
#include "bnn/random.hpp"

namespace bnn {

// How dense layers with Gaussian weights are sampled during a forward pass.
//  plain: one weight sample shared by the whole batch
//  local_reparameterization: pre-activations sampled per row from their
//    Gaussian marginal
//  flipout: one shared perturbation, decorrelated per row by random sign flips
// Layers whose weight is deterministic are always evaluated plainly.
enum class ContextMode { plain, local_reparameterization, flipout };

struct ExecutionContext {
  ContextMode mode = ContextMode::plain;
};

ContextMode parse_context(const std::string& text);  // plain | local-reparam | flipout
std::string format_context(ContextMode mode);

// automatic: closed form per site when the prior is Gaussian, otherwise the
// single-sample estimate log q(w) - log p(w). none skips the KL term (used
// for prediction, where only the outputs matter).
enum class KlEstimator { automatic, closed_form, monte_carlo, none };

// Noise keys. Site samples use the site name itself.
std::string preactivation_noise_key(std::size_t layer);
std::string sign_in_key(std::size_t layer);
std::string sign_out_key(std::size_t layer);
std::string bias_noise_key(std::size_t layer);

// Every standard-normal / sign draw one forward pass over `rows` inputs needs.
NamedTensors draw_noise(const Network& net, ContextMode mode, std::size_t rows, CounterRng& rng);

// Leaf values for a traced model: guide means/rhos and deterministic sites.
Bindings parameter_bindings(const Network& net, const MeanFieldGuide& guide);

struct ModelTrace {
  Var output;
  Var kl;  // scalar; constant 0 without Bayesian sites
};

// Builds the sampled forward pass and its KL term in g. Leaves are named by
// MeanFieldGuide::mean_key/rho_key and by deterministic site names; noise is
// embedded as constants.
ModelTrace trace_model(Graph& g, const Network& net, const MeanFieldGuide& guide, KlEstimator kl,
                       ContextMode mode, Var input, const NamedTensors& noise);

// One sampled pass through the network under the given context.
Tensor forward_under(const ExecutionContext& ctx, const Network& net, const MeanFieldGuide& guide,
                     const Tensor& input, CounterRng& rng);

class VariationalBNN {
 public:
  VariationalBNN(Network net, MeanFieldGuide guide, Likelihood likelihood);

  Network net;
  MeanFieldGuide guide;
  Likelihood likelihood;
  // Gaussian priors whose log-density is added for deterministic sites (MAP).
  std::map<std::string, DiagonalNormal> map_priors;
  KlEstimator kl = KlEstimator::automatic;
  std::uint64_t seed = 0;
  // Optimizer steps taken so far; step t draws its noise from stream t.
  std::uint64_t step = 0;

  // Guide parameters (subject to the train flags) and deterministic values.
  std::map<std::string, Tensor*> trainable();
  void check_consistent() const;
};

struct Batch {
  Tensor inputs;
  Tensor targets;
  std::optional<ObservationMask> mask;
};

struct ElboResult {
  double loss = 0.0;  // KL - (N/B) * log-likelihood (+ MAP penalty)
  double kl = 0.0;
  double log_likelihood = 0.0;  // unscaled batch sum
  Gradients gradients;
};

ElboResult elbo_loss(const VariationalBNN& bnn, const Batch& batch, const NamedTensors& noise,
                     const ExecutionContext& ctx, const ObservationMask* mask = nullptr);

struct FitHistory {
  std::vector<double> epoch_elbo;  // mean ELBO (= -loss) per epoch
  std::vector<double> step_loss;
  std::optional<std::size_t> stop_epoch;
};

struct FitOptions {
  // Called after each epoch with (epoch, mean ELBO); returning true stops training.
  std::function<bool(std::size_t, double)> callback;
  // Per-batch mask; overrides Batch::mask when set.
  std::function<std::optional<ObservationMask>(const Batch&)> mask_fn;
};

FitHistory fit(VariationalBNN& bnn, const std::vector<Batch>& data, std::size_t epochs, AdamState& adam,
               const ExecutionContext& ctx = {}, const FitOptions& options = {});

// S x B x width stack of sampled predictions.
Tensor predict_stacked(const VariationalBNN& bnn, const Tensor& inputs, std::size_t num_samples,
                       std::uint64_t seed, const ExecutionContext& ctx = {});
Aggregate predict(const VariationalBNN& bnn, const Tensor& inputs, std::size_t num_samples, std::uint64_t seed,
                  const ExecutionContext& ctx = {});

struct EvaluationResult {
  double log_likelihood = 0.0;  // mean per datum under the aggregated predictive
  double error = 0.0;
};

EvaluationResult evaluate(const VariationalBNN& bnn, const Tensor& inputs, const Tensor& targets,
                          std::size_t num_samples, std::uint64_t seed);

// Worker count for prediction-time sampling: BNN_THREADS, default 1.
std::size_t prediction_threads();

// Runs fn(k) for k in [0, n) on up to prediction_threads() workers.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// Network plus guide without a likelihood. Each forward pass draws one
// posterior sample and caches that pass's KL so custom objectives can add it.
class KlCachedModule {
 public:
  KlCachedModule(Network net, MeanFieldGuide guide, KlEstimator kl = KlEstimator::automatic);

  Tensor forward(const Tensor& input, CounterRng& rng, ContextMode mode = ContextMode::plain);
  double cached_kl() const noexcept { return cached_kl_; }

  // Differentiable pass for building custom losses.
  ModelTrace trace(Graph& g, Var input, const NamedTensors& noise, ContextMode mode = ContextMode::plain) const;
  Bindings bindings() const { return parameter_bindings(net_, guide_); }

  Network& net() noexcept { return net_; }
  MeanFieldGuide& guide() noexcept { return guide_; }
  const Network& net() const noexcept { return net_; }
  const MeanFieldGuide& guide() const noexcept { return guide_; }

 private:
  Network net_;
  MeanFieldGuide guide_;
  KlEstimator kl_;
  double cached_kl_ = 0.0;
};

std::pair<Tensor, double> kl_cached_forward(KlCachedModule& module, const Tensor& input, CounterRng& rng);

}  // namespace bnn
