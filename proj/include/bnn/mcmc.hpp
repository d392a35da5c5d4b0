#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "bnn/data.hpp"
#include "bnn/likelihoods.hpp"
#include "bnn/network.hpp"

namespace bnn {

enum class HmcKernel { hmc, nuts };

HmcKernel parse_kernel(const std::string& name);

struct HMCConfig {
  double step_size = 1e-3;
  std::size_t leapfrog_steps = 50;
  std::size_t warmup = 500;
  std::size_t num_samples = 1000;
  // Per-site diagonal mass; identity when empty.
  std::optional<NamedTensors> mass;
  HmcKernel kernel = HmcKernel::hmc;

  void validate() const;
};

struct PosteriorSamples {
  std::vector<NamedTensors> samples;
  double acceptance_rate = 0.0;
};

struct Potential {
  double value = 0.0;
  NamedTensors gradient;
};

// U(w) = -(full-data log-likelihood + log prior) over the Bayesian sites, with
// deterministic sites held at their current values. The graph is built once
// and replayed for every evaluation.
class PotentialEnergy {
 public:
  PotentialEnergy(const Network& net, const Likelihood& lik, const std::optional<Dataset>& data);

  Potential operator()(const NamedTensors& params) const;

 private:
  Graph graph_;
  Var u_;
  std::vector<std::string> sites_;
};

Potential potential_energy(const Network& net, const Likelihood& lik, const NamedTensors& params,
                           const std::optional<Dataset>& data);

using GradientFn = std::function<Potential(const NamedTensors&)>;

struct LeapfrogResult {
  NamedTensors position;
  NamedTensors momentum;
  Potential potential;  // at the final position; meaningless when diverged
  bool diverged = false;
};

// Half kick, drift, half kick, `steps` times. `start` is the potential at
// `position`. inverse_mass may be null for the identity.
LeapfrogResult leapfrog(NamedTensors position, NamedTensors momentum, const Potential& start, double step_size,
                        std::size_t steps, const GradientFn& potential, const NamedTensors* inverse_mass = nullptr);

double kinetic_energy(const NamedTensors& momentum, const NamedTensors* inverse_mass = nullptr);

// Starts from a draw of the priors unless init is given.
PosteriorSamples hmc_sample(const Network& net, const Likelihood& lik, const std::optional<Dataset>& data,
                            const HMCConfig& cfg, std::uint64_t seed,
                            const std::optional<NamedTensors>& init = std::nullopt);

// S x B x width stack of outputs, one forward per sample.
Tensor predict_stacked(const Network& net, const PosteriorSamples& samples, const Tensor& inputs);

Aggregate predict_from_samples(const Network& net, const Likelihood& lik, const PosteriorSamples& samples,
                               const Tensor& inputs);

}  // namespace bnn
