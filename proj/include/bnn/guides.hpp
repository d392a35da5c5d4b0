#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "bnn/network.hpp"

namespace bnn {

struct GuideSite {
  std::string name;
  Tensor mean;
  Tensor rho;  // sd = exp(rho)

  Tensor sd() const { return Tensor(rho.shape(), rho.array().exp()); }
};

// Mean-field Gaussian over the Bayesian sites of a network.
class MeanFieldGuide {
 public:
  std::vector<GuideSite> sites;  // same order as the network's sites
  bool train_mean = true;
  bool train_sd = true;
  std::optional<double> max_sd;

  static std::string mean_key(const std::string& site) { return site + ".mean"; }
  static std::string rho_key(const std::string& site) { return site + ".rho"; }

  const GuideSite& site(const std::string& name) const;
  GuideSite& site(const std::string& name);
  bool has_site(const std::string& name) const;
  DiagonalNormal distribution(const std::string& name) const;

  // Project every rho into [ln 1e-6, ln max_sd].
  void apply_constraints();

  // Optimizable tensors keyed by mean_key/rho_key, honoring the train flags.
  std::map<std::string, Tensor*> trainable();
};

struct SamplePrior {
  std::uint64_t seed = 0;
};
struct Pretrained {
  NamedTensors values;
};
// Means drawn from N(0, 1/fan_in), like the usual deterministic initialization.
struct LayerScaled {
  std::uint64_t seed = 0;
};

using MeanInit = std::variant<SamplePrior, Pretrained, LayerScaled>;

struct InitScheme {
  MeanInit mean_init = LayerScaled{};
  double sd_init = 1e-4;
  bool train_mean = true;
  bool train_sd = true;
};

MeanFieldGuide init_guide(const Network& net, const InitScheme& scheme,
                          std::optional<double> max_sd = std::nullopt);

// mean + sd * noise per site.
NamedTensors sample_sites(const MeanFieldGuide& guide, const NamedTensors& noise);

// Closed-form KL(guide || priors); UnsupportedError if a prior is not Gaussian.
double guide_kl(const MeanFieldGuide& guide, const Network& net);

// Detached copies of the current per-site distributions.
std::map<std::string, DiagonalNormal> export_distributions(const MeanFieldGuide& guide);

}  // namespace bnn
