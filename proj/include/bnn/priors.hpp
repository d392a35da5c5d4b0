#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "bnn/network.hpp"

namespace bnn {

enum class LayerwiseMethod { radford, xavier, kaiming };

LayerwiseMethod parse_layerwise_method(const std::string& name);

// radford: 1/fan_in, kaiming: 2/fan_in, xavier: 2/(fan_in + fan_out).
double layerwise_variance(LayerwiseMethod method, std::size_t fan_in, std::size_t fan_out);

// The same (scalar) distribution applied element-wise to every site.
struct IidPrior {
  PriorDistribution distribution = DiagonalNormal::standard({});
};

// Zero-mean Gaussian whose variance follows the layer's fan-in/fan-out.
struct LayerwiseNormalPrior {
  LayerwiseMethod method = LayerwiseMethod::radford;
};

struct DictPrior {
  std::map<std::string, DiagonalNormal> mapping;
};

// Evaluated once per exposed site at assignment time.
struct LambdaPrior {
  std::function<PriorDistribution(const ParameterSite&)> fn;
};

using PriorSpec = std::variant<IidPrior, LayerwiseNormalPrior, DictPrior, LambdaPrior>;

// Which sites receive a Bayesian treatment. A site is hidden (kept
// deterministic) if its name, role or a name prefix is listed; when
// expose_names is set only those sites can be Bayesian.
struct SiteFilter {
  std::set<std::string> hide_names;
  std::set<SiteRole> hide_roles;
  std::vector<std::string> hide_prefixes;
  std::optional<std::set<std::string>> expose_names;

  void validate() const;
  bool exposes(const ParameterSite& site) const;
};

// Returns a copy of net with treatments assigned. Hidden sites become
// deterministic: weights drawn from N(0, 1/fan_in) with the given seed,
// biases zero.
Network assign_priors(Network net, const PriorSpec& spec, const SiteFilter& filter = {},
                      std::uint64_t seed = 0);

// Replace the priors of all Bayesian sites; `priors` must name exactly those.
Network update_priors(Network net, const std::map<std::string, DiagonalNormal>& priors);

}  // namespace bnn
