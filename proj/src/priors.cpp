#include "bnn/priors.hpp"

#include <cmath>

#include "bnn/random.hpp"

namespace bnn {

LayerwiseMethod parse_layerwise_method(const std::string& name) {
  if (name == "radford") return LayerwiseMethod::radford;
  if (name == "xavier") return LayerwiseMethod::xavier;
  if (name == "kaiming") return LayerwiseMethod::kaiming;
  throw ConfigError("unknown layerwise prior method '" + name + "' (radford|xavier|kaiming)");
}

double layerwise_variance(LayerwiseMethod method, std::size_t fan_in, std::size_t fan_out) {
  if (fan_in == 0 || fan_out == 0) throw ContractError("fan_in and fan_out must be >= 1");
  switch (method) {
    case LayerwiseMethod::radford: return 1.0 / static_cast<double>(fan_in);
    case LayerwiseMethod::kaiming: return 2.0 / static_cast<double>(fan_in);
    case LayerwiseMethod::xavier: return 2.0 / static_cast<double>(fan_in + fan_out);
  }
  throw ConfigError("unknown layerwise prior method");
}

void SiteFilter::validate() const {
  if (!expose_names) return;
  for (const auto& n : *expose_names)
    if (hide_names.count(n)) throw ConfigError("site '" + n + "' is both hidden and exposed");
}

bool SiteFilter::exposes(const ParameterSite& site) const {
  if (hide_names.count(site.name) || hide_roles.count(site.role)) return false;
  for (const auto& p : hide_prefixes)
    if (site.name.compare(0, p.size(), p) == 0) return false;
  if (expose_names) return expose_names->count(site.name) > 0;
  return true;
}

namespace {

PriorDistribution resolve(const PriorSpec& spec, const ParameterSite& site) {
  struct Visitor {
    const ParameterSite& site;
    PriorDistribution operator()(const IidPrior& p) const {
      if (numel(shape_of(p.distribution)) != 1)
        throw DimensionError("iid prior template must be a single element");
      return broadcast_to(p.distribution, site.shape);
    }
    PriorDistribution operator()(const LayerwiseNormalPrior& p) const {
      const double sd = std::sqrt(layerwise_variance(p.method, site.fan_in, site.fan_out));
      return DiagonalNormal(Tensor(site.shape, 0.0), Tensor(site.shape, sd));
    }
    PriorDistribution operator()(const DictPrior& p) const {
      auto it = p.mapping.find(site.name);
      if (it == p.mapping.end()) throw ConfigError("dict prior has no entry for site '" + site.name + "'");
      if (it->second.shape() != site.shape)
        throw DimensionError("dict prior for '" + site.name + "' has shape " + to_string(it->second.shape()) +
                             ", site is " + to_string(site.shape));
      return it->second;
    }
    PriorDistribution operator()(const LambdaPrior& p) const {
      if (!p.fn) throw ConfigError("lambda prior has no function");
      PriorDistribution d = p.fn(site);
      if (shape_of(d) != site.shape)
        throw DimensionError("lambda prior for '" + site.name + "' returned shape " + to_string(shape_of(d)) +
                             ", site is " + to_string(site.shape));
      return d;
    }
  };
  return std::visit(Visitor{site}, spec);
}

}  // namespace

Network assign_priors(Network net, const PriorSpec& spec, const SiteFilter& filter, std::uint64_t seed) {
  filter.validate();
  if (filter.expose_names)
    for (const auto& n : *filter.expose_names)
      if (!net.has_site(n)) throw ConfigError("exposed site '" + n + "' does not exist");
  for (const auto& n : filter.hide_names)
    if (!net.has_site(n)) throw ConfigError("hidden site '" + n + "' does not exist");

  CounterRng rng(seed, 0x68696465);  // "hide"
  for (auto& site : net.mutable_sites()) {
    if (filter.exposes(site)) {
      site.treatment = Bayesian{resolve(spec, site)};
    } else if (site.role == SiteRole::weight) {
      Tensor w = standard_normal(site.shape, rng);
      w.values() *= 1.0 / std::sqrt(static_cast<double>(site.fan_in));
      site.treatment = Deterministic{std::move(w)};
    } else {
      site.treatment = Deterministic{Tensor(site.shape, 0.0)};
    }
  }
  return net;
}

Network update_priors(Network net, const std::map<std::string, DiagonalNormal>& priors) {
  for (const auto& [name, dist] : priors) {
    if (!net.has_site(name)) throw ConfigError("prior update names unknown site '" + name + "'");
    if (!net.site(name).bayesian()) throw ConfigError("prior update names deterministic site '" + name + "'");
  }
  for (auto& site : net.mutable_sites()) {
    if (!site.bayesian()) continue;
    auto it = priors.find(site.name);
    if (it == priors.end()) throw ConfigError("prior update is missing bayesian site '" + site.name + "'");
    if (it->second.shape() != site.shape)
      throw DimensionError("prior update for '" + site.name + "' has shape " + to_string(it->second.shape()));
    site.treatment = Bayesian{it->second};
  }
  return net;
}

}  // namespace bnn
