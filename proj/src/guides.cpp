#include "bnn/guides.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "bnn/random.hpp"

namespace bnn {

const GuideSite& MeanFieldGuide::site(const std::string& name) const {
  for (const auto& s : sites)
    if (s.name == name) return s;
  throw ContractError("guide has no site '" + name + "'");
}

GuideSite& MeanFieldGuide::site(const std::string& name) {
  return const_cast<GuideSite&>(std::as_const(*this).site(name));
}

bool MeanFieldGuide::has_site(const std::string& name) const {
  return std::any_of(sites.begin(), sites.end(), [&](const auto& s) { return s.name == name; });
}

DiagonalNormal MeanFieldGuide::distribution(const std::string& name) const {
  const auto& s = site(name);
  return {s.mean, s.sd()};
}

void MeanFieldGuide::apply_constraints() {
  const double lo = std::log(kMinSd);
  const double hi = max_sd ? std::log(*max_sd) : std::numeric_limits<double>::infinity();
  for (auto& s : sites) s.rho.values() = s.rho.values().cwiseMax(lo).cwiseMin(hi);
}

std::map<std::string, Tensor*> MeanFieldGuide::trainable() {
  std::map<std::string, Tensor*> params;
  for (auto& s : sites) {
    if (train_mean) params.emplace(mean_key(s.name), &s.mean);
    if (train_sd) params.emplace(rho_key(s.name), &s.rho);
  }
  return params;
}

MeanFieldGuide init_guide(const Network& net, const InitScheme& scheme, std::optional<double> max_sd) {
  if (!(scheme.sd_init > 0.0)) throw ConfigError("initial guide sd must be positive");
  if (max_sd && !(*max_sd > 0.0)) throw ConfigError("max_sd must be positive");
  if (max_sd && scheme.sd_init > *max_sd)
    throw ConfigError("initial guide sd " + std::to_string(scheme.sd_init) + " exceeds max_sd " +
                      std::to_string(*max_sd));

  MeanFieldGuide guide;
  guide.train_mean = scheme.train_mean;
  guide.train_sd = scheme.train_sd;
  guide.max_sd = max_sd;

  struct MeanVisitor {
    const ParameterSite& site;
    CounterRng& rng;
    Tensor operator()(const SamplePrior&) const { return sample(site.prior(), rng); }
    Tensor operator()(const Pretrained& p) const {
      auto it = p.values.find(site.name);
      if (it == p.values.end()) throw ConfigError("pretrained values are missing site '" + site.name + "'");
      if (it->second.shape() != site.shape)
        throw DimensionError("pretrained value for '" + site.name + "' has shape " +
                             to_string(it->second.shape()));
      return it->second;
    }
    Tensor operator()(const LayerScaled&) const {
      Tensor t = standard_normal(site.shape, rng);
      t.values() /= std::sqrt(static_cast<double>(site.fan_in));
      return t;
    }
  };

  std::uint64_t seed = 0;
  if (const auto* s = std::get_if<SamplePrior>(&scheme.mean_init)) seed = s->seed;
  if (const auto* s = std::get_if<LayerScaled>(&scheme.mean_init)) seed = s->seed;
  CounterRng rng(seed, 0x696e6974);  // "init"

  const double rho = std::log(scheme.sd_init);
  for (const auto& site : net.sites()) {
    if (!site.bayesian()) continue;
    Tensor mean = std::visit(MeanVisitor{site, rng}, scheme.mean_init);
    guide.sites.push_back(GuideSite{site.name, std::move(mean), Tensor(site.shape, rho)});
  }
  guide.apply_constraints();
  return guide;
}

NamedTensors sample_sites(const MeanFieldGuide& guide, const NamedTensors& noise) {
  NamedTensors out;
  for (const auto& s : guide.sites) {
    auto it = noise.find(s.name);
    if (it == noise.end()) throw ContractError("no noise supplied for site '" + s.name + "'");
    out.emplace(s.name, sample_reparameterized(DiagonalNormal(s.mean, s.sd()), it->second));
  }
  return out;
}

double guide_kl(const MeanFieldGuide& guide, const Network& net) {
  double total = 0.0;
  for (const auto& s : guide.sites) {
    const auto* prior = std::get_if<DiagonalNormal>(&net.site(s.name).prior());
    if (!prior)
      throw UnsupportedError("no closed-form KL for the non-Gaussian prior of '" + s.name +
                             "'; use the Monte Carlo estimate");
    total += kl_normal_normal(DiagonalNormal(s.mean, s.sd()), *prior);
  }
  return total;
}

std::map<std::string, DiagonalNormal> export_distributions(const MeanFieldGuide& guide) {
  std::map<std::string, DiagonalNormal> out;
  for (const auto& s : guide.sites) out.emplace(s.name, DiagonalNormal(s.mean, s.sd()));
  return out;
}

}  // namespace bnn
