#include "bnn/mcmc.hpp"

#include <cmath>

#include "bnn/random.hpp"

namespace bnn {

namespace {

Tensor scaled_by(const Tensor& t, const NamedTensors* inverse_mass, const std::string& name) {
  if (!inverse_mass) return t;
  return Tensor(t.shape(), t.values().cwiseProduct(inverse_mass->at(name).values()));
}

bool finite(const NamedTensors& tensors) {
  for (const auto& [name, t] : tensors)
    if (!t.all_finite()) return false;
  return true;
}

}  // namespace

HmcKernel parse_kernel(const std::string& name) {
  if (name == "hmc") return HmcKernel::hmc;
  if (name == "nuts") return HmcKernel::nuts;
  throw ConfigError("unknown kernel '" + name + "' (hmc|nuts)");
}

void HMCConfig::validate() const {
  if (kernel == HmcKernel::nuts) throw UnsupportedError("kernel=nuts is not supported; use kernel=hmc");
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ConfigError("HMC step size must be positive");
  if (leapfrog_steps == 0) throw ConfigError("HMC needs at least one leapfrog step");
  if (num_samples == 0) throw ConfigError("HMC needs at least one sample");
  if (mass) {
    for (const auto& [name, m] : *mass)
      if (!(m.values().minCoeff() > 0.0) || !m.all_finite())
        throw ConfigError("mass entries for '" + name + "' must be positive");
  }
}

PotentialEnergy::PotentialEnergy(const Network& net, const Likelihood& lik, const std::optional<Dataset>& data) {
  std::map<std::string, Var> params;
  Var log_joint = graph_.constant(0.0);
  for (const auto& site : net.sites()) {
    if (site.bayesian()) {
      const Var w = graph_.leaf(site.name, site.shape);
      params.emplace(site.name, w);
      log_joint = log_joint + sum(log_prob(site.prior(), w));
      sites_.push_back(site.name);
    } else {
      params.emplace(site.name, graph_.constant(site.value()));
    }
  }
  if (data) {
    const Var out = forward(net, params, graph_.constant(data->inputs));
    log_joint = log_joint + batch_log_likelihood(lik, out, data->targets);
  }
  u_ = -log_joint;
}

Potential PotentialEnergy::operator()(const NamedTensors& params) const {
  Bindings b;
  for (const auto& name : sites_) {
    auto it = params.find(name);
    if (it == params.end()) throw ContractError("no value for bayesian site '" + name + "'");
    b.emplace(name, it->second);
  }
  const auto ev = graph_.evaluate(b);
  Potential p;
  p.value = ev.scalar(u_);
  if (!std::isfinite(p.value)) throw NumericError("non-finite potential energy");
  for (auto& [name, g] : graph_.backward(u_, ev)) p.gradient.emplace(name, std::move(g));
  return p;
}

Potential potential_energy(const Network& net, const Likelihood& lik, const NamedTensors& params,
                           const std::optional<Dataset>& data) {
  return PotentialEnergy(net, lik, data)(params);
}

double kinetic_energy(const NamedTensors& momentum, const NamedTensors* inverse_mass) {
  double k = 0.0;
  for (const auto& [name, p] : momentum)
    k += 0.5 * p.values().dot(scaled_by(p, inverse_mass, name).values());
  return k;
}

LeapfrogResult leapfrog(NamedTensors position, NamedTensors momentum, const Potential& start, double step_size,
                        std::size_t steps, const GradientFn& potential, const NamedTensors* inverse_mass) {
  LeapfrogResult r;
  r.potential = start;
  const double half = 0.5 * step_size;
  try {
    for (std::size_t s = 0; s < steps; ++s) {
      for (auto& [name, p] : momentum) p.values() -= half * r.potential.gradient.at(name).values();
      for (auto& [name, q] : position) q.values() += step_size * scaled_by(momentum.at(name), inverse_mass, name).values();
      if (!finite(position)) throw NumericError("non-finite position");
      r.potential = potential(position);
      for (auto& [name, p] : momentum) p.values() -= half * r.potential.gradient.at(name).values();
      if (!finite(momentum)) throw NumericError("non-finite momentum");
    }
  } catch (const NumericError&) {
    r.diverged = true;
  }
  r.position = std::move(position);
  r.momentum = std::move(momentum);
  return r;
}

PosteriorSamples hmc_sample(const Network& net, const Likelihood& lik, const std::optional<Dataset>& data,
                            const HMCConfig& cfg, std::uint64_t seed, const std::optional<NamedTensors>& init) {
  cfg.validate();
  const auto names = net.bayesian_sites();
  if (names.empty()) throw ContractError("HMC needs at least one bayesian site");

  std::optional<NamedTensors> inverse_mass;
  if (cfg.mass) {
    inverse_mass.emplace();
    for (const auto& name : names) {
      auto it = cfg.mass->find(name);
      if (it == cfg.mass->end()) throw ConfigError("no mass given for site '" + name + "'");
      if (it->second.shape() != net.site(name).shape) throw DimensionError("mass for '" + name + "' has the wrong shape");
      inverse_mass->emplace(name, Tensor(it->second.shape(), it->second.array().inverse()));
    }
  }
  const NamedTensors* inv = inverse_mass ? &*inverse_mass : nullptr;

  CounterRng rng(seed, 0x686d63);  // "hmc"
  NamedTensors position;
  if (init) {
    for (const auto& name : names) {
      auto it = init->find(name);
      if (it == init->end()) throw ConfigError("initial state is missing site '" + name + "'");
      position.emplace(name, it->second);
    }
  } else {
    for (const auto& name : names) position.emplace(name, sample(net.site(name).prior(), rng));
  }

  const PotentialEnergy energy(net, lik, data);
  const GradientFn fn = [&](const NamedTensors& q) { return energy(q); };
  Potential current = energy(position);

  PosteriorSamples out;
  out.samples.reserve(cfg.num_samples);
  std::size_t accepted_warmup = 0;
  std::size_t accepted = 0;
  const std::size_t total = cfg.warmup + cfg.num_samples;
  for (std::size_t it = 0; it < total; ++it) {
    NamedTensors momentum;
    for (const auto& name : names) {
      Tensor p = standard_normal(net.site(name).shape, rng);
      if (cfg.mass) p.values() = p.values().cwiseProduct(cfg.mass->at(name).values().cwiseSqrt());
      momentum.emplace(name, std::move(p));
    }
    const double h0 = current.value + kinetic_energy(momentum, inv);
    LeapfrogResult prop = leapfrog(position, std::move(momentum), current, cfg.step_size, cfg.leapfrog_steps, fn, inv);
    const double u = rng.uniform();
    bool accept = false;
    if (!prop.diverged) {
      const double h1 = prop.potential.value + kinetic_energy(prop.momentum, inv);
      accept = std::isfinite(h1) && std::log(u) < h0 - h1;
    }
    if (accept) {
      position = std::move(prop.position);
      current = std::move(prop.potential);
    }
    if (it < cfg.warmup) {
      accepted_warmup += accept;
      if (it + 1 == cfg.warmup && static_cast<double>(accepted_warmup) / static_cast<double>(cfg.warmup) < 0.01)
        throw DiagnosticError("HMC acceptance rate " +
                              std::to_string(static_cast<double>(accepted_warmup) / static_cast<double>(cfg.warmup)) +
                              " during warmup is below 0.01; try a smaller step size");
    } else {
      accepted += accept;
      out.samples.push_back(position);
    }
  }
  out.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(cfg.num_samples);
  return out;
}

Tensor predict_stacked(const Network& net, const PosteriorSamples& samples, const Tensor& inputs) {
  if (samples.samples.empty()) throw ContractError("no posterior samples");
  if (inputs.rank() != 2) throw DimensionError("inputs must be (B, D), got " + to_string(inputs.shape()));
  const std::size_t n = samples.samples.size();
  std::vector<Tensor> outputs(n);
  NamedTensors fixed = net.deterministic_values();
  parallel_for(n, [&](std::size_t k) {
    NamedTensors params = fixed;
    for (const auto& [name, t] : samples.samples[k]) params.insert_or_assign(name, t);
    outputs[k] = forward(net, params, inputs);
  });
  const Shape& one = outputs.front().shape();
  const std::size_t block = outputs.front().size();
  Tensor stacked({n, one[0], one[1]});
  for (std::size_t k = 0; k < n; ++k)
    stacked.values().segment(static_cast<Eigen::Index>(k * block), static_cast<Eigen::Index>(block)) =
        outputs[k].values();
  return stacked;
}

Aggregate predict_from_samples(const Network& net, const Likelihood& lik, const PosteriorSamples& samples,
                               const Tensor& inputs) {
  return aggregate_predictions(lik, predict_stacked(net, samples, inputs));
}

}  // namespace bnn
