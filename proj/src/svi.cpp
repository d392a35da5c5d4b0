#include "bnn/svi.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace bnn {

namespace {

constexpr double kVarianceFloor = kMinSd * kMinSd;
constexpr std::uint64_t kPredictStream = 0x70726564696374ULL;  // "predict"

const Tensor& noise_at(const NamedTensors& noise, const std::string& key, const Shape& shape) {
  auto it = noise.find(key);
  if (it == noise.end()) throw ContractError("no noise supplied for '" + key + "'");
  if (it->second.shape() != shape)
    throw DimensionError("noise '" + key + "' has shape " + to_string(it->second.shape()) + ", expected " +
                         to_string(shape));
  return it->second;
}

struct SiteVars {
  Var mean;
  Var rho;
  Var sd;
};

class Tracer {
 public:
  Tracer(Graph& g, const Network& net, const MeanFieldGuide& guide, const NamedTensors& noise)
      : g_(g), net_(net), noise_(noise) {
    for (const auto& site : net.sites()) {
      if (site.bayesian()) {
        if (!guide.has_site(site.name)) throw ContractError("guide is missing bayesian site '" + site.name + "'");
        SiteVars v;
        v.mean = g.leaf(MeanFieldGuide::mean_key(site.name), site.shape, guide.train_mean);
        v.rho = g.leaf(MeanFieldGuide::rho_key(site.name), site.shape, guide.train_sd);
        v.sd = exp(v.rho);
        bayes_.emplace(site.name, v);
      } else {
        det_.emplace(site.name, g.leaf(site.name, site.shape, true));
      }
    }
  }

  Var sample(const ParameterSite& site) {
    if (!site.bayesian()) return det_.at(site.name);
    auto it = samples_.find(site.name);
    if (it != samples_.end()) return it->second;
    const SiteVars& v = bayes_.at(site.name);
    const Var w = v.mean + v.sd * g_.constant(noise_at(noise_, site.name, site.shape));
    samples_.emplace(site.name, w);
    return w;
  }

  Var dense(const DenseCall& call, ContextMode mode) {
    const ParameterSite& w = *call.weight;
    const ParameterSite* b = call.bias;
    if (mode == ContextMode::plain || !w.bayesian()) {
      std::optional<Var> bias;
      if (b) bias = sample(*b);
      return dense_forward(call.input, sample(w), bias);
    }
    const SiteVars& wv = bayes_.at(w.name);
    const Var x = call.input;
    const Shape out_shape{x.shape()[0], w.shape[0]};
    Var mean_out = matmul(x, transpose(wv.mean));
    if (b) mean_out = mean_out + broadcast(b->bayesian() ? bayes_.at(b->name).mean : det_.at(b->name), out_shape);

    if (mode == ContextMode::local_reparameterization) {
      Var var = matmul(square(x), transpose(square(wv.sd)));
      if (b && b->bayesian()) var = var + broadcast(square(bayes_.at(b->name).sd), out_shape);
      const Tensor& eps = noise_at(noise_, preactivation_noise_key(call.layer), out_shape);
      return mean_out + sqrt(var + kVarianceFloor) * g_.constant(eps);
    }

    // flipout
    const Shape in_shape = x.shape();
    const Var delta = wv.sd * g_.constant(noise_at(noise_, w.name, w.shape));
    const Var s_in = g_.constant(noise_at(noise_, sign_in_key(call.layer), in_shape));
    const Var s_out = g_.constant(noise_at(noise_, sign_out_key(call.layer), out_shape));
    Var out = mean_out + matmul(x * s_in, transpose(delta)) * s_out;
    if (b && b->bayesian()) {
      const Tensor& eps_b = noise_at(noise_, bias_noise_key(call.layer), out_shape);
      out = out + broadcast(bayes_.at(b->name).sd, out_shape) * g_.constant(eps_b);
    }
    return out;
  }

  Var kl(KlEstimator estimator) {
    Var total = g_.constant(0.0);
    if (estimator == KlEstimator::none) return total;
    for (const auto& site : net_.sites()) {
      if (!site.bayesian()) continue;
      const SiteVars& v = bayes_.at(site.name);
      const PriorDistribution& prior = site.prior();
      const auto* normal = std::get_if<DiagonalNormal>(&prior);
      bool closed = estimator == KlEstimator::closed_form || (estimator == KlEstimator::automatic && normal);
      if (closed && !normal)
        throw UnsupportedError("no closed-form KL for the non-Gaussian prior of '" + site.name + "'");
      if (closed) {
        total = total + kl_normal_normal(v.mean, v.rho, *normal);
      } else {
        const Var w = sample(site);
        total = total + sum(normal_log_prob(w, v.mean, v.sd) - log_prob(prior, w));
      }
    }
    return total;
  }

 private:
  Graph& g_;
  const Network& net_;
  const NamedTensors& noise_;
  std::map<std::string, SiteVars> bayes_;
  std::map<std::string, Var> det_;
  std::map<std::string, Var> samples_;
};

}  // namespace

ContextMode parse_context(const std::string& text) {
  if (text == "plain") return ContextMode::plain;
  if (text == "local-reparam" || text == "local_reparameterization") return ContextMode::local_reparameterization;
  if (text == "flipout") return ContextMode::flipout;
  throw ConfigError("unknown context '" + text + "' (plain|local-reparam|flipout)");
}

std::string format_context(ContextMode mode) {
  switch (mode) {
    case ContextMode::plain: return "plain";
    case ContextMode::local_reparameterization: return "local-reparam";
    case ContextMode::flipout: return "flipout";
  }
  return "?";
}

std::string preactivation_noise_key(std::size_t layer) { return "layer" + std::to_string(layer) + ".preact_noise"; }
std::string sign_in_key(std::size_t layer) { return "layer" + std::to_string(layer) + ".sign_in"; }
std::string sign_out_key(std::size_t layer) { return "layer" + std::to_string(layer) + ".sign_out"; }
std::string bias_noise_key(std::size_t layer) { return "layer" + std::to_string(layer) + ".bias_noise"; }

NamedTensors draw_noise(const Network& net, ContextMode mode, std::size_t rows, CounterRng& rng) {
  NamedTensors noise;
  for (const auto& site : net.sites())
    if (site.bayesian()) noise.emplace(site.name, standard_normal(site.shape, rng));
  if (mode == ContextMode::plain) return noise;
  const auto& layers = net.layers();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto* dense = std::get_if<DenseSpec>(&layers[k]);
    if (!dense) continue;
    const std::string prefix = "layer" + std::to_string(k);
    if (!net.site(prefix + ".weight").bayesian()) continue;
    const Shape out{rows, dense->out_features};
    if (mode == ContextMode::local_reparameterization) {
      noise.emplace(preactivation_noise_key(k), standard_normal(out, rng));
    } else {
      noise.emplace(sign_in_key(k), random_signs({rows, dense->in_features}, rng));
      noise.emplace(sign_out_key(k), random_signs(out, rng));
      if (dense->has_bias && net.site(prefix + ".bias").bayesian())
        noise.emplace(bias_noise_key(k), standard_normal(out, rng));
    }
  }
  return noise;
}

Bindings parameter_bindings(const Network& net, const MeanFieldGuide& guide) {
  Bindings b;
  for (const auto& site : net.sites()) {
    if (site.bayesian()) {
      const GuideSite& gs = guide.site(site.name);
      b.emplace(MeanFieldGuide::mean_key(site.name), gs.mean);
      b.emplace(MeanFieldGuide::rho_key(site.name), gs.rho);
    } else {
      b.emplace(site.name, site.value());
    }
  }
  return b;
}

ModelTrace trace_model(Graph& g, const Network& net, const MeanFieldGuide& guide, KlEstimator kl,
                       ContextMode mode, Var input, const NamedTensors& noise) {
  Tracer tracer(g, net, guide, noise);
  ModelTrace trace;
  trace.output = forward(net, input, [&](const DenseCall& call) { return tracer.dense(call, mode); });
  trace.kl = tracer.kl(kl);
  return trace;
}

Tensor forward_under(const ExecutionContext& ctx, const Network& net, const MeanFieldGuide& guide,
                     const Tensor& input, CounterRng& rng) {
  if (input.rank() != 2) throw DimensionError("inputs must be (B, D), got " + to_string(input.shape()));
  const NamedTensors noise = draw_noise(net, ctx.mode, input.dim(0), rng);
  Graph g;
  const ModelTrace t = trace_model(g, net, guide, KlEstimator::none, ctx.mode, g.constant(input), noise);
  return g.evaluate(parameter_bindings(net, guide)).value(t.output);
}

VariationalBNN::VariationalBNN(Network n, MeanFieldGuide gd, Likelihood lik)
    : net(std::move(n)), guide(std::move(gd)), likelihood(lik) {
  check_consistent();
}

void VariationalBNN::check_consistent() const {
  const auto names = net.bayesian_sites();
  if (names.size() != guide.sites.size()) throw ContractError("guide sites do not match the bayesian sites");
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (guide.sites[i].name != names[i])
      throw ContractError("guide site '" + guide.sites[i].name + "' does not match bayesian site '" + names[i] + "'");
    if (guide.sites[i].mean.shape() != net.site(names[i]).shape)
      throw DimensionError("guide site '" + names[i] + "' has the wrong shape");
  }
  for (const auto& [name, prior] : map_priors) {
    if (!net.has_site(name) || net.site(name).bayesian())
      throw ContractError("MAP prior given for '" + name + "', which is not a deterministic site");
  }
}

std::map<std::string, Tensor*> VariationalBNN::trainable() {
  auto params = guide.trainable();
  for (auto& site : net.mutable_sites())
    if (auto* d = std::get_if<Deterministic>(&site.treatment)) params.emplace(site.name, &d->value);
  return params;
}

ElboResult elbo_loss(const VariationalBNN& bnn, const Batch& batch, const NamedTensors& noise,
                     const ExecutionContext& ctx, const ObservationMask* mask) {
  if (batch.inputs.rank() != 2) throw DimensionError("batch inputs must be (B, D)");
  const std::size_t rows = batch.inputs.dim(0);
  if (bnn.likelihood.dataset_size < rows)
    throw ContractError("dataset_size " + std::to_string(bnn.likelihood.dataset_size) + " is smaller than the batch (" +
                        std::to_string(rows) + ")");
  if (!mask && batch.mask) mask = &*batch.mask;

  Graph g;
  const ModelTrace t = trace_model(g, bnn.net, bnn.guide, bnn.kl, ctx.mode, g.constant(batch.inputs), noise);
  const Var ll = batch_log_likelihood(bnn.likelihood, t.output, batch.targets, mask);
  const double scale = static_cast<double>(bnn.likelihood.dataset_size) / static_cast<double>(rows);
  Var loss = t.kl - ll * scale;
  for (const auto& [name, prior] : bnn.map_priors) {
    const ParameterSite& site = bnn.net.site(name);
    loss = loss - sum(log_prob(PriorDistribution(prior.broadcast_to(site.shape)), g.find_leaf(name)));
  }

  const auto ev = g.evaluate(parameter_bindings(bnn.net, bnn.guide));
  ElboResult r;
  r.loss = ev.scalar(loss);
  r.kl = ev.scalar(t.kl);
  r.log_likelihood = ev.scalar(ll);
  r.gradients = g.backward(loss, ev);
  return r;
}

FitHistory fit(VariationalBNN& bnn, const std::vector<Batch>& data, std::size_t epochs, AdamState& adam,
               const ExecutionContext& ctx, const FitOptions& options) {
  if (epochs == 0) throw ContractError("fit needs at least one epoch");
  if (data.empty()) throw ContractError("fit needs at least one batch");
  bnn.check_consistent();
  FitHistory history;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    double total = 0.0;
    for (const Batch& batch : data) {
      CounterRng rng(bnn.seed, bnn.step);
      const NamedTensors noise = draw_noise(bnn.net, ctx.mode, batch.inputs.dim(0), rng);
      std::optional<ObservationMask> mask;
      if (options.mask_fn) mask = options.mask_fn(batch);
      ElboResult r;
      try {
        r = elbo_loss(bnn, batch, noise, ctx, mask ? &*mask : nullptr);
      } catch (const NumericError& e) {
        throw NumericError("optimization diverged in epoch " + std::to_string(epoch) + ": " + e.what());
      }
      if (!std::isfinite(r.loss))
        throw NumericError("optimization diverged in epoch " + std::to_string(epoch) + ": non-finite loss");
      adam_step(adam, bnn.trainable(), r.gradients);
      bnn.guide.apply_constraints();
      ++bnn.step;
      total += r.loss;
      history.step_loss.push_back(r.loss);
    }
    const double elbo = -total / static_cast<double>(data.size());
    history.epoch_elbo.push_back(elbo);
    if (options.callback && options.callback(epoch, elbo)) {
      history.stop_epoch = epoch;
      break;
    }
  }
  return history;
}

std::size_t prediction_threads() {
  const char* env = std::getenv("BNN_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("BNN_THREADS must be a positive integer, got '") + env + "'");
  return static_cast<std::size_t>(n);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(n, prediction_threads());
  if (workers <= 1) {
    for (std::size_t k = 0; k < n; ++k) fn(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t k; (k = next.fetch_add(1)) < n;) {
        try {
          fn(k);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

Tensor predict_stacked(const VariationalBNN& bnn, const Tensor& inputs, std::size_t num_samples,
                       std::uint64_t seed, const ExecutionContext& ctx) {
  if (num_samples == 0) throw ContractError("predict needs at least one sample");
  if (inputs.rank() != 2) throw DimensionError("inputs must be (B, D), got " + to_string(inputs.shape()));
  const CounterRng base(seed, kPredictStream);
  std::vector<Tensor> outputs(num_samples);
  parallel_for(num_samples, [&](std::size_t k) {
    CounterRng rng = base.split(k);
    outputs[k] = forward_under(ctx, bnn.net, bnn.guide, inputs, rng);
  });
  const Shape& one = outputs.front().shape();
  const std::size_t block = outputs.front().size();
  Tensor stacked({num_samples, one[0], one[1]});
  for (std::size_t k = 0; k < num_samples; ++k)
    stacked.values().segment(static_cast<Eigen::Index>(k * block), static_cast<Eigen::Index>(block)) =
        outputs[k].values();
  return stacked;
}

Aggregate predict(const VariationalBNN& bnn, const Tensor& inputs, std::size_t num_samples, std::uint64_t seed,
                  const ExecutionContext& ctx) {
  return aggregate_predictions(bnn.likelihood, predict_stacked(bnn, inputs, num_samples, seed, ctx));
}

EvaluationResult evaluate(const VariationalBNN& bnn, const Tensor& inputs, const Tensor& targets,
                          std::size_t num_samples, std::uint64_t seed) {
  const Aggregate agg = predict(bnn, inputs, num_samples, seed);
  EvaluationResult r;
  r.log_likelihood =
      predictive_log_likelihood(bnn.likelihood, agg, targets) / static_cast<double>(inputs.dim(0));
  r.error = error(bnn.likelihood, agg, targets);
  return r;
}

KlCachedModule::KlCachedModule(Network net, MeanFieldGuide guide, KlEstimator kl)
    : net_(std::move(net)), guide_(std::move(guide)), kl_(kl) {
  VariationalBNN(net_, guide_, Likelihood{}).check_consistent();
}

ModelTrace KlCachedModule::trace(Graph& g, Var input, const NamedTensors& noise, ContextMode mode) const {
  return trace_model(g, net_, guide_, kl_, mode, input, noise);
}

Tensor KlCachedModule::forward(const Tensor& input, CounterRng& rng, ContextMode mode) {
  if (input.rank() != 2) throw DimensionError("inputs must be (B, D), got " + to_string(input.shape()));
  const NamedTensors noise = draw_noise(net_, mode, input.dim(0), rng);
  Graph g;
  const ModelTrace t = trace(g, g.constant(input), noise, mode);
  const auto ev = g.evaluate(bindings());
  cached_kl_ = ev.scalar(t.kl);
  return ev.value(t.output);
}

std::pair<Tensor, double> kl_cached_forward(KlCachedModule& module, const Tensor& input, CounterRng& rng) {
  Tensor out = module.forward(input, rng);
  return {std::move(out), module.cached_kl()};
}

}  // namespace bnn
