#include "bnn/runner.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "bnn/checkpoint.hpp"
#include "bnn/data.hpp"
#include "bnn/mcmc.hpp"
#include "bnn/metrics.hpp"
#include "bnn/vcl.hpp"

namespace bnn {

namespace {

using nlohmann::json;

double parse_number(const std::string& text, const std::string& what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() || !std::isfinite(v)) throw ConfigError("bad " + what + " '" + text + "'");
  return v;
}

// "k=v,k=v" after the scheme prefix.
std::map<std::string, std::string> parse_options(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("expected key=value, got '" + item + "'");
    if (!out.emplace(item.substr(0, eq), item.substr(eq + 1)).second)
      throw ConfigError("option '" + item.substr(0, eq) + "' given twice");
  }
  return out;
}

Tensor json_tensor(const json& j, const Shape& shape, const std::string& what) {
  if (j.is_number()) return Tensor(shape, j.get<double>());
  if (!j.is_array()) throw ConfigError(what + " must be a number or an array");
  std::vector<double> values;
  for (const auto& v : j) {
    if (!v.is_number()) throw ConfigError(what + " must contain only numbers");
    values.push_back(v.get<double>());
  }
  if (values.size() != numel(shape))
    throw DimensionError(what + " has " + std::to_string(values.size()) + " entries, site has " +
                         std::to_string(numel(shape)));
  return Tensor(shape, std::move(values));
}

DictPrior read_dict_prior(const std::filesystem::path& path, const Network& net) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open prior file '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError("prior file '" + path.string() + "': " + e.what());
  }
  if (!j.is_object()) throw ConfigError("prior file must hold an object keyed by site name");
  DictPrior prior;
  for (const auto& [name, entry] : j.items()) {
    if (!net.has_site(name)) throw ConfigError("prior file names unknown site '" + name + "'");
    if (!entry.is_object() || !entry.contains("mean") || !entry.contains("sd"))
      throw ConfigError("prior entry '" + name + "' needs \"mean\" and \"sd\"");
    const Shape& shape = net.site(name).shape;
    prior.mapping.emplace(name, DiagonalNormal(json_tensor(entry["mean"], shape, name + ".mean"),
                                               json_tensor(entry["sd"], shape, name + ".sd")));
  }
  return prior;
}

struct Resolved {
  ContextMode context = ContextMode::plain;
  std::string likelihood;
  double sd_init = 1e-4;
  std::optional<double> max_sd;
  std::string mean_init = "layer-scaled";
  std::size_t epochs = 0;
  double lr = 1e-3;
  std::size_t batch_size = 0;
  std::string dataset;
  std::size_t num_points = 0;
  HMCConfig hmc;
  std::size_t tasks = 5;
};

bool is_builtin(Subcommand sub, const std::string& name) {
  switch (sub) {
    case Subcommand::regress: return name == "toy";
    case Subcommand::classify:
    case Subcommand::vcl: return name == "two_moons_rotations" || name == "gaussian_blobs";
  }
  return false;
}

Resolved resolve(const RunConfig& c) {
  Resolved r;
  const bool regress = c.subcommand == Subcommand::regress;
  const bool vcl = c.subcommand == Subcommand::vcl;
  r.context = c.context ? parse_context(*c.context) : ContextMode::plain;
  r.likelihood = c.likelihood.value_or(regress ? "gaussian:sd=0.1" : "categorical");
  r.sd_init = c.sd_init.value_or(1e-4);
  r.max_sd = c.max_sd;
  r.mean_init = c.mean_init.value_or("layer-scaled");
  r.epochs = c.epochs.value_or(regress ? 1000 : vcl ? 50 : 200);
  r.lr = c.lr.value_or(1e-3);
  r.batch_size = c.batch_size.value_or(regress ? 0 : 64);
  r.dataset = c.dataset.value_or(regress ? "toy" : vcl ? "gaussian_blobs" : "two_moons_rotations");
  r.num_points = c.num_points.value_or(regress ? 50 : vcl ? 200 : 500);
  r.hmc.step_size = c.step_size.value_or(1e-3);
  r.hmc.leapfrog_steps = c.leapfrog_steps.value_or(50);
  r.hmc.warmup = c.warmup.value_or(500);
  r.hmc.num_samples = c.num_samples.value_or(1000);
  r.hmc.kernel = parse_kernel(c.kernel.value_or("hmc"));
  r.tasks = c.tasks.value_or(5);
  return r;
}

std::string default_architecture(std::size_t in, std::size_t out, Subcommand sub) {
  std::ostringstream a;
  a << "dense " << in << " 50 bias\n" << (sub == Subcommand::regress ? "tanh" : "relu") << "\ndense 50 " << out
    << " bias\n";
  return a.str();
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t count_classes(const Tensor& targets) {
  double hi = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double v = targets[i];
    if (v < 0.0 || v != std::floor(v)) throw ContractError("class labels must be non-negative integers");
    hi = std::max(hi, v);
  }
  return std::max<std::size_t>(2, static_cast<std::size_t>(hi) + 1);
}

struct Model {
  VariationalBNN bnn;
  std::string architecture;
};

Model build_model(const RunConfig& c, const Resolved& r, const Dataset& train) {
  const Likelihood lik = parse_likelihood(r.likelihood, train.size());
  const std::size_t classes = lik.kind == LikelihoodKind::categorical ? count_classes(train.targets) : 0;
  const std::size_t out_width = lik.output_width(train.targets.dim(1), classes);
  const std::string text = c.architecture ? read_text(*c.architecture)
                                          : default_architecture(train.inputs.dim(1), out_width, c.subcommand);
  Network net = build_network(parse_architecture(text));
  if (net.input_width() != train.inputs.dim(1))
    throw DimensionError("architecture takes " + std::to_string(net.input_width()) + " inputs, data has " +
                         std::to_string(train.inputs.dim(1)));
  if (net.output_width() != out_width)
    throw DimensionError("architecture produces " + std::to_string(net.output_width()) + " outputs, likelihood " +
                         format_likelihood(lik) + " needs " + std::to_string(out_width));

  const PriorSpec spec = parse_prior(c.prior, net);
  const bool deterministic = c.inference == Inference::ml || c.inference == Inference::map;
  SiteFilter filter;
  if (deterministic) filter.expose_names.emplace();
  Network assigned = assign_priors(net, spec, filter, c.seed);

  std::map<std::string, DiagonalNormal> map_priors;
  if (c.inference == Inference::map) {
    const Network full = assign_priors(net, spec, {}, c.seed);
    for (const auto& site : full.sites()) {
      const auto* normal = std::get_if<DiagonalNormal>(&site.prior());
      if (!normal) throw ConfigError("map needs a Gaussian prior for '" + site.name + "'");
      map_priors.emplace(site.name, *normal);
    }
  }

  InitScheme scheme;
  scheme.sd_init = r.sd_init;
  if (r.mean_init == "layer-scaled") {
    scheme.mean_init = LayerScaled{c.seed};
  } else if (r.mean_init == "prior") {
    scheme.mean_init = SamplePrior{c.seed};
  } else {
    throw ConfigError("unknown mean init '" + r.mean_init + "' (layer-scaled|prior)");
  }
  MeanFieldGuide guide = init_guide(assigned, scheme, r.max_sd);
  Model m{VariationalBNN(std::move(assigned), std::move(guide), lik), text};
  m.bnn.map_priors = std::move(map_priors);
  m.bnn.seed = c.seed;
  m.bnn.check_consistent();
  return m;
}

struct Split {
  Dataset train;
  Dataset test;
};

Split load_data(const RunConfig& c, const Resolved& r) {
  if (is_builtin(c.subcommand, r.dataset)) {
    if (c.subcommand == Subcommand::regress)
      return {gen_toy_regression(r.num_points, c.seed), gen_toy_regression(r.num_points, c.seed + 1)};
    TaskSequence t = gen_split_tasks(parse_split_kind(r.dataset), 2, r.num_points, c.seed);
    return {std::move(t[0].train), std::move(t[0].test)};
  }
  const Dataset all = load_csv(r.dataset, c.target_column);
  const auto n_test = static_cast<std::size_t>(std::floor(c.test_fraction * static_cast<double>(all.size())));
  if (n_test == 0 || n_test >= all.size())
    throw ConfigError("test fraction leaves an empty train or test split of " + std::to_string(all.size()) + " rows");
  return {slice(all, 0, all.size() - n_test), slice(all, all.size() - n_test, all.size())};
}

std::string run_id(const json& echo) {
  const auto now = std::chrono::system_clock::now().time_since_epoch().count();
  const std::string text = echo.dump() + std::to_string(now);
  std::ostringstream id;
  for (std::uint64_t salt = 0; salt < 3; ++salt) {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ (salt * 0x9e3779b97f4a7c15ULL);
    for (unsigned char ch : text) h = (h ^ ch) * 0x100000001b3ULL;
    id << std::hex << std::setw(16) << std::setfill('0') << h;
  }
  return id.str().substr(0, 40);
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
}

// B x K class probabilities from an aggregate; bernoulli becomes [1-p, p].
Tensor class_probabilities(const Likelihood& lik, const Aggregate& agg) {
  if (lik.kind != LikelihoodKind::bernoulli) return agg.mean;
  if (agg.mean.dim(1) != 1) throw ContractError("calibration needs a single bernoulli output");
  Tensor p({agg.mean.dim(0), 2});
  for (std::size_t i = 0; i < agg.mean.dim(0); ++i) {
    p.at(i, 0) = 1.0 - agg.mean[i];
    p.at(i, 1) = agg.mean[i];
  }
  return p;
}

void write_predictions(const std::filesystem::path& path, const Dataset& data, const Aggregate& agg,
                       const std::optional<std::size_t>& task_column = std::nullopt, bool append = false) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out.precision(17);
  const std::size_t d = data.inputs.dim(1);
  const std::size_t t = data.targets.dim(1);
  const std::size_t w = agg.mean.dim(1);
  if (!append) {
    if (task_column) out << "task,";
    for (std::size_t j = 0; j < d; ++j) out << 'x' << j << ',';
    for (std::size_t j = 0; j < t; ++j) out << "target" << j << ',';
    for (std::size_t j = 0; j < w; ++j) out << "mean" << j << (j + 1 < w || agg.sd ? "," : "");
    if (agg.sd)
      for (std::size_t j = 0; j < w; ++j) out << "sd" << j << (j + 1 < w ? "," : "");
    out << '\n';
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (task_column) out << *task_column << ',';
    for (std::size_t j = 0; j < d; ++j) out << data.inputs.at(i, j) << ',';
    for (std::size_t j = 0; j < t; ++j) out << data.targets.at(i, j) << ',';
    for (std::size_t j = 0; j < w; ++j) out << agg.mean.at(i, j) << (j + 1 < w || agg.sd ? "," : "");
    if (agg.sd)
      for (std::size_t j = 0; j < w; ++j) out << agg.sd->at(i, j) << (j + 1 < w ? "," : "");
    out << '\n';
  }
}

json evaluation_metrics(const RunConfig& c, const Likelihood& lik, const Aggregate& agg, const Dataset& test,
                        const std::function<Aggregate(const Tensor&)>& predict_fn) {
  json m;
  const double n = static_cast<double>(test.size());
  m["nll"] = -predictive_log_likelihood(lik, agg, test.targets) / n;
  const double err = error(lik, agg, test.targets);
  if (lik.gaussian()) {
    m["mse"] = err;
    m["rmse"] = std::sqrt(err);
  } else {
    m["error"] = err;
    m["accuracy"] = 1.0 - err;
    const Tensor probs = class_probabilities(lik, agg);
    const CalibrationReport report = ece(probs, class_labels(test.targets, probs.dim(1)), c.ece_bins);
    m["ece"] = report.ece;
    write_file(c.out / "calibration.json", report.to_json());
    write_file(c.out / "calibration.csv", report.to_csv());
    // Far-shifted copies of the test inputs stand in for out-of-distribution data.
    Tensor ood = test.inputs;
    ood.values().array() += 6.0;
    m["ood_auroc"] = ood_auroc(probs, class_probabilities(lik, predict_fn(ood)));
  }
  return m;
}

json run_single(const RunConfig& c, const Resolved& r, json& echo) {
  const Split data = load_data(c, r);
  Model model = build_model(c, r, data.train);
  echo["architecture_text"] = model.architecture;
  VariationalBNN& bnn = model.bnn;
  json metrics;
  std::function<Aggregate(const Tensor&)> predict_fn;

  if (c.inference == Inference::hmc) {
    const PosteriorSamples samples = hmc_sample(bnn.net, bnn.likelihood, data.train, r.hmc, c.seed);
    save_checkpoint(c.out / "checkpoint.bin", samples_state(samples));
    metrics["acceptance_rate"] = samples.acceptance_rate;
    predict_fn = [&, samples](const Tensor& x) { return predict_from_samples(bnn.net, bnn.likelihood, samples, x); };
  } else {
    AdamState adam(AdamConfig{r.lr});
    if (c.resume) restore_training_state(bnn, adam, load_checkpoint(*c.resume));
    const std::size_t batch = r.batch_size == 0 ? data.train.size() : r.batch_size;
    const FitHistory history =
        fit(bnn, make_batches(data.train, batch), r.epochs, adam, ExecutionContext{r.context});
    save_checkpoint(c.out / "checkpoint.bin", training_state(bnn, adam));
    metrics["final_elbo"] = history.epoch_elbo.back();
    metrics["steps"] = bnn.step;
    predict_fn = [&](const Tensor& x) { return predict(bnn, x, c.samples, c.seed); };
  }

  const Aggregate agg = predict_fn(data.test.inputs);
  write_predictions(c.out / "predictions.csv", data.test, agg);
  metrics.update(evaluation_metrics(c, bnn.likelihood, agg, data.test, predict_fn));
  metrics["train_size"] = data.train.size();
  metrics["test_size"] = data.test.size();
  return metrics;
}

json run_vcl(const RunConfig& c, const Resolved& r, json& echo) {
  const TaskSequence tasks = gen_split_tasks(parse_split_kind(r.dataset), r.tasks, r.num_points, c.seed);
  Model model = build_model(c, r, tasks.front().train);
  echo["architecture_text"] = model.architecture;
  VariationalBNN& bnn = model.bnn;
  SequenceConfig seq;
  seq.epochs = r.epochs;
  seq.batch_size = r.batch_size == 0 ? r.num_points : r.batch_size;
  seq.adam.lr = r.lr;
  seq.context.mode = r.context;
  seq.eval_samples = c.samples;
  seq.eval_seed = c.seed;
  seq.update_prior = c.inference == Inference::mean_field;
  const TaskMatrix matrix = run_task_sequence(bnn, tasks, seq);
  write_file(c.out / "task_matrix.json", matrix.to_json());
  save_checkpoint(c.out / "checkpoint.bin", training_state(bnn, AdamState(seq.adam)));

  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const Aggregate agg = predict(bnn, tasks[t].test.inputs, c.samples, c.seed);
    write_predictions(c.out / "predictions.csv", tasks[t].test, agg, t, t > 0);
  }
  json metrics;
  metrics["final_mean_accuracy"] = matrix.final_mean();
  metrics["final_accuracy"] = matrix.accuracy.back();
  metrics["tasks"] = matrix.tasks();
  return metrics;
}

}  // namespace

Subcommand parse_subcommand(const std::string& text) {
  if (text == "regress") return Subcommand::regress;
  if (text == "classify") return Subcommand::classify;
  if (text == "vcl") return Subcommand::vcl;
  throw ConfigError("unknown subcommand '" + text + "' (regress|classify|vcl)");
}

Inference parse_inference(const std::string& text) {
  if (text == "ml") return Inference::ml;
  if (text == "map") return Inference::map;
  if (text == "mean-field") return Inference::mean_field;
  if (text == "hmc") return Inference::hmc;
  throw ConfigError("unknown inference '" + text + "' (ml|map|mean-field|hmc)");
}

std::string format_inference(Inference inference) {
  switch (inference) {
    case Inference::ml: return "ml";
    case Inference::map: return "map";
    case Inference::mean_field: return "mean-field";
    case Inference::hmc: return "hmc";
  }
  return "?";
}

std::string format_subcommand(Subcommand sub) {
  switch (sub) {
    case Subcommand::regress: return "regress";
    case Subcommand::classify: return "classify";
    case Subcommand::vcl: return "vcl";
  }
  return "?";
}

PriorSpec parse_prior(const std::string& text, const Network& net) {
  const auto colon = text.find(':');
  const std::string scheme = text.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : text.substr(colon + 1);
  if (scheme == "dict") {
    if (rest.size() < 2 || rest[0] != '@') throw ConfigError("dict prior expects dict:@<file.json>");
    return read_dict_prior(rest.substr(1), net);
  }
  const auto opts = parse_options(rest);
  if (scheme == "iid") {
    double sd = 1.0;
    double mean = 0.0;
    for (const auto& [k, v] : opts) {
      if (k == "sd") sd = parse_number(v, "prior sd");
      else if (k == "mean") mean = parse_number(v, "prior mean");
      else throw ConfigError("unknown iid prior option '" + k + "'");
    }
    if (!(sd > 0.0)) throw ConfigError("prior sd must be positive");
    return IidPrior{DiagonalNormal(Tensor::scalar(mean), Tensor::scalar(sd))};
  }
  if (scheme == "layerwise") {
    LayerwiseMethod method = LayerwiseMethod::radford;
    for (const auto& [k, v] : opts) {
      if (k == "method") method = parse_layerwise_method(v);
      else throw ConfigError("unknown layerwise prior option '" + k + "'");
    }
    return LayerwiseNormalPrior{method};
  }
  throw ConfigError("unknown prior '" + text + "' (iid:sd=<x>|layerwise:method=<m>|dict:@<file>)");
}

void RunConfig::validate() const {
  const bool mf = inference == Inference::mean_field;
  const bool hmc = inference == Inference::hmc;
  if (context && !mf) throw ConfigError("--context applies only to mean-field inference");
  if ((sd_init || max_sd || mean_init) && !mf)
    throw ConfigError("guide flags (--sd-init, --max-sd, --mean-init) apply only to mean-field inference");
  if ((step_size || leapfrog_steps || warmup || num_samples || kernel) && !hmc)
    throw ConfigError("HMC flags apply only to --inference hmc");
  if (hmc && (epochs || lr || batch_size || resume))
    throw ConfigError("--epochs, --lr, --batch-size and --resume do not apply to hmc");
  if (subcommand == Subcommand::vcl && hmc) throw ConfigError("vcl does not support hmc");
  if (subcommand == Subcommand::vcl && resume) throw ConfigError("vcl does not support --resume");
  if (tasks && subcommand != Subcommand::vcl) throw ConfigError("--tasks applies only to vcl");
  if (tasks && *tasks < 2) throw ConfigError("--tasks must be at least 2");
  if (epochs && *epochs == 0) throw ConfigError("--epochs must be positive");
  if (lr && !(*lr > 0.0)) throw ConfigError("--lr must be positive");
  if (samples == 0) throw ConfigError("--samples must be positive");
  if (ece_bins == 0) throw ConfigError("--ece-bins must be positive");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("--test-fraction must lie in (0, 1)");
  if (num_points && *num_points == 0) throw ConfigError("--num-points must be positive");
  const Resolved r = resolve(*this);
  const bool builtin = is_builtin(subcommand, r.dataset);
  if (subcommand == Subcommand::vcl && !builtin)
    throw ConfigError("vcl needs a builtin task split (two_moons_rotations|gaussian_blobs)");
  if (!builtin && num_points) throw ConfigError("--num-points applies only to builtin datasets");
  if (hmc) r.hmc.validate();
  if (subcommand == Subcommand::regress && !parse_likelihood(r.likelihood, 1).gaussian())
    throw ConfigError("regress needs a gaussian likelihood");
  if (subcommand != Subcommand::regress && parse_likelihood(r.likelihood, 1).gaussian())
    throw ConfigError(format_subcommand(subcommand) + " needs a categorical or bernoulli likelihood");
}

json RunConfig::echo() const {
  const Resolved r = resolve(*this);
  json j;
  j["subcommand"] = format_subcommand(subcommand);
  j["inference"] = format_inference(inference);
  j["architecture"] = architecture ? architecture->string() : "default";
  j["prior"] = prior;
  j["likelihood"] = r.likelihood;
  j["dataset"] = r.dataset;
  j["seed"] = seed;
  j["samples"] = samples;
  j["ece_bins"] = ece_bins;
  if (is_builtin(subcommand, r.dataset)) {
    j["num_points"] = r.num_points;
  } else {
    j["target_column"] = target_column;
    j["test_fraction"] = test_fraction;
  }
  if (inference == Inference::hmc) {
    j["step_size"] = r.hmc.step_size;
    j["leapfrog_steps"] = r.hmc.leapfrog_steps;
    j["warmup"] = r.hmc.warmup;
    j["num_samples"] = r.hmc.num_samples;
    j["kernel"] = "hmc";
  } else {
    j["epochs"] = r.epochs;
    j["lr"] = r.lr;
    j["batch_size"] = r.batch_size;
    j["optimizer"] = "adam";
    if (resume) j["resume"] = resume->string();
  }
  if (inference == Inference::mean_field) {
    j["context"] = format_context(r.context);
    j["sd_init"] = r.sd_init;
    j["max_sd"] = r.max_sd ? json(*r.max_sd) : json(nullptr);
    j["mean_init"] = r.mean_init;
    j["elbo_samples"] = 1;
  }
  if (subcommand == Subcommand::vcl) j["tasks"] = r.tasks;
  return j;
}

json run(const RunConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  cfg.validate();
  const Resolved r = resolve(cfg);
  std::filesystem::create_directories(cfg.out);

  json echo = cfg.echo();
  json metrics = cfg.subcommand == Subcommand::vcl ? run_vcl(cfg, r, echo) : run_single(cfg, r, echo);

  json doc;
  doc["config"] = std::move(echo);
  doc["metrics"] = std::move(metrics);
  doc["run_id"] = run_id(doc["config"]);
  doc["elapsed_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_file(cfg.out / "metrics.json", doc.dump(2) + "\n");
  return doc;
}

std::string format_error(const std::exception& e) {
  json j;
  const auto* err = dynamic_cast<const Error*>(&e);
  j["error"] = err ? err->kind() : "internal";
  j["message"] = e.what();
  return j.dump();
}

}  // namespace bnn
