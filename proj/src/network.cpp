#include "bnn/network.hpp"

#include <algorithm>
#include <sstream>
#include <utility>

namespace bnn {

const PriorDistribution& ParameterSite::prior() const {
  if (const auto* b = std::get_if<Bayesian>(&treatment)) return b->prior;
  throw ContractError("site '" + name + "' is deterministic and has no prior");
}

const Tensor& ParameterSite::value() const {
  if (const auto* d = std::get_if<Deterministic>(&treatment)) return d->value;
  throw ContractError("site '" + name + "' is bayesian and has no point value");
}

const ParameterSite& Network::site(const std::string& name) const {
  for (const auto& s : sites_)
    if (s.name == name) return s;
  throw ContractError("unknown site '" + name + "'");
}

ParameterSite& Network::site(const std::string& name) {
  return const_cast<ParameterSite&>(std::as_const(*this).site(name));
}

bool Network::has_site(const std::string& name) const {
  return std::any_of(sites_.begin(), sites_.end(), [&](const auto& s) { return s.name == name; });
}

std::size_t Network::input_width() const {
  for (const auto& l : layers_)
    if (const auto* d = std::get_if<DenseSpec>(&l)) return d->in_features;
  return 0;
}

std::size_t Network::output_width() const {
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
    if (const auto* d = std::get_if<DenseSpec>(&*it)) return d->out_features;
  return 0;
}

std::vector<std::string> Network::bayesian_sites() const {
  std::vector<std::string> names;
  for (const auto& s : sites_)
    if (s.bayesian()) names.push_back(s.name);
  return names;
}

std::vector<std::string> Network::deterministic_sites() const {
  std::vector<std::string> names;
  for (const auto& s : sites_)
    if (!s.bayesian()) names.push_back(s.name);
  return names;
}

NamedTensors Network::deterministic_values() const {
  NamedTensors values;
  for (const auto& s : sites_)
    if (!s.bayesian()) values.emplace(s.name, s.value());
  return values;
}

Network build_network(const std::vector<LayerSpec>& specs) {
  if (specs.empty()) throw ContractError("network needs at least one layer");
  Network net;
  net.layers_ = specs;
  std::optional<std::size_t> width;
  bool any_dense = false;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const auto* dense = std::get_if<DenseSpec>(&specs[k]);
    if (!dense) continue;
    any_dense = true;
    if (dense->in_features == 0 || dense->out_features == 0)
      throw DimensionError("layer" + std::to_string(k) + ": feature counts must be positive");
    if (width && *width != dense->in_features)
      throw DimensionError("layer" + std::to_string(k) + " expects " + std::to_string(dense->in_features) +
                           " inputs but the previous dense layer produces " + std::to_string(*width));
    width = dense->out_features;
    const std::string prefix = "layer" + std::to_string(k);
    ParameterSite w{prefix + ".weight", {dense->out_features, dense->in_features}, SiteRole::weight, k,
                    dense->in_features, dense->out_features,
                    Deterministic{Tensor({dense->out_features, dense->in_features})}};
    net.sites_.push_back(std::move(w));
    if (dense->has_bias) {
      ParameterSite b{prefix + ".bias", {dense->out_features}, SiteRole::bias, k,
                      dense->in_features, dense->out_features, Deterministic{Tensor({dense->out_features})}};
      net.sites_.push_back(std::move(b));
    }
  }
  if (!any_dense) throw ContractError("network needs at least one dense layer");
  return net;
}

std::vector<ParameterSite> list_sites(const Network& net) { return net.sites(); }

std::vector<LayerSpec> parse_architecture(const std::string& text) {
  std::vector<LayerSpec> specs;
  std::istringstream lines(text);
  std::string line;
  int lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream words(line);
    std::string kind;
    if (!(words >> kind)) continue;
    auto fail = [&](const std::string& why) {
      return ParseError("architecture line " + std::to_string(lineno) + ": " + why);
    };
    if (kind == "dense") {
      long long in = 0, out = 0;
      if (!(words >> in >> out) || in <= 0 || out <= 0) throw fail("expected 'dense <in> <out> [bias|nobias]'");
      std::string bias = "bias";
      words >> bias;
      if (bias != "bias" && bias != "nobias") throw fail("bias flag must be 'bias' or 'nobias'");
      specs.push_back(DenseSpec{static_cast<std::size_t>(in), static_cast<std::size_t>(out), bias == "bias"});
    } else if (kind == "tanh") {
      specs.push_back(Activation::tanh);
    } else if (kind == "relu") {
      specs.push_back(Activation::relu);
    } else if (kind == "identity") {
      specs.push_back(Activation::identity);
    } else {
      throw fail("unknown layer '" + kind + "'");
    }
    std::string extra;
    if (words >> extra) throw fail("unexpected token '" + extra + "'");
  }
  if (specs.empty()) throw ParseError("architecture is empty");
  return specs;
}

std::string format_architecture(const std::vector<LayerSpec>& specs) {
  std::ostringstream os;
  for (const auto& l : specs) {
    if (const auto* d = std::get_if<DenseSpec>(&l)) {
      os << "dense " << d->in_features << ' ' << d->out_features << (d->has_bias ? " bias" : " nobias") << '\n';
    } else {
      switch (std::get<Activation>(l)) {
        case Activation::tanh: os << "tanh\n"; break;
        case Activation::relu: os << "relu\n"; break;
        case Activation::identity: os << "identity\n"; break;
      }
    }
  }
  return os.str();
}

Var dense_forward(Var input, Var weight, std::optional<Var> bias) {
  Var out = matmul(input, transpose(weight));
  if (bias) out = out + broadcast(*bias, out.shape());
  return out;
}

Var forward(const Network& net, Var input, const DenseHandler& handler) {
  if (input.shape().size() != 2 || input.shape()[1] != net.input_width())
    throw DimensionError("network expects inputs of shape [B," + std::to_string(net.input_width()) + "], got " +
                         to_string(input.shape()));
  Var x = input;
  const auto& layers = net.layers();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (const auto* dense = std::get_if<DenseSpec>(&layers[k])) {
      const std::string prefix = "layer" + std::to_string(k);
      DenseCall call;
      call.layer = k;
      call.weight = &net.site(prefix + ".weight");
      call.bias = dense->has_bias ? &net.site(prefix + ".bias") : nullptr;
      call.input = x;
      x = handler(call);
    } else {
      switch (std::get<Activation>(layers[k])) {
        case Activation::tanh: x = tanh(x); break;
        case Activation::relu: x = relu(x); break;
        case Activation::identity: break;
      }
    }
  }
  return x;
}

Var forward(const Network& net, const std::map<std::string, Var>& params, Var input) {
  auto lookup = [&](const ParameterSite& s) {
    auto it = params.find(s.name);
    if (it == params.end()) throw ContractError("no value for site '" + s.name + "'");
    return it->second;
  };
  return forward(net, input, [&](const DenseCall& call) {
    std::optional<Var> bias;
    if (call.bias) bias = lookup(*call.bias);
    return dense_forward(call.input, lookup(*call.weight), bias);
  });
}

Tensor forward(const Network& net, const NamedTensors& params, const Tensor& input) {
  if (input.rank() != 2 || input.dim(1) != net.input_width())
    throw DimensionError("network expects inputs of shape [B," + std::to_string(net.input_width()) + "], got " +
                         to_string(input.shape()));
  Graph g;
  std::map<std::string, Var> vars;
  for (const auto& s : net.sites()) {
    auto it = params.find(s.name);
    if (it == params.end()) throw ContractError("no value for site '" + s.name + "'");
    if (it->second.shape() != s.shape)
      throw DimensionError("site '" + s.name + "' expects shape " + to_string(s.shape) + ", got " +
                           to_string(it->second.shape()));
    vars.emplace(s.name, g.constant(it->second));
  }
  const Var out = forward(net, vars, g.constant(input));
  return g.evaluate({}).value(out);
}

}  // namespace bnn
