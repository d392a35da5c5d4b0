#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "bnn/autodiff.hpp"
#include "bnn/distributions.hpp"

namespace bnn {

struct DenseSpec {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  bool has_bias = true;
};

enum class Activation { tanh, relu, identity };

using LayerSpec = std::variant<DenseSpec, Activation>;

enum class SiteRole { weight, bias };

struct Bayesian {
  PriorDistribution prior;
};

struct Deterministic {
  Tensor value;
};

using Treatment = std::variant<Bayesian, Deterministic>;

struct ParameterSite {
  std::string name;  // "layer<k>.weight" / "layer<k>.bias"
  Shape shape;       // weights are out x in
  SiteRole role = SiteRole::weight;
  std::size_t layer = 0;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
  Treatment treatment;

  bool bayesian() const { return std::holds_alternative<Bayesian>(treatment); }
  const PriorDistribution& prior() const;
  const Tensor& value() const;
};

using NamedTensors = std::map<std::string, Tensor>;

class Network {
 public:
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  const std::vector<ParameterSite>& sites() const noexcept { return sites_; }
  std::vector<ParameterSite>& mutable_sites() noexcept { return sites_; }

  const ParameterSite& site(const std::string& name) const;
  ParameterSite& site(const std::string& name);
  bool has_site(const std::string& name) const;

  std::size_t input_width() const;
  std::size_t output_width() const;

  std::vector<std::string> bayesian_sites() const;
  std::vector<std::string> deterministic_sites() const;
  NamedTensors deterministic_values() const;

 private:
  friend Network build_network(const std::vector<LayerSpec>& specs);
  std::vector<LayerSpec> layers_;
  std::vector<ParameterSite> sites_;
};

// Sites start deterministic with zero values until priors are assigned.
Network build_network(const std::vector<LayerSpec>& specs);

std::vector<ParameterSite> list_sites(const Network& net);

// Architecture text: one layer per line, e.g. "dense 1 50 bias", "tanh".
// Blank lines and '#' comments are ignored.
std::vector<LayerSpec> parse_architecture(const std::string& text);
std::string format_architecture(const std::vector<LayerSpec>& specs);

// A dense layer as seen by whoever evaluates it: the input activations plus the
// parameter sites involved. Returning the pre-activation is the handler's job,
// which is how execution contexts swap in their own sampling of the map.
struct DenseCall {
  std::size_t layer = 0;
  const ParameterSite* weight = nullptr;
  const ParameterSite* bias = nullptr;  // null when the layer has no bias
  Var input;
};

using DenseHandler = std::function<Var(const DenseCall&)>;

// x W^T + b with W, b taken from params.
Var dense_forward(Var input, Var weight, std::optional<Var> bias);

// Differentiable forward pass. params supplies one node per site name.
Var forward(const Network& net, const std::map<std::string, Var>& params, Var input);
// Same, with every dense layer delegated to handler.
Var forward(const Network& net, Var input, const DenseHandler& handler);

// Plain evaluation with concrete parameter values.
Tensor forward(const Network& net, const NamedTensors& params, const Tensor& input);

}  // namespace bnn
