#include "bnn/optim.hpp"

#include <cmath>

namespace bnn {

void adam_step(AdamState& state, const std::map<std::string, Tensor*>& params, const Gradients& grads) {
  const AdamConfig& h = state.hyper;
  for (const auto& [name, param] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) continue;
    if (g->second.shape() != param->shape())
      throw DimensionError("gradient for '" + name + "' has shape " + to_string(g->second.shape()) +
                           ", parameter is " + to_string(param->shape()));
    auto [it, fresh] = state.moments.try_emplace(name);
    AdamMoments& mo = it->second;
    if (fresh || mo.m.shape() != param->shape()) {
      mo.m = Tensor::zeros_like(*param);
      mo.v = Tensor::zeros_like(*param);
      mo.steps = 0;
    }
    ++mo.steps;
    const auto grad = g->second.array();
    mo.m.values() = h.beta1 * mo.m.values().array() + (1.0 - h.beta1) * grad;
    mo.v.values() = h.beta2 * mo.v.values().array() + (1.0 - h.beta2) * grad.square();
    const double t = static_cast<double>(mo.steps);
    const double c1 = 1.0 - std::pow(h.beta1, t);
    const double c2 = 1.0 - std::pow(h.beta2, t);
    param->values().array() -= h.lr * (mo.m.array() / c1) / ((mo.v.array() / c2).sqrt() + h.eps);
  }
}

}  // namespace bnn
