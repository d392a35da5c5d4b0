#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "bnn/autodiff.hpp"

namespace bnn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  Tensor m;
  Tensor v;
  std::uint64_t steps = 0;
};

// Bias-corrected Adam. Moments are created lazily, shaped like their
// parameters, the first time a parameter receives a gradient.
struct AdamState {
  AdamConfig hyper;
  std::map<std::string, AdamMoments> moments;

  explicit AdamState(AdamConfig config = {}) : hyper(config) {}
  void reset() { moments.clear(); }
};

// Descends along grads; parameters without a gradient entry are left alone.
void adam_step(AdamState& state, const std::map<std::string, Tensor*>& params, const Gradients& grads);

}  // namespace bnn
