// Finite-difference check of ELBO gradients with the noise held fixed.
#pragma once

#include "bnn/svi.hpp"
#include "oracles.hpp"

namespace testing_support {

// Worst relative error over every trainable tensor of bnn.
inline double elbo_gradient_error(bnn::VariationalBNN bnn, const bnn::Batch& batch, const bnn::NamedTensors& noise,
                                  bnn::ContextMode mode, double step = 1e-5, double floor = 1e-3) {
  const bnn::ExecutionContext ctx{mode};
  const auto analytic = bnn::elbo_loss(bnn, batch, noise, ctx).gradients;
  double worst = 0.0;
  for (const auto& [key, ptr] : bnn.trainable()) {
    bnn::Tensor* param = ptr;
    const bnn::Tensor original = *param;
    auto f = [&](const bnn::Tensor& p) {
      *param = p;
      const double loss = bnn::elbo_loss(bnn, batch, noise, ctx).loss;
      *param = original;
      return loss;
    };
    const bnn::Tensor fd = bnn::finite_difference_gradient(f, original, step);
    worst = std::max(worst, oracle::max_relative_error(analytic.at(key), fd, floor));
  }
  return worst;
}

}  // namespace testing_support
