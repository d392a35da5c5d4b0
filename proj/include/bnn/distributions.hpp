#pragma once

#include <variant>

#include "bnn/autodiff.hpp"
#include "bnn/random.hpp"
#include "bnn/tensor.hpp"

namespace bnn {

inline constexpr double kMinSd = 1e-6;
inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

// Factorized Gaussian. Standard deviations below kMinSd are raised to it;
// negative or non-finite ones are rejected.
class DiagonalNormal {
 public:
  DiagonalNormal(Tensor mean, Tensor sd);
  static DiagonalNormal standard(const Shape& shape) { return {Tensor(shape, 0.0), Tensor(shape, 1.0)}; }

  const Tensor& mean() const noexcept { return mean_; }
  const Tensor& sd() const noexcept { return sd_; }
  const Shape& shape() const noexcept { return mean_.shape(); }

  // Same per-element distribution repeated to a new shape; only valid for
  // scalar (single element) templates or when the shape already matches.
  DiagonalNormal broadcast_to(const Shape& shape) const;

 private:
  Tensor mean_;
  Tensor sd_;
};

// Factorized Laplace; a non-Gaussian prior with no closed-form KL against a
// Gaussian guide.
class DiagonalLaplace {
 public:
  DiagonalLaplace(Tensor loc, Tensor scale);

  const Tensor& loc() const noexcept { return loc_; }
  const Tensor& scale() const noexcept { return scale_; }
  const Shape& shape() const noexcept { return loc_.shape(); }
  DiagonalLaplace broadcast_to(const Shape& shape) const;

 private:
  Tensor loc_;
  Tensor scale_;
};

struct BernoulliDist {
  Tensor logits;
};

// Logits of shape (B, K) or (K); rows are independent categoricals.
struct CategoricalDist {
  explicit CategoricalDist(Tensor logits);
  Tensor logits;
  std::size_t num_classes() const { return logits.cols(); }
  std::size_t batch() const { return logits.rows(); }
};

// Prior distributions a parameter site may carry.
using PriorDistribution = std::variant<DiagonalNormal, DiagonalLaplace>;

const Shape& shape_of(const PriorDistribution& d);
PriorDistribution broadcast_to(const PriorDistribution& d, const Shape& shape);
bool is_normal(const PriorDistribution& d);

// Per-element log densities / masses.
Tensor log_prob(const DiagonalNormal& d, const Tensor& value);
Tensor log_prob(const DiagonalLaplace& d, const Tensor& value);
Tensor log_prob(const PriorDistribution& d, const Tensor& value);
Tensor log_prob(const BernoulliDist& d, const Tensor& value);
// value holds one class index per row.
Tensor log_prob(const CategoricalDist& d, const Tensor& value);

Tensor sample_reparameterized(const DiagonalNormal& d, const Tensor& noise);
Tensor sample(const PriorDistribution& d, CounterRng& rng);

double kl_normal_normal(const DiagonalNormal& q, const DiagonalNormal& p);

// Row-wise -sum p ln p.
Tensor entropy(const CategoricalDist& d);
Tensor probabilities(const CategoricalDist& d);
Tensor probabilities(const BernoulliDist& d);

// Differentiable counterparts used when building objectives.
Var sample_reparameterized(Var mean, Var sd, Var noise);
Var normal_log_prob(Var value, Var mean, Var sd);
Var log_prob(const PriorDistribution& d, Var value);
// KL(N(mean, exp(log_sd)) || p), summed over elements.
Var kl_normal_normal(Var q_mean, Var q_log_sd, const DiagonalNormal& p);

}  // namespace bnn
