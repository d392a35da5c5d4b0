#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bnn/autodiff.hpp"
#include "bnn/distributions.hpp"

namespace bnn {

enum class LikelihoodKind { bernoulli, categorical, homoskedastic_gaussian, heteroskedastic_gaussian };

// Observation model p(y | network output). dataset_size is the number of
// observations in the full training set; it sets the mini-batch scaling.
struct Likelihood {
  LikelihoodKind kind = LikelihoodKind::categorical;
  std::size_t dataset_size = 1;
  double sd = 1.0;  // homoskedastic only

  static Likelihood bernoulli(std::size_t n) { return {LikelihoodKind::bernoulli, n}; }
  static Likelihood categorical(std::size_t n) { return {LikelihoodKind::categorical, n}; }
  static Likelihood homoskedastic(std::size_t n, double sd);
  static Likelihood heteroskedastic(std::size_t n) { return {LikelihoodKind::heteroskedastic_gaussian, n}; }

  bool gaussian() const {
    return kind == LikelihoodKind::homoskedastic_gaussian || kind == LikelihoodKind::heteroskedastic_gaussian;
  }
  bool discrete() const { return !gaussian(); }
  // Network output width needed for targets of the given width.
  std::size_t output_width(std::size_t target_width, std::size_t num_classes = 0) const;
};

// "categorical" | "bernoulli" | "gaussian:sd=<x>" | "heteroskedastic"
Likelihood parse_likelihood(const std::string& text, std::size_t dataset_size);
std::string format_likelihood(const Likelihood& lik);

struct ObservationMask {
  std::vector<bool> include;
  std::size_t count() const;
};

// Sum of log p(y_i | prediction_i) over the included rows. Excluded rows are
// dropped before any arithmetic, so the result equals the unmasked value on the
// included subset bit for bit.
Var batch_log_likelihood(const Likelihood& lik, Var predictions, const Tensor& targets,
                         const ObservationMask* mask = nullptr);
double batch_log_likelihood(const Likelihood& lik, const Tensor& predictions, const Tensor& targets,
                            const ObservationMask* mask = nullptr);

// Posterior-predictive summary across S samples.
//  discrete: probabilities (B x K for categorical, B x d for bernoulli), sd empty
//  gaussian: mean and sd (both B x d)
struct Aggregate {
  Tensor mean;
  std::optional<Tensor> sd;
};

Aggregate aggregate_predictions(const Likelihood& lik, const Tensor& stacked);

// Squared error of the aggregated mean, or fraction misclassified.
double error(const Likelihood& lik, const Aggregate& aggregated, const Tensor& targets);

// Total log-likelihood of the targets under the aggregated predictive.
// Homoskedastic models widen the across-sample sd by the observation noise.
double predictive_log_likelihood(const Likelihood& lik, const Aggregate& aggregated, const Tensor& targets);

// Class indices from a (B) or (B,1) target tensor, validated against K.
std::vector<std::size_t> class_labels(const Tensor& targets, std::size_t num_classes);

}  // namespace bnn
