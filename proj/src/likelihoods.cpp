#include "bnn/likelihoods.hpp"

#include <cmath>
#include <sstream>

namespace bnn {

namespace {

constexpr double kHeteroskedasticFloor = 1e-6;

Tensor as_matrix(const Tensor& t) {
  if (t.rank() == 2) return t;
  if (t.rank() == 1) return t.reshaped({t.dim(0), 1});
  throw DimensionError("targets must have shape (B) or (B, d), got " + to_string(t.shape()));
}

std::vector<std::size_t> included_rows(const ObservationMask& mask, std::size_t rows) {
  if (mask.include.size() != rows)
    throw DimensionError("mask has " + std::to_string(mask.include.size()) + " entries for a batch of " +
                         std::to_string(rows));
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < rows; ++i)
    if (mask.include[i]) keep.push_back(i);
  return keep;
}

// (n x rows) 0/1 matrix picking the kept rows.
Tensor selection(const std::vector<std::size_t>& keep, std::size_t rows) {
  Tensor s({keep.size(), rows});
  for (std::size_t i = 0; i < keep.size(); ++i) s.at(i, keep[i]) = 1.0;
  return s;
}

Tensor select_rows(const Tensor& t, const std::vector<std::size_t>& keep) {
  const std::size_t width = t.cols();
  Tensor out({keep.size(), width});
  for (std::size_t i = 0; i < keep.size(); ++i)
    for (std::size_t c = 0; c < width; ++c) out.at(i, c) = t.at(keep[i], c);
  return out;
}

// (2d x d) matrix copying columns [offset, offset + d).
Tensor column_block(std::size_t width, std::size_t d, std::size_t offset) {
  Tensor s({width, d});
  for (std::size_t j = 0; j < d; ++j) s.at(offset + j, j) = 1.0;
  return s;
}

void check_binary(const Tensor& y) {
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] != 0.0 && y[i] != 1.0)
      throw SupportError("bernoulli target " + std::to_string(y[i]) + " not in {0,1}");
}

Var unmasked_log_likelihood(const Likelihood& lik, Var pred, const Tensor& targets) {
  Graph& g = *pred.graph();
  const Shape& ps = pred.shape();
  if (ps.size() != 2) throw DimensionError("predictions must be (B, width), got " + to_string(ps));
  const std::size_t rows = ps[0];
  switch (lik.kind) {
    case LikelihoodKind::categorical: {
      const auto labels = class_labels(targets, ps[1]);
      if (labels.size() != rows) throw DimensionError("categorical: label count does not match batch");
      Tensor onehot(ps);
      for (std::size_t i = 0; i < rows; ++i) onehot.at(i, labels[i]) = 1.0;
      return sum(log_softmax(pred) * g.constant(onehot));
    }
    case LikelihoodKind::bernoulli: {
      const Tensor y = as_matrix(targets);
      if (y.shape() != ps)
        throw DimensionError("bernoulli: targets " + to_string(y.shape()) + " vs predictions " + to_string(ps));
      check_binary(y);
      return sum(pred * g.constant(y) - softplus(pred));
    }
    case LikelihoodKind::homoskedastic_gaussian: {
      const Tensor y = as_matrix(targets);
      if (y.shape() != ps)
        throw DimensionError("gaussian: targets " + to_string(y.shape()) + " vs predictions " + to_string(ps));
      const double per_element = -std::log(lik.sd) - kHalfLog2Pi;
      return sum(square(pred - g.constant(y)) * (-0.5 / (lik.sd * lik.sd))) +
             static_cast<double>(y.size()) * per_element;
    }
    case LikelihoodKind::heteroskedastic_gaussian: {
      const Tensor y = as_matrix(targets);
      const std::size_t d = y.cols();
      if (y.rows() != rows || ps[1] != 2 * d)
        throw DimensionError("heteroskedastic: predictions " + to_string(ps) + " need width 2x the target width " +
                             std::to_string(d));
      const Var mu = matmul(pred, g.constant(column_block(2 * d, d, 0)));
      const Var sd = softplus(matmul(pred, g.constant(column_block(2 * d, d, d)))) + kHeteroskedasticFloor;
      return sum(normal_log_prob(g.constant(y), mu, sd));
    }
  }
  throw ContractError("unknown likelihood");
}

}  // namespace

Likelihood Likelihood::homoskedastic(std::size_t n, double sd) {
  if (!(sd > 0.0)) throw ConfigError("gaussian likelihood sd must be positive");
  Likelihood lik{LikelihoodKind::homoskedastic_gaussian, n};
  lik.sd = sd;
  return lik;
}

std::size_t Likelihood::output_width(std::size_t target_width, std::size_t num_classes) const {
  switch (kind) {
    case LikelihoodKind::categorical: return num_classes;
    case LikelihoodKind::heteroskedastic_gaussian: return 2 * target_width;
    default: return target_width;
  }
}

Likelihood parse_likelihood(const std::string& text, std::size_t dataset_size) {
  if (text == "categorical") return Likelihood::categorical(dataset_size);
  if (text == "bernoulli") return Likelihood::bernoulli(dataset_size);
  if (text == "heteroskedastic") return Likelihood::heteroskedastic(dataset_size);
  if (text == "gaussian") return Likelihood::homoskedastic(dataset_size, 1.0);
  const std::string prefix = "gaussian:sd=";
  if (text.rfind(prefix, 0) == 0) {
    const std::string value = text.substr(prefix.size());
    std::size_t used = 0;
    double sd = 0.0;
    try {
      sd = std::stod(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != value.size()) throw ConfigError("bad likelihood sd '" + value + "'");
    return Likelihood::homoskedastic(dataset_size, sd);
  }
  throw ConfigError("unknown likelihood '" + text + "' (categorical|bernoulli|gaussian:sd=<x>|heteroskedastic)");
}

std::string format_likelihood(const Likelihood& lik) {
  switch (lik.kind) {
    case LikelihoodKind::categorical: return "categorical";
    case LikelihoodKind::bernoulli: return "bernoulli";
    case LikelihoodKind::heteroskedastic_gaussian: return "heteroskedastic";
    case LikelihoodKind::homoskedastic_gaussian: {
      std::ostringstream os;
      os.precision(17);
      os << "gaussian:sd=" << lik.sd;
      return os.str();
    }
  }
  return "?";
}

std::size_t ObservationMask::count() const {
  std::size_t n = 0;
  for (bool b : include) n += b ? 1 : 0;
  return n;
}

std::vector<std::size_t> class_labels(const Tensor& targets, std::size_t num_classes) {
  if (!(targets.rank() == 1 || (targets.rank() == 2 && targets.dim(1) == 1)))
    throw DimensionError("class labels must have shape (B) or (B,1), got " + to_string(targets.shape()));
  std::vector<std::size_t> labels(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double y = targets[i];
    if (y < 0.0 || std::floor(y) != y || y >= static_cast<double>(num_classes))
      throw SupportError("class label " + std::to_string(y) + " outside {0.." + std::to_string(num_classes - 1) +
                         "}");
    labels[i] = static_cast<std::size_t>(y);
  }
  return labels;
}

Var batch_log_likelihood(const Likelihood& lik, Var predictions, const Tensor& targets,
                         const ObservationMask* mask) {
  if (!mask) return unmasked_log_likelihood(lik, predictions, targets);
  Graph& g = *predictions.graph();
  const std::size_t rows = predictions.shape().at(0);
  const auto keep = included_rows(*mask, rows);
  if (keep.empty()) return g.constant(0.0);
  const Tensor y = targets.rank() == 1 ? targets.reshaped({targets.dim(0), 1}) : targets;
  if (y.rows() != rows) throw DimensionError("targets do not match the batch");
  Tensor kept_targets = select_rows(y, keep);
  if (targets.rank() == 1) kept_targets = kept_targets.reshaped({keep.size()});
  const Var kept = matmul(g.constant(selection(keep, rows)), predictions);
  return unmasked_log_likelihood(lik, kept, kept_targets);
}

double batch_log_likelihood(const Likelihood& lik, const Tensor& predictions, const Tensor& targets,
                            const ObservationMask* mask) {
  Graph g;
  const Var out = batch_log_likelihood(lik, g.constant(predictions), targets, mask);
  return g.evaluate({}).scalar(out);
}

Aggregate aggregate_predictions(const Likelihood& lik, const Tensor& stacked) {
  if (stacked.rank() != 3) throw DimensionError("stacked predictions must be (S, B, width)");
  const std::size_t S = stacked.dim(0), B = stacked.dim(1), W = stacked.dim(2);
  const double s = static_cast<double>(S);
  auto sample = [&](std::size_t k) {
    return Eigen::Map<const RowMatrix<double>>(stacked.values().data() + k * B * W, static_cast<Eigen::Index>(B),
                                               static_cast<Eigen::Index>(W));
  };

  switch (lik.kind) {
    case LikelihoodKind::categorical: {
      RowMatrix<double> acc = RowMatrix<double>::Zero(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(W));
      for (std::size_t k = 0; k < S; ++k) acc += probabilities(CategoricalDist(Tensor({B, W}, sample(k)))).matrix();
      return {Tensor({B, W}, acc / s), std::nullopt};
    }
    case LikelihoodKind::bernoulli: {
      RowMatrix<double> acc = RowMatrix<double>::Zero(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(W));
      for (std::size_t k = 0; k < S; ++k)
        acc += sample(k).unaryExpr([](double x) { return sigmoid(x); });
      return {Tensor({B, W}, acc / s), std::nullopt};
    }
    case LikelihoodKind::homoskedastic_gaussian: {
      RowMatrix<double> mean = RowMatrix<double>::Zero(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(W));
      for (std::size_t k = 0; k < S; ++k) mean += sample(k);
      mean /= s;
      RowMatrix<double> var = RowMatrix<double>::Zero(mean.rows(), mean.cols());
      for (std::size_t k = 0; k < S; ++k) var.array() += (sample(k) - mean).array().square();
      var /= s;
      return {Tensor({B, W}, mean), Tensor({B, W}, var.array().sqrt())};
    }
    case LikelihoodKind::heteroskedastic_gaussian: {
      if (W % 2 != 0) throw DimensionError("heteroskedastic predictions need an even width");
      const std::size_t d = W / 2;
      const auto rows = static_cast<Eigen::Index>(B), cols = static_cast<Eigen::Index>(d);
      RowMatrix<double> precision = RowMatrix<double>::Zero(rows, cols);
      RowMatrix<double> weighted = RowMatrix<double>::Zero(rows, cols);
      RowMatrix<double> mu_sum = RowMatrix<double>::Zero(rows, cols);
      for (std::size_t k = 0; k < S; ++k) {
        const auto m = sample(k);
        const RowMatrix<double> mu = m.leftCols(cols);
        const RowMatrix<double> sd =
            m.rightCols(cols).unaryExpr([](double x) { return softplus(x) + kHeteroskedasticFloor; });
        const RowMatrix<double> p = sd.array().square().inverse().matrix();
        precision += p;
        weighted += (mu.array() * p.array()).matrix();
        mu_sum += mu;
      }
      const RowMatrix<double> mean = (weighted.array() / precision.array()).matrix();
      const RowMatrix<double> mu_mean = mu_sum / s;
      RowMatrix<double> spread = RowMatrix<double>::Zero(rows, cols);
      for (std::size_t k = 0; k < S; ++k)
        spread.array() += (sample(k).leftCols(cols) - mu_mean).array().square();
      spread /= s;
      const RowMatrix<double> var = (s / precision.array()).matrix() + spread;
      return {Tensor({B, d}, mean), Tensor({B, d}, var.array().sqrt())};
    }
  }
  throw ContractError("unknown likelihood");
}

double error(const Likelihood& lik, const Aggregate& agg, const Tensor& targets) {
  const Tensor& p = agg.mean;
  if (lik.gaussian()) {
    const Tensor y = as_matrix(targets);
    if (y.shape() != p.shape()) throw DimensionError("targets do not match aggregated predictions");
    return (p.values() - y.values()).squaredNorm() / static_cast<double>(y.size());
  }
  if (lik.kind == LikelihoodKind::categorical) {
    const auto labels = class_labels(targets, p.cols());
    if (labels.size() != p.rows()) throw DimensionError("targets do not match aggregated predictions");
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      Eigen::Index best = 0;
      p.matrix().row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
      wrong += static_cast<std::size_t>(best) != labels[i];
    }
    return static_cast<double>(wrong) / static_cast<double>(labels.size());
  }
  const Tensor y = as_matrix(targets);
  if (y.shape() != p.shape()) throw DimensionError("targets do not match aggregated predictions");
  check_binary(y);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < y.size(); ++i) wrong += (p[i] > 0.5 ? 1.0 : 0.0) != y[i];
  return static_cast<double>(wrong) / static_cast<double>(y.size());
}

double predictive_log_likelihood(const Likelihood& lik, const Aggregate& agg, const Tensor& targets) {
  constexpr double tiny = 1e-300;
  const Tensor& p = agg.mean;
  switch (lik.kind) {
    case LikelihoodKind::categorical: {
      const auto labels = class_labels(targets, p.cols());
      double total = 0.0;
      for (std::size_t i = 0; i < labels.size(); ++i) total += std::log(std::max(p.at(i, labels[i]), tiny));
      return total;
    }
    case LikelihoodKind::bernoulli: {
      const Tensor y = as_matrix(targets);
      check_binary(y);
      double total = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i)
        total += std::log(std::max(y[i] == 1.0 ? p[i] : 1.0 - p[i], tiny));
      return total;
    }
    case LikelihoodKind::homoskedastic_gaussian:
    case LikelihoodKind::heteroskedastic_gaussian: {
      const Tensor y = as_matrix(targets);
      if (!agg.sd || y.shape() != p.shape()) throw DimensionError("targets do not match aggregated predictions");
      Tensor sd = *agg.sd;
      if (lik.kind == LikelihoodKind::homoskedastic_gaussian)
        sd = Tensor(sd.shape(), (sd.array().square() + lik.sd * lik.sd).sqrt());
      return log_prob(DiagonalNormal(p, sd), y).values().sum();
    }
  }
  throw ContractError("unknown likelihood");
}

}  // namespace bnn
