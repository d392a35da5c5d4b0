#include "bnn/distributions.hpp"

#include <cmath>

namespace bnn {

namespace {

Tensor floor_sd(Tensor sd, const char* what) {
  for (std::size_t i = 0; i < sd.size(); ++i) {
    if (!std::isfinite(sd[i]) || sd[i] < 0.0)
      throw ContractError(std::string(what) + " must be finite and non-negative");
    sd[i] = std::max(sd[i], kMinSd);
  }
  return sd;
}

Tensor repeat(const Tensor& t, const Shape& shape) {
  if (t.shape() == shape) return t;
  if (t.size() != 1)
    throw DimensionError("cannot broadcast distribution of shape " + to_string(t.shape()) + " to " +
                         to_string(shape));
  return Tensor(shape, t[0]);
}

}  // namespace

DiagonalNormal::DiagonalNormal(Tensor mean, Tensor sd)
    : mean_(std::move(mean)), sd_(floor_sd(std::move(sd), "normal sd")) {
  if (mean_.shape() != sd_.shape())
    throw DimensionError("normal mean " + to_string(mean_.shape()) + " and sd " + to_string(sd_.shape()) +
                         " differ in shape");
  if (!mean_.all_finite()) throw ContractError("normal mean must be finite");
}

DiagonalNormal DiagonalNormal::broadcast_to(const Shape& shape) const {
  return {repeat(mean_, shape), repeat(sd_, shape)};
}

DiagonalLaplace::DiagonalLaplace(Tensor loc, Tensor scale)
    : loc_(std::move(loc)), scale_(floor_sd(std::move(scale), "laplace scale")) {
  if (loc_.shape() != scale_.shape()) throw DimensionError("laplace loc and scale differ in shape");
  if (!loc_.all_finite()) throw ContractError("laplace loc must be finite");
}

DiagonalLaplace DiagonalLaplace::broadcast_to(const Shape& shape) const {
  return {repeat(loc_, shape), repeat(scale_, shape)};
}

CategoricalDist::CategoricalDist(Tensor l) : logits(std::move(l)) {
  if (logits.rank() == 0 || logits.rank() > 2 || logits.cols() < 2)
    throw DimensionError("categorical logits need shape (K) or (B, K) with K >= 2, got " +
                         to_string(logits.shape()));
  if (!logits.all_finite()) throw ContractError("categorical logits must be finite");
}

const Shape& shape_of(const PriorDistribution& d) {
  return std::visit([](const auto& x) -> const Shape& { return x.shape(); }, d);
}

PriorDistribution broadcast_to(const PriorDistribution& d, const Shape& shape) {
  return std::visit([&](const auto& x) -> PriorDistribution { return x.broadcast_to(shape); }, d);
}

bool is_normal(const PriorDistribution& d) { return std::holds_alternative<DiagonalNormal>(d); }

Tensor log_prob(const DiagonalNormal& d, const Tensor& value) {
  if (value.shape() != d.shape())
    throw DimensionError("log_prob value " + to_string(value.shape()) + " vs normal " + to_string(d.shape()));
  const auto z = (value.array() - d.mean().array()) / d.sd().array();
  return Tensor(value.shape(), -0.5 * z.square() - d.sd().array().log() - kHalfLog2Pi);
}

Tensor log_prob(const DiagonalLaplace& d, const Tensor& value) {
  if (value.shape() != d.shape())
    throw DimensionError("log_prob value " + to_string(value.shape()) + " vs laplace " + to_string(d.shape()));
  return Tensor(value.shape(), -(value.array() - d.loc().array()).abs() / d.scale().array() -
                                   (2.0 * d.scale().array()).log());
}

Tensor log_prob(const PriorDistribution& d, const Tensor& value) {
  return std::visit([&](const auto& x) { return log_prob(x, value); }, d);
}

Tensor log_prob(const BernoulliDist& d, const Tensor& value) {
  if (value.shape() != d.logits.shape())
    throw DimensionError("bernoulli value " + to_string(value.shape()) + " vs logits " +
                         to_string(d.logits.shape()));
  Tensor out(value.shape());
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double y = value[i];
    if (y != 0.0 && y != 1.0) throw SupportError("bernoulli value " + std::to_string(y) + " not in {0,1}");
    // y*l - softplus(l)
    out[i] = y * d.logits[i] - softplus(d.logits[i]);
  }
  return out;
}

Tensor log_prob(const CategoricalDist& d, const Tensor& value) {
  const std::size_t rows = d.batch();
  if (value.size() != rows)
    throw DimensionError("categorical expects " + std::to_string(rows) + " labels, got " +
                         std::to_string(value.size()));
  const auto k = static_cast<double>(d.num_classes());
  Tensor out(Shape{rows});
  auto m = d.logits.matrix();
  for (std::size_t r = 0; r < rows; ++r) {
    const double y = value[r];
    if (y < 0.0 || y >= k || std::floor(y) != y)
      throw SupportError("categorical label " + std::to_string(y) + " outside {0.." +
                         std::to_string(d.num_classes() - 1) + "}");
    const auto row = m.row(static_cast<Eigen::Index>(r));
    const double hi = row.maxCoeff();
    const double lse = hi + std::log((row.array() - hi).exp().sum());
    out[r] = row(static_cast<Eigen::Index>(y)) - lse;
  }
  return out;
}

Tensor sample_reparameterized(const DiagonalNormal& d, const Tensor& noise) {
  if (noise.shape() != d.shape())
    throw DimensionError("noise " + to_string(noise.shape()) + " vs normal " + to_string(d.shape()));
  return Tensor(d.shape(), d.mean().array() + d.sd().array() * noise.array());
}

Tensor sample(const PriorDistribution& d, CounterRng& rng) {
  if (const auto* n = std::get_if<DiagonalNormal>(&d))
    return sample_reparameterized(*n, standard_normal(n->shape(), rng));
  const auto& l = std::get<DiagonalLaplace>(d);
  Tensor out(l.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double u = rng.uniform() - 0.5;
    const double sign = u < 0 ? -1.0 : 1.0;
    out[i] = l.loc()[i] - l.scale()[i] * sign * std::log1p(-2.0 * std::abs(u));
  }
  return out;
}

double kl_normal_normal(const DiagonalNormal& q, const DiagonalNormal& p) {
  if (q.shape() != p.shape())
    throw DimensionError("kl between shapes " + to_string(q.shape()) + " and " + to_string(p.shape()));
  const auto qs = q.sd().array();
  const auto ps = p.sd().array();
  const auto dm = q.mean().array() - p.mean().array();
  return ((ps / qs).log() + (qs.square() + dm.square()) / (2.0 * ps.square()) - 0.5).sum();
}

Tensor probabilities(const CategoricalDist& d) {
  Tensor out = d.logits;
  auto m = out.matrix();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double hi = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - hi).exp().matrix();
    m.row(r) /= m.row(r).sum();
  }
  return out;
}

Tensor probabilities(const BernoulliDist& d) {
  return map_values<double>(d.logits, [](double x) { return sigmoid(x); });
}

Tensor entropy(const CategoricalDist& d) {
  const Tensor p = probabilities(d);
  Tensor out(Shape{d.batch()});
  auto pm = p.matrix();
  auto lm = d.logits.matrix();
  for (Eigen::Index r = 0; r < pm.rows(); ++r) {
    const double hi = lm.row(r).maxCoeff();
    const double lse = hi + std::log((lm.row(r).array() - hi).exp().sum());
    // p ln p computed from log-probabilities; terms with p == 0 vanish.
    double h = 0.0;
    for (Eigen::Index c = 0; c < pm.cols(); ++c)
      if (pm(r, c) > 0.0) h -= pm(r, c) * (lm(r, c) - lse);
    out[static_cast<std::size_t>(r)] = std::max(h, 0.0);
  }
  return out;
}

Var sample_reparameterized(Var mean, Var sd, Var noise) { return mean + sd * noise; }

Var normal_log_prob(Var value, Var mean, Var sd) {
  Graph& g = *value.graph();
  const Var z = (value - mean) * exp(-log(sd));
  return square(z) * -0.5 - log(sd) + g.constant(Tensor(value.shape(), -kHalfLog2Pi));
}

Var log_prob(const PriorDistribution& d, Var value) {
  Graph& g = *value.graph();
  if (const auto* n = std::get_if<DiagonalNormal>(&d)) {
    // constants folded: -(x-m)^2/(2s^2) - ln s - ln sqrt(2 pi)
    const Tensor inv_var(n->shape(), -0.5 / n->sd().array().square());
    const Tensor offset(n->shape(), -n->sd().array().log() - kHalfLog2Pi);
    return square(value - g.constant(n->mean())) * g.constant(inv_var) + g.constant(offset);
  }
  const auto& l = std::get<DiagonalLaplace>(d);
  const Tensor inv_scale(l.shape(), -1.0 / l.scale().array());
  const Tensor offset(l.shape(), -(2.0 * l.scale().array()).log());
  return abs(value - g.constant(l.loc())) * g.constant(inv_scale) + g.constant(offset);
}

Var kl_normal_normal(Var q_mean, Var q_log_sd, const DiagonalNormal& p) {
  Graph& g = *q_mean.graph();
  const Tensor inv_two_var(p.shape(), 0.5 / p.sd().array().square());
  const Tensor offset(p.shape(), p.sd().array().log() - 0.5);
  const Var quad = (exp(q_log_sd * 2.0) + square(q_mean - g.constant(p.mean()))) * g.constant(inv_two_var);
  return sum(quad - q_log_sd + g.constant(offset));
}

}  // namespace bnn
