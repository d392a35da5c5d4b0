#include "bnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "bnn/errors.hpp"

namespace bnn {

namespace {

void check_simplex(const Tensor& probs) {
  if (probs.rank() != 2) throw DimensionError("probabilities must be (B, K), got " + to_string(probs.shape()));
  const auto m = probs.matrix();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if ((m.row(r).array() < 0.0).any() || !m.row(r).allFinite() || std::abs(m.row(r).sum() - 1.0) > 1e-6)
      throw ContractError("row " + std::to_string(r) + " is not a probability vector");
  }
}

std::size_t bin_of(double conf, std::size_t bins) {
  const double n = static_cast<double>(bins);
  auto b = static_cast<std::size_t>(std::max(std::ceil(conf * n) - 1.0, 0.0));
  b = std::min(b, bins - 1);
  if (b > 0 && conf <= static_cast<double>(b) / n) --b;
  if (b + 1 < bins && conf > static_cast<double>(b + 1) / n) ++b;
  return b;
}

}  // namespace

std::vector<double> confidences(const Tensor& probs) {
  check_simplex(probs);
  const auto m = probs.matrix();
  std::vector<double> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) out[static_cast<std::size_t>(r)] = m.row(r).maxCoeff();
  return out;
}

CalibrationReport ece(const Tensor& probs, const std::vector<std::size_t>& labels, std::size_t bins) {
  if (bins == 0) throw ContractError("ECE needs at least one bin");
  const auto conf = confidences(probs);
  if (labels.size() != conf.size())
    throw DimensionError(std::to_string(labels.size()) + " labels for " + std::to_string(conf.size()) + " rows");
  const auto m = probs.matrix();

  std::vector<double> conf_sum(bins, 0.0);
  std::vector<double> correct(bins, 0.0);
  CalibrationReport report;
  report.bins.resize(bins);
  for (std::size_t i = 0; i < conf.size(); ++i) {
    if (labels[i] >= static_cast<std::size_t>(m.cols())) throw ContractError("label out of range at row " + std::to_string(i));
    Eigen::Index arg = 0;
    m.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
    const std::size_t b = bin_of(conf[i], bins);
    ++report.bins[b].count;
    conf_sum[b] += conf[i];
    correct[b] += static_cast<std::size_t>(arg) == labels[i] ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(conf.size());
  for (std::size_t b = 0; b < bins; ++b) {
    CalibrationBin& bin = report.bins[b];
    bin.lower = static_cast<double>(b) / static_cast<double>(bins);
    bin.upper = static_cast<double>(b + 1) / static_cast<double>(bins);
    if (bin.count == 0) continue;
    const double c = static_cast<double>(bin.count);
    bin.confidence = conf_sum[b] / c;
    bin.accuracy = correct[b] / c;
    report.ece += c / n * std::abs(bin.accuracy - bin.confidence);
  }
  return report;
}

std::string CalibrationReport::to_json() const {
  nlohmann::json j;
  j["ece"] = ece;
  j["bins"] = nlohmann::json::array();
  for (const auto& b : bins)
    j["bins"].push_back({{"lower", b.lower}, {"upper", b.upper}, {"count", b.count},
                         {"confidence", b.confidence}, {"accuracy", b.accuracy}});
  return j.dump(2);
}

std::string CalibrationReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "bin_center,confidence,accuracy,count\n";
  for (const auto& b : bins)
    out << 0.5 * (b.lower + b.upper) << ',' << b.confidence << ',' << b.accuracy << ',' << b.count << '\n';
  return out.str();
}

double auroc(const std::vector<double>& positive, const std::vector<double>& negative) {
  if (positive.empty() || negative.empty()) throw ContractError("AUROC needs both score sets nonempty");
  struct Scored {
    double score;
    bool positive;
  };
  std::vector<Scored> all;
  for (double s : positive) all.push_back({s, true});
  for (double s : negative) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) { return a.score < b.score; });

  // Twice the rank sum keeps midranks integral.
  long double twice_rank_sum = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const long double twice_mid = static_cast<long double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (all[k].positive) twice_rank_sum += twice_mid;
    i = j;
  }
  const long double np = static_cast<long double>(positive.size());
  const long double nn = static_cast<long double>(negative.size());
  const long double twice_u = twice_rank_sum - np * (np + 1);
  const long double twice_pairs = 2 * np * nn;
  // Evaluate the smaller side and complement it, so swapping the sets gives
  // results that sum to exactly 1.
  if (twice_u <= np * nn) return static_cast<double>(twice_u / twice_pairs);
  return 1.0 - static_cast<double>((twice_pairs - twice_u) / twice_pairs);
}

double ood_auroc(const Tensor& id_probs, const Tensor& ood_probs) {
  return auroc(confidences(id_probs), confidences(ood_probs));
}

EntropyEcdf entropy_ecdf(const Tensor& probs) {
  check_simplex(probs);
  const auto m = probs.matrix();
  EntropyEcdf out;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    double h = 0.0;
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      if (m(r, c) > 0.0) h -= m(r, c) * std::log(m(r, c));
    out.entropy.push_back(std::max(h, 0.0));
  }
  std::sort(out.entropy.begin(), out.entropy.end());
  const double n = static_cast<double>(out.entropy.size());
  const auto& h = out.entropy;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto upto = std::upper_bound(h.begin(), h.end(), h[i]) - h.begin();
    out.level.push_back(static_cast<double>(upto) / n);
  }
  return out;
}

}  // namespace bnn
