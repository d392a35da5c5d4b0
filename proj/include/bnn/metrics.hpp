#pragma once

#include <string>
#include <vector>

#include "bnn/tensor.hpp"

namespace bnn {

struct CalibrationBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double confidence = 0.0;  // mean max-probability; 0 when empty
  double accuracy = 0.0;
};

struct CalibrationReport {
  std::vector<CalibrationBin> bins;
  double ece = 0.0;

  std::string to_json() const;
  // bin_center,confidence,accuracy,count
  std::string to_csv() const;
};

// Bin b covers (b/bins, (b+1)/bins]; the first bin also takes confidence 0.
CalibrationReport ece(const Tensor& probs, const std::vector<std::size_t>& labels, std::size_t bins = 10);

// Mann-Whitney AUROC of max-probability scores, ties counted as half.
double ood_auroc(const Tensor& id_probs, const Tensor& ood_probs);

// Same, on raw scores.
double auroc(const std::vector<double>& positive, const std::vector<double>& negative);

struct EntropyEcdf {
  std::vector<double> entropy;  // ascending
  std::vector<double> level;    // fraction of rows with entropy <= the value
};

EntropyEcdf entropy_ecdf(const Tensor& probs);

// Max probability per row.
std::vector<double> confidences(const Tensor& probs);

}  // namespace bnn
