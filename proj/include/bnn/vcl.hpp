#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bnn/data.hpp"
#include "bnn/svi.hpp"

namespace bnn {

// accuracy[i][j]: task j evaluated after training task i, j <= i.
struct TaskMatrix {
  std::vector<std::vector<double>> accuracy;

  std::size_t tasks() const { return accuracy.size(); }
  // Mean over the seen tasks after the last one.
  double final_mean() const;
  std::string to_json() const;  // {"tasks": k, "accuracy": [[...], ...]}
};

// Replace every Bayesian site's prior with the current guide factor.
void posterior_to_prior(VariationalBNN& bnn);

struct SequenceConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 64;
  AdamConfig adam;
  ExecutionContext context;
  std::size_t eval_samples = 8;
  std::uint64_t eval_seed = 0;
  // When false the priors are left alone between tasks (no VCL update).
  bool update_prior = true;
};

// fit, evaluate on the tasks seen so far, promote the posterior; per task.
// Adam moments are reset at the start of each task.
TaskMatrix run_task_sequence(VariationalBNN& bnn, const TaskSequence& tasks, const SequenceConfig& cfg);

// Fraction correct of a discrete likelihood's aggregated prediction.
double accuracy(const VariationalBNN& bnn, const Dataset& data, std::size_t samples, std::uint64_t seed);

}  // namespace bnn
