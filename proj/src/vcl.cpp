#include "bnn/vcl.hpp"

#include <json.hpp>

#include "bnn/priors.hpp"

namespace bnn {

double TaskMatrix::final_mean() const {
  if (accuracy.empty()) throw ContractError("empty task matrix");
  const auto& last = accuracy.back();
  double total = 0.0;
  for (double a : last) total += a;
  return total / static_cast<double>(last.size());
}

std::string TaskMatrix::to_json() const {
  nlohmann::json j;
  j["tasks"] = tasks();
  j["accuracy"] = accuracy;
  return j.dump(2);
}

void posterior_to_prior(VariationalBNN& bnn) {
  bnn.check_consistent();
  bnn.net = update_priors(std::move(bnn.net), export_distributions(bnn.guide));
}

double accuracy(const VariationalBNN& bnn, const Dataset& data, std::size_t samples, std::uint64_t seed) {
  if (!bnn.likelihood.discrete()) throw ContractError("accuracy needs a discrete likelihood");
  const Aggregate agg = predict(bnn, data.inputs, samples, seed);
  return 1.0 - error(bnn.likelihood, agg, data.targets);
}

TaskMatrix run_task_sequence(VariationalBNN& bnn, const TaskSequence& tasks, const SequenceConfig& cfg) {
  if (tasks.empty()) throw ContractError("task sequence is empty");
  const std::size_t width = tasks.front().train.inputs.dim(1);
  for (const Task& t : tasks)
    if (t.train.inputs.dim(1) != width || t.test.inputs.dim(1) != width)
      throw DimensionError("tasks disagree on the input width");

  TaskMatrix m;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    bnn.likelihood.dataset_size = tasks[i].train.size();
    AdamState adam(cfg.adam);
    fit(bnn, make_batches(tasks[i].train, cfg.batch_size), cfg.epochs, adam, cfg.context);
    std::vector<double> row;
    for (std::size_t j = 0; j <= i; ++j) row.push_back(accuracy(bnn, tasks[j].test, cfg.eval_samples, cfg.eval_seed));
    m.accuracy.push_back(std::move(row));
    if (cfg.update_prior) posterior_to_prior(bnn);
  }
  return m;
}

}  // namespace bnn
