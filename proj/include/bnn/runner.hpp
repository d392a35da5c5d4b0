#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "bnn/priors.hpp"
#include "bnn/svi.hpp"

namespace bnn {

enum class Subcommand { regress, classify, vcl };
enum class Inference { ml, map, mean_field, hmc };

Subcommand parse_subcommand(const std::string& text);
Inference parse_inference(const std::string& text);  // ml | map | mean-field | hmc
std::string format_inference(Inference inference);
std::string format_subcommand(Subcommand sub);

// "iid:sd=<x>[,mean=<m>]" | "layerwise:method=<radford|xavier|kaiming>" | "dict:@<file.json>"
// Dict files map site names to {"mean": m, "sd": s}, each a number or a flat
// array with one entry per element.
PriorSpec parse_prior(const std::string& text, const Network& net);

// Unset optionals take subcommand-specific defaults; flags that do not apply
// to the chosen inference must stay unset.
struct RunConfig {
  Subcommand subcommand = Subcommand::regress;
  Inference inference = Inference::mean_field;
  std::optional<std::string> context;
  std::optional<std::filesystem::path> architecture;
  std::string prior = "iid:sd=1.0";
  std::optional<std::string> likelihood;

  // Guide.
  std::optional<double> sd_init;
  std::optional<double> max_sd;
  std::optional<std::string> mean_init;  // layer-scaled | prior

  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<std::size_t> batch_size;  // 0 = full batch
  std::size_t samples = 32;
  std::uint64_t seed = 0;

  std::optional<std::string> dataset;  // builtin name or CSV path
  std::string target_column = "y";
  double test_fraction = 0.2;          // CSV only
  std::optional<std::size_t> num_points;

  // HMC.
  std::optional<double> step_size;
  std::optional<std::size_t> leapfrog_steps;
  std::optional<std::size_t> warmup;
  std::optional<std::size_t> num_samples;
  std::optional<std::string> kernel;

  // vcl.
  std::optional<std::size_t> tasks;

  std::size_t ece_bins = 10;
  std::filesystem::path out = "out";
  std::optional<std::filesystem::path> resume;

  void validate() const;
  // Every resolved setting, defaults filled in.
  nlohmann::json echo() const;
};

// Writes metrics.json, predictions.csv and checkpoint.bin (plus
// task_matrix.json for vcl, calibration.json/.csv for classify) into cfg.out
// and returns the metrics. Module errors propagate.
nlohmann::json run(const RunConfig& cfg);

// Single-line machine-readable rendering of an error.
std::string format_error(const std::exception& e);

}  // namespace bnn
