// Command-line runner: bnn <regress|classify|vcl> [flags]
#include <iostream>

#include <CLI11.hpp>

#include "bnn/runner.hpp"

namespace {

void add_common(CLI::App& app, bnn::RunConfig& cfg, std::string& inference) {
  app.add_option("--inference", inference, "ml | map | mean-field | hmc");
  app.add_option("--context", cfg.context, "plain | local-reparam | flipout (mean-field only)");
  app.add_option("--architecture", cfg.architecture, "architecture file, one layer per line");
  app.add_option("--prior", cfg.prior, "iid:sd=<x> | layerwise:method=<m> | dict:@<file.json>");
  app.add_option("--likelihood", cfg.likelihood, "categorical | bernoulli | gaussian:sd=<x> | heteroskedastic");
  app.add_option("--sd-init", cfg.sd_init, "initial guide sd");
  app.add_option("--max-sd", cfg.max_sd, "upper bound on guide sds");
  app.add_option("--mean-init", cfg.mean_init, "layer-scaled | prior");
  app.add_option("--epochs", cfg.epochs);
  app.add_option("--lr", cfg.lr);
  app.add_option("--batch-size", cfg.batch_size, "0 = full batch");
  app.add_option("--samples", cfg.samples, "predictive samples");
  app.add_option("--seed", cfg.seed);
  app.add_option("--dataset", cfg.dataset, "builtin name or CSV path");
  app.add_option("--target-column", cfg.target_column);
  app.add_option("--test-fraction", cfg.test_fraction);
  app.add_option("--num-points", cfg.num_points);
  app.add_option("--step-size", cfg.step_size);
  app.add_option("--leapfrog-steps", cfg.leapfrog_steps);
  app.add_option("--warmup", cfg.warmup);
  app.add_option("--num-samples", cfg.num_samples, "post-warmup HMC samples");
  app.add_option("--kernel", cfg.kernel, "hmc | nuts");
  app.add_option("--ece-bins", cfg.ece_bins);
  app.add_option("--out", cfg.out, "output directory");
  app.add_option("--resume", cfg.resume, "checkpoint.bin to continue from");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian neural network runner"};
  app.require_subcommand(1);
  bnn::RunConfig cfg;
  auto* regress = app.add_subcommand("regress", "toy or CSV regression");
  auto* classify = app.add_subcommand("classify", "binary or multi-class classification");
  auto* vcl = app.add_subcommand("vcl", "continual learning over a task split");
  bnn::RunConfig regress_cfg, classify_cfg, vcl_cfg;
  std::string inference = "mean-field";
  vcl_cfg.subcommand = bnn::Subcommand::vcl;
  classify_cfg.subcommand = bnn::Subcommand::classify;
  add_common(*regress, regress_cfg, inference);
  add_common(*classify, classify_cfg, inference);
  add_common(*vcl, vcl_cfg, inference);
  vcl->add_option("--tasks", vcl_cfg.tasks);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << R"({"error":"usage","message":)" << nlohmann::json(e.what()).dump() << "}\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << bnn::format_error(e) << "\n";
    return 2;
  }

  if (regress->parsed()) cfg = regress_cfg;
  if (classify->parsed()) cfg = classify_cfg;
  if (vcl->parsed()) cfg = vcl_cfg;
  try {
    cfg.inference = bnn::parse_inference(inference);
    const auto doc = bnn::run(cfg);
    std::cout << doc["metrics"].dump() << "\n";
  } catch (const std::exception& e) {
    std::cerr << bnn::format_error(e) << "\n";
    return 1;
  }
  return 0;
}
