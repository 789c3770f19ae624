#include <iostream>

#include "CLI11.hpp"
#include "flowvi/cli.hpp"

using namespace flowvi::cli;

int main(int argc, char** argv) {
  CLI::App app{"flowvi: variational inference with model-informed flows"};
  app.require_subcommand(1);

  CommonOptions opt;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "master seed");
    sub->add_option("--jobs", opt.jobs, "parallel learning-rate runs")->check(CLI::PositiveNumber);
    sub->add_flag("--quick", opt.quick, "desk budget");
    sub->add_option("--out", opt.out, "output file");
  };

  std::string config;
  auto* run = app.add_subcommand("run", "train one family with a learning-rate sweep");
  run->add_option("--config", config, "run config (JSON)")->required();
  add_common(run);

  std::string model;
  auto* abl = app.add_subcommand("ablation", "MIF ablation table for one model");
  abl->add_option("--model", model)->required();
  abl->add_option("--config", config, "base config supplying the training budget");
  add_common(abl);

  std::vector<std::size_t> widths{1, 16, 256};
  auto* cap = app.add_subcommand("capacity-sweep", "MIF vs eps-cond over hidden widths");
  cap->add_option("--model", model)->required();
  cap->add_option("--widths", widths, "ascending hidden widths")->delimiter(',');
  cap->add_option("--config", config, "base config supplying the training budget");
  add_common(cap);

  CertifyOptions cert;
  double tol = -1;
  auto* cer = app.add_subcommand("certify", "numerical equivalence certification");
  cer->add_option("--tol", tol, "override every tolerance");
  cer->add_flag("--mutate", cert.mutate, "self-test with a broken construction");
  cer->add_option("--trials", cert.trials);
  cer->add_option("--probes", cert.probes);
  add_common(cer);

  std::string params_file;
  std::size_t n = 5000;
  std::size_t kl_samples = 100000;
  auto* emit = app.add_subcommand("emit-samples", "write draws of a trained family as CSV");
  emit->add_option("--params", params_file, "result record of a trained run")->required();
  emit->add_option("-n,--samples", n);
  emit->add_option("--kl-samples", kl_samples);
  add_common(emit);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kConfigError;
  }
  for (auto* sub : app.get_subcommands()) {
    if (sub->count("--seed")) opt.seed = seed;
  }

  try {
    if (*run) return cmd_run(config, opt);
    if (*abl) return cmd_ablation(model, config, opt);
    if (*cap) return cmd_capacity_sweep(model, widths, config, opt);
    if (*cer) {
      if (tol >= 0) cert.tolerance = tol;
      return cmd_certify(cert, opt);
    }
    if (*emit) return cmd_emit_samples(params_file, n, opt, kl_samples);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kConfigError;
}
