// devae: data generation, training, evaluation and study driver.
#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "devae/config.hpp"
#include "devae/data.hpp"
#include "devae/errors.hpp"
#include "devae/experiment.hpp"
#include "devae/metrics.hpp"

namespace {

using namespace devae;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct Common {
  std::uint64_t seed = 0;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Master seed")->required();
  cmd->add_option("--out", c.out, "Output path")->required();
}

/// Every RunConfig key as an optional flag; spelled with underscores or dashes.
struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "Key-value config file")->check(CLI::ExistingFile);
    for (const auto& [key, def] : config_defaults()) {
      if (key == "seed" || key == "out") continue;
      std::string names = "--" + key;
      std::string dashed = key;
      for (auto& ch : dashed)
        if (ch == '_') ch = '-';
      if (dashed != key) names += ",--" + dashed;
      cmd->add_option(names, values[key], "default: " + (def.empty() ? std::string("(none)") : def));
    }
  }

  RunConfig resolve(const Common& common, CLI::App* cmd) const {
    RunConfig config = config_file.empty() ? RunConfig{} : load_config(config_file);
    for (const auto& [key, value] : values)
      if (cmd->count("--" + key) > 0) apply_setting(config, key, value);
    config.seed = common.seed;
    config.out = common.out;
    config.validate();
    return config;
  }
};

std::vector<std::uint64_t> seed_list(std::uint64_t first, std::size_t count) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < count; ++i) seeds.push_back(first + i);
  return seeds;
}

void print_space(const metrics::SpaceReport& s) {
  std::cout << "space " << s.space << ": mig " << s.mig << " dci " << s.dci << " factor_vae ";
  if (s.factor_vae_defined)
    std::cout << s.factor_vae;
  else
    std::cout << "undefined";
  std::cout << " recon " << s.recon << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DeVAE: hierarchical latent spaces with decremental information bottlenecks"};
  app.require_subcommand(1);

  // gen-data
  Common gen_common;
  std::string gen_factors = RunConfig{}.factors;
  std::size_t gen_resolution = RunConfig{}.resolution;
  auto* gen = app.add_subcommand("gen-data", "Render a factor-grid sprite dataset to a file");
  add_common(gen, gen_common);
  gen->add_option("--factors", gen_factors, "Factor grid, e.g. posX:16,posY:16,scale:4");
  gen->add_option("--resolution", gen_resolution, "Image side length in pixels");

  // train
  Common train_common;
  ConfigFlags train_flags;
  bool resume = false;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Train one model and write checkpoint, metrics CSV and report");
  add_common(train, train_common);
  train_flags.attach(train);
  train->add_flag("--resume", resume, "Continue from <out>/checkpoint.bin when present");
  train->add_flag("--quiet", quiet, "No progress output");

  // eval
  Common eval_common;
  std::string eval_checkpoint;
  std::optional<std::string> eval_dataset;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval, eval_common);
  eval->add_option("--checkpoint", eval_checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--dataset", eval_dataset, "Override the dataset recorded in the checkpoint");

  // traverse
  Common trav_common;
  std::string trav_checkpoint;
  std::vector<double> trav_range{-2.0, 2.0};
  experiment::TraverseOptions trav;
  auto* traverse = app.add_subcommand("traverse", "Latent traversal grid for the highest-KL dimensions");
  add_common(traverse, trav_common);
  traverse->add_option("--checkpoint", trav_checkpoint)->required()->check(CLI::ExistingFile);
  traverse->add_option("--range", trav_range, "lo,hi")->delimiter(',')->expected(2);
  traverse->add_option("--steps", trav.steps);
  traverse->add_option("--top-k,--top_k", trav.top_k);
  traverse->add_option("--seeds", trav.seeds, "Number of seed images");
  traverse->add_option("--space", trav.space);

  // sample
  Common sample_common;
  std::string sample_checkpoint;
  std::size_t sample_n = 16;
  std::size_t sample_space = 0;
  auto* sample = app.add_subcommand("sample", "Decode draws from the prior");
  add_common(sample, sample_common);
  sample->add_option("--checkpoint", sample_checkpoint)->required()->check(CLI::ExistingFile);
  sample->add_option("--n", sample_n);
  sample->add_option("--space", sample_space);

  // ablate
  Common ablate_common;
  ConfigFlags ablate_flags;
  std::size_t ablate_seeds = 1;
  auto* ablate = app.add_subcommand("ablate", "BetaVAE / MultiSpace / HiSLinear / DeVAE comparison");
  add_common(ablate, ablate_common);
  ablate_flags.attach(ablate);
  ablate->add_option("--seeds", ablate_seeds, "Number of consecutive seeds starting at --seed");

  // sweep
  Common sweep_common;
  ConfigFlags sweep_flags;
  std::string sweep_mode = "beta_1_x";
  std::string sweep_values;
  std::size_t sweep_seeds = 1;
  auto* sweep = app.add_subcommand("sweep", "One run per pressure value; writes frontier.csv");
  add_common(sweep, sweep_common);
  sweep_flags.attach(sweep);
  sweep->add_option("--mode", sweep_mode, "beta_x, beta_1_x, beta_x_40 or ladder");
  sweep->add_option("--values", sweep_values, "e.g. 1,5,10 or \"[1,10];[1,10,40]\" for ladders")->required();
  sweep->add_option("--seeds", sweep_seeds, "Number of consecutive seeds starting at --seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) {
      const auto specs = data::parse_factor_specs(gen_factors);
      const auto ds = data::generate_dataset(specs, gen_resolution, gen_common.seed);
      const fs::path out = gen_common.out;
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      data::write_dataset(out, ds);
      std::cout << "wrote " << ds.size() << " images to " << out.string() << "\n";
    } else if (train->parsed()) {
      const auto config = train_flags.resolve(train_common, train);
      experiment::TrainOptions opts;
      opts.resume = resume;
      opts.log = quiet ? nullptr : &std::cerr;
      const auto result = experiment::train(config, opts);
      for (const auto& s : result.report.spaces) print_space(s);
    } else if (eval->parsed()) {
      const auto report = experiment::evaluate_checkpoint(eval_checkpoint, eval_common.out, eval_common.seed, eval_dataset);
      for (const auto& s : report.spaces) print_space(s);
    } else if (traverse->parsed()) {
      trav.lo = trav_range[0];
      trav.hi = trav_range[1];
      trav.seed = trav_common.seed;
      const auto t = experiment::traverse_checkpoint(trav_checkpoint, trav_common.out, trav);
      std::cout << "traversed " << t.dims.size() << " dimensions\n";
    } else if (sample->parsed()) {
      const auto n = experiment::sample_checkpoint(sample_checkpoint, sample_common.out, sample_n, sample_common.seed,
                                                   sample_space);
      std::cout << "wrote " << n << " samples\n";
    } else if (ablate->parsed()) {
      auto base = ablate_flags.resolve(ablate_common, ablate);
      if (ablate->count("--betas") == 0 && ablate_flags.config_file.empty()) base.betas = {1.0, 10.0, 40.0};
      const auto rows = experiment::ablate(base, ablate_common.out, seed_list(ablate_common.seed, ablate_seeds), &std::cerr);
      for (const auto& r : rows)
        std::cout << r.variant << " space " << r.space << " beta " << r.beta << " seed " << r.seed << ": mig " << r.mig
                  << " recon " << r.recon << "\n";
    } else if (sweep->parsed()) {
      const auto base = sweep_flags.resolve(sweep_common, sweep);
      const auto mode = experiment::parse_sweep_mode(sweep_mode);
      const auto values = experiment::parse_sweep_values(mode, sweep_values);
      const auto result =
          experiment::sweep(base, mode, values, sweep_common.out, seed_list(sweep_common.seed, sweep_seeds), &std::cerr);
      std::cout << "spearman(value, mig) " << result.spearman_mig << " spearman(value, recon) "
                << result.spearman_recon << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort at iteration " << e.iteration() << " (" << e.term() << "): " << e.what() << "\n";
    return kExitNumerical;
  } catch (const UsageError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
