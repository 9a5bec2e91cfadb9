#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "devae/adam.hpp"
#include "devae/data.hpp"
#include "devae/metrics.hpp"
#include "devae/model.hpp"

namespace devae {

/// Everything needed to reproduce one training run. Serialized as flat
/// `key = value` text; every key has a default.
struct RunConfig {
  models::Variant variant = models::Variant::kDeVae;
  std::vector<double> betas{1.0, 40.0};
  models::EncoderKind arch = models::EncoderKind::kMlp;
  std::vector<std::size_t> hidden{128, 128};
  std::size_t latent_dim = 10;
  bool shared_noise = false;

  /// Dataset file; when empty the dataset is generated from `factors` at `resolution`.
  std::string dataset;
  std::string factors = "posX:16,posY:16,scale:4";
  std::size_t resolution = 16;

  std::uint64_t seed = 0;
  std::size_t iterations = 20'000;
  std::size_t batch_size = 64;
  std::size_t eval_every = 500;
  std::size_t checkpoint_every = 1000;  // 0: only at the end
  std::size_t eval_samples = 10'000;    // NMI tracking during training
  std::size_t final_eval_samples = metrics::kDefaultSamples;
  std::size_t recon_samples = 1000;
  bool factor_vae = true;
  metrics::LatentMode latent_mode = metrics::LatentMode::kMean;

  double lr = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  std::string out;

  /// Throws ConfigError on any invalid field or combination.
  void validate() const;

  models::ModelConfig model_config() const;
  nn::AdamConfig adam_config() const;
  metrics::EvalOptions eval_options(std::size_t samples) const;

  /// Canonical text form, one key per line in a fixed order.
  std::string serialize() const;
  /// Same pairs as `serialize`, in the same order.
  std::vector<std::pair<std::string, std::string>> items() const;
};

/// Applies one `key = value` setting; throws ConfigError for unknown keys or bad values.
void apply_setting(RunConfig& config, std::string_view key, std::string_view value);

/// Parses flat key-value text ('#' starts a comment). Unknown keys are errors.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// Every config key with its default value, in serialization order.
std::vector<std::pair<std::string, std::string>> config_defaults();

/// Formatting helpers shared by the artifact writers.
std::string format_double(double value);
std::string format_list(const std::vector<double>& values);

}  // namespace devae
