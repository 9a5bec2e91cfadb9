#include "devae/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "devae/errors.hpp"

namespace devae {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    parts.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError("config key '" + std::string(key) + "': invalid value '" + std::string(value) + "' (expected " +
                    std::string(expected) + ")");
}

std::uint64_t parse_u64(std::string_view key, std::string_view value) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty())
    bad_value(key, value, "a non-negative integer");
  return out;
}

double parse_f64(std::string_view key, std::string_view value) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty() || !std::isfinite(out))
    bad_value(key, value, "a finite number");
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  bad_value(key, value, "true or false");
}

std::vector<double> parse_doubles(std::string_view key, std::string_view value) {
  std::string_view inner = value;
  if (inner.size() >= 2 && inner.front() == '[' && inner.back() == ']') inner = inner.substr(1, inner.size() - 2);
  std::vector<double> out;
  for (auto part : split(inner, ',')) out.push_back(parse_f64(key, part));
  return out;
}

std::string format_sizes(const std::vector<std::size_t>& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) s += (i ? "," : "") + std::to_string(values[i]);
  return s;
}

}  // namespace

std::string format_double(double value) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);  // shortest round-trip form
  return ec == std::errc() ? std::string(buf, ptr) : std::string("nan");
}

std::string format_list(const std::vector<double>& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) s += (i ? "," : "") + format_double(values[i]);
  return s;
}

void apply_setting(RunConfig& c, std::string_view key, std::string_view raw) {
  const std::string_view value = trim(raw);
  if (key == "variant") {
    c.variant = models::parse_variant(value);
  } else if (key == "betas") {
    c.betas = parse_doubles(key, value);
  } else if (key == "arch") {
    c.arch = models::parse_encoder_kind(value);
  } else if (key == "hidden") {
    c.hidden.clear();
    for (auto part : split(value, ',')) c.hidden.push_back(parse_u64(key, part));
  } else if (key == "latent_dim") {
    c.latent_dim = parse_u64(key, value);
  } else if (key == "shared_noise") {
    c.shared_noise = parse_bool(key, value);
  } else if (key == "dataset") {
    c.dataset = std::string(value);
  } else if (key == "factors") {
    c.factors = std::string(value);
  } else if (key == "resolution") {
    c.resolution = parse_u64(key, value);
  } else if (key == "seed") {
    c.seed = parse_u64(key, value);
  } else if (key == "iterations") {
    c.iterations = parse_u64(key, value);
  } else if (key == "batch_size") {
    c.batch_size = parse_u64(key, value);
  } else if (key == "eval_every") {
    c.eval_every = parse_u64(key, value);
  } else if (key == "checkpoint_every") {
    c.checkpoint_every = parse_u64(key, value);
  } else if (key == "eval_samples") {
    c.eval_samples = parse_u64(key, value);
  } else if (key == "final_eval_samples") {
    c.final_eval_samples = parse_u64(key, value);
  } else if (key == "recon_samples") {
    c.recon_samples = parse_u64(key, value);
  } else if (key == "factor_vae") {
    c.factor_vae = parse_bool(key, value);
  } else if (key == "latent_mode") {
    if (value == "mean") c.latent_mode = metrics::LatentMode::kMean;
    else if (value == "sample") c.latent_mode = metrics::LatentMode::kSample;
    else bad_value(key, value, "mean or sample");
  } else if (key == "lr") {
    c.lr = parse_f64(key, value);
  } else if (key == "adam_beta1") {
    c.adam_beta1 = parse_f64(key, value);
  } else if (key == "adam_beta2") {
    c.adam_beta2 = parse_f64(key, value);
  } else if (key == "adam_eps") {
    c.adam_eps = parse_f64(key, value);
  } else if (key == "out") {
    c.out = std::string(value);
  } else {
    throw ConfigError("unknown config key '" + std::string(key) + "'");
  }
}

RunConfig parse_config(std::string_view text, RunConfig base) {
  std::size_t line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = trim(line.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    apply_setting(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), std::move(base));
}

void RunConfig::validate() const {
  model_config().validate();
  if (iterations == 0) throw ConfigError("iterations must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (eval_samples < 2 || final_eval_samples < 2) throw ConfigError("eval sample counts must be at least 2");
  if (recon_samples == 0) throw ConfigError("recon_samples must be positive");
  if (latent_dim < 2) throw ConfigError("latent_dim must be at least 2 for the disentanglement metrics");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ConfigError("adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (dataset.empty()) {
    const auto specs = data::parse_factor_specs(factors);
    if (data::dataset_size(specs) > data::kMaxImages)
      throw ConfigError("factor grid exceeds the in-memory image budget");
  }
}

models::ModelConfig RunConfig::model_config() const {
  models::ModelConfig m;
  m.variant = variant;
  m.hierarchy.betas = betas;
  m.arch.kind = arch;
  m.arch.hidden = hidden;
  m.arch.resolution = resolution;
  m.arch.channels = 1;
  m.arch.latent_dim = latent_dim;
  m.shared_noise = shared_noise;
  return m;
}

nn::AdamConfig RunConfig::adam_config() const { return {lr, adam_beta1, adam_beta2, adam_eps}; }

metrics::EvalOptions RunConfig::eval_options(std::size_t samples) const {
  metrics::EvalOptions o;
  o.samples = samples;
  o.recon_samples = recon_samples;
  o.mode = latent_mode;
  o.with_factor_vae = factor_vae;
  return o;
}

std::vector<std::pair<std::string, std::string>> RunConfig::items() const {
  return {
      {"variant", std::string(models::to_string(variant))},
      {"betas", format_list(betas)},
      {"arch", std::string(models::to_string(arch))},
      {"hidden", format_sizes(hidden)},
      {"latent_dim", std::to_string(latent_dim)},
      {"shared_noise", shared_noise ? "true" : "false"},
      {"dataset", dataset},
      {"factors", factors},
      {"resolution", std::to_string(resolution)},
      {"seed", std::to_string(seed)},
      {"iterations", std::to_string(iterations)},
      {"batch_size", std::to_string(batch_size)},
      {"eval_every", std::to_string(eval_every)},
      {"checkpoint_every", std::to_string(checkpoint_every)},
      {"eval_samples", std::to_string(eval_samples)},
      {"final_eval_samples", std::to_string(final_eval_samples)},
      {"recon_samples", std::to_string(recon_samples)},
      {"factor_vae", factor_vae ? "true" : "false"},
      {"latent_mode", latent_mode == metrics::LatentMode::kMean ? "mean" : "sample"},
      {"lr", format_double(lr)},
      {"adam_beta1", format_double(adam_beta1)},
      {"adam_beta2", format_double(adam_beta2)},
      {"adam_eps", format_double(adam_eps)},
      {"out", out},
  };
}

std::string RunConfig::serialize() const {
  std::string s;
  for (const auto& [k, v] : items()) s += k + " = " + v + "\n";
  return s;
}

std::vector<std::pair<std::string, std::string>> config_defaults() { return RunConfig{}.items(); }

}  // namespace devae
