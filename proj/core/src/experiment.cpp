#include "devae/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "devae/checkpoint.hpp"
#include "devae/errors.hpp"
#include "devae/ops.hpp"
#include "devae/rng.hpp"

namespace devae::experiment {
namespace {

using json = nlohmann::json;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("short write to " + path.string());
  }
  fs::rename(tmp, path);
}

std::string commented(const std::string& text, const std::string& prefix = "# ") {
  std::string out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out += prefix + line + "\n";
  return out;
}

json config_json(const RunConfig& config) {
  json j = json::object();
  for (const auto& [k, v] : config.items()) j[k] = v;
  return j;
}

json report_metadata(const RunConfig& config) {
  return {
      {"mi_estimator", "plug-in histogram mutual information, equal-width bins over the sampled range, nats"},
      {"bins", metrics::kDefaultBins},
      {"latent_representation", config.latent_mode == metrics::LatentMode::kMean ? "posterior mean" : "posterior sample"},
      {"dci_regressor", "ridge regression on standardized latents and factors"},
      {"dci_ridge", metrics::kDciRidge},
      {"factor_vae", {{"votes", metrics::kFactorVaeVotes},
                      {"batch", metrics::kFactorVaeBatch},
                      {"prune_kl", metrics::kFactorVaePruneKl},
                      {"encoding", "posterior mean"}}},
      {"recon_samples", config.recon_samples},
      {"eval_samples", config.final_eval_samples},
  };
}

json report_json(const RunConfig& config, const metrics::MetricsReport& report, const data::FactorDataset& dataset,
                 std::size_t completed, double last_loss, double seconds) {
  json spaces = json::array();
  for (const auto& s : report.spaces) {
    json nmi = json::array();
    for (std::size_t j = 0; j < s.nmi.dim(0); ++j) {
      json row = json::array();
      for (std::size_t k = 0; k < s.nmi.dim(1); ++k) row.push_back(s.nmi.at(j, k));
      nmi.push_back(row);
    }
    spaces.push_back({{"space", s.space},
                      {"beta", s.space < config.betas.size() ? config.betas[s.space] : 0.0},
                      {"mig", s.mig},
                      {"dci_disentanglement", s.dci},
                      {"factor_vae_score", s.factor_vae_defined ? json(s.factor_vae) : json(nullptr)},
                      {"recon_error", s.recon},
                      {"kl_per_dim", s.kl_per_dim},
                      {"nmi", nmi}});
  }
  json factors = json::array();
  for (const auto& f : dataset.specs()) factors.push_back(f.name);
  return {{"config", config_json(config)},
          {"seed", config.seed},
          {"finished", true},
          {"iterations", completed},
          {"final_loss", last_loss},
          {"elapsed_seconds", seconds},
          {"dataset_size", dataset.size()},
          {"factors", factors},
          {"metadata", report_metadata(config)},
          {"spaces", spaces}};
}

std::string csv_header(const RunConfig& config, const data::FactorDataset& dataset) {
  const std::size_t K = config.betas.size();
  std::string h = "iteration,total";
  for (std::size_t i = 0; i < K; ++i) h += ",recon_" + std::to_string(i);
  for (std::size_t i = 0; i < K; ++i) h += ",kl_" + std::to_string(i);
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < config.latent_dim; ++j) h += ",kl_" + std::to_string(i) + "_" + std::to_string(j);
  h += ",nmi_dim";
  for (const auto& f : dataset.specs()) h += ",nmi_" + f.name;
  return h + "\n";
}

std::string csv_preamble(const RunConfig& config, const data::FactorDataset& dataset) {
  return "# devae metrics\n" + commented(config.serialize()) + csv_header(config, dataset);
}

std::size_t row_iteration(const std::string& row) {
  const auto comma = row.find(',');
  try {
    return static_cast<std::size_t>(std::stoull(row.substr(0, comma)));
  } catch (const std::exception&) {
    return std::numeric_limits<std::size_t>::max();
  }
}

/// Keeps the preamble and rows up to `completed`; returns the retained text.
std::string truncate_csv(const fs::path& path, std::size_t completed, const std::string& fallback_preamble) {
  if (!fs::exists(path)) return fallback_preamble;
  std::istringstream in(read_text(path));
  std::string kept;
  bool header_seen = false;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      kept += line + "\n";
    } else if (!header_seen) {
      kept += line + "\n";
      header_seen = true;
    } else if (row_iteration(line) <= completed) {
      kept += line + "\n";
    }
  }
  return header_seen ? kept : fallback_preamble;
}

std::vector<double> probabilities(const models::Model& model, const Tensor& decoded) {
  std::vector<double> p(decoded.values().begin(), decoded.values().end());
  const bool bernoulli = model.config().likelihood() == models::Likelihood::kBernoulli;
  for (double& v : p) v = bernoulli ? nn::sigmoid(v) : std::clamp(v, 0.0, 1.0);
  return p;
}

void log_line(std::ostream* log, const std::string& text) {
  if (log) *log << text << std::endl;
}

std::string config_comment(const RunConfig& config, const std::string& extra) {
  return "devae " + extra + "\n" + config.serialize();
}

}  // namespace

data::FactorDataset load_dataset(const RunConfig& config) {
  if (!config.dataset.empty()) {
    auto ds = data::read_dataset(config.dataset);
    if (ds.resolution() != config.resolution)
      throw ConfigError("dataset resolution " + std::to_string(ds.resolution()) + " does not match config resolution " +
                        std::to_string(config.resolution));
    return ds;
  }
  return data::generate_dataset(data::parse_factor_specs(config.factors), config.resolution, config.seed);
}

void save_checkpoint(const fs::path& path, const RunConfig& config, const models::Model& model,
                     const nn::AdamState& adam, std::size_t iteration) {
  models::Checkpoint ck;
  const auto params = model.parameters();
  std::ostringstream header;
  header << "format = devae-checkpoint\n"
         << "parameter_count = " << params.size() << "\n"
         << "optimizer_tensors = " << adam.first_moment.size() + adam.second_moment.size() << "\n"
         << "adam_step = " << adam.step << "\n"
         << "iteration = " << iteration << "\n"
         << "[config]\n"
         << config.serialize();
  ck.header = header.str();
  for (const auto* p : params) ck.tensors.push_back(p->value);
  for (const auto& t : adam.first_moment) ck.tensors.push_back(t);
  for (const auto& t : adam.second_moment) ck.tensors.push_back(t);
  models::write_checkpoint(path, ck);
}

LoadedRun load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path.string());
  const auto ck = models::read_checkpoint(path);
  const auto split = ck.header.find("[config]\n");
  if (split == std::string::npos) throw DataError("checkpoint header lacks a [config] section");
  std::map<std::string, std::uint64_t> fields;
  std::istringstream in(ck.header.substr(0, split));
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    if (key == "format") {
      if (line.substr(eq + 3) != "devae-checkpoint") throw DataError("unknown checkpoint format");
      continue;
    }
    try {
      fields[key] = std::stoull(line.substr(eq + 3));
    } catch (const std::exception&) {
      throw DataError("malformed checkpoint header line: " + line);
    }
  }
  for (const char* key : {"parameter_count", "optimizer_tensors", "adam_step", "iteration"})
    if (!fields.count(key)) throw DataError(std::string("checkpoint header missing ") + key);
  RunConfig config;
  try {
    config = parse_config(ck.header.substr(split + 9));
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint carries an invalid config: ") + e.what());
  }
  const std::size_t np = fields["parameter_count"], no = fields["optimizer_tensors"];
  if (ck.tensors.size() != np + no || (no != 0 && no != 2 * np))
    throw DataError("checkpoint tensor count does not match its header");
  LoadedRun run{config, models::Model(config.model_config(), config.seed), {}, fields["iteration"]};
  run.model.load_parameters(std::span(ck.tensors).first(np));
  auto params = run.model.parameters();
  run.adam = nn::AdamState::zeros_like(params);
  if (no != 0) {
    for (std::size_t i = 0; i < np; ++i) {
      if (ck.tensors[np + i].shape() != params[i]->value.shape() ||
          ck.tensors[2 * np + i].shape() != params[i]->value.shape())
        throw DataError("checkpoint optimizer state shape mismatch");
      run.adam.first_moment[i] = ck.tensors[np + i];
      run.adam.second_moment[i] = ck.tensors[2 * np + i];
    }
  }
  run.adam.step = fields["adam_step"];
  return run;
}

TrainResult train(const RunConfig& config, const TrainOptions& options) {
  config.validate();
  if (config.out.empty()) throw ConfigError("an output directory is required");
  const fs::path out = config.out;
  fs::create_directories(out);
  const auto dataset = load_dataset(config);
  if (dataset.size() < 2) throw DataError("dataset needs at least two images");
  const auto model_config = config.model_config();

  models::Model model(model_config, config.seed);
  auto params = model.parameters();
  nn::AdamState adam = nn::AdamState::zeros_like(params);
  TrainResult result;

  const fs::path ck_path = out / kCheckpointFile;
  const fs::path csv_path = out / kMetricsFile;
  if (options.resume && fs::exists(ck_path)) {
    auto loaded = load_checkpoint(ck_path);
    RunConfig a = loaded.config, b = config;
    a.iterations = b.iterations = 0;
    a.out = b.out = "";
    if (a.serialize() != b.serialize()) throw ConfigError("resume: checkpoint config differs from the requested config");
    model.load_parameters([&] {
      std::vector<Tensor> values;
      for (const auto* p : loaded.model.parameters()) values.push_back(p->value);
      return values;
    }());
    adam = std::move(loaded.adam);
    result.resumed_from = loaded.iteration;
    if (result.resumed_from > config.iterations) throw ConfigError("resume: checkpoint is past the requested iterations");
    log_line(options.log, "resuming from iteration " + std::to_string(result.resumed_from));
  }

  write_text(out / kConfigFile, config.serialize());
  std::string csv = result.resumed_from > 0 ? truncate_csv(csv_path, result.resumed_from, csv_preamble(config, dataset))
                                            : csv_preamble(config, dataset);
  write_text(csv_path, csv);
  std::ofstream csv_out(csv_path, std::ios::app);

  const CounterRng batch_base(config.seed, Stream::kBatches);
  const CounterRng noise_base(config.seed, Stream::kNoise);
  const CounterRng metric_base(config.seed, Stream::kMetrics);
  const auto adam_config = config.adam_config();
  const auto start_time = std::chrono::steady_clock::now();

  std::size_t completed = result.resumed_from;
  double last_loss = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::size_t> rows(config.batch_size);
  for (std::size_t it = result.resumed_from; it < config.iterations; ++it) {
    CounterRng batch_rng = batch_base.split(it);
    for (auto& r : rows) r = batch_rng.below(dataset.size());
    const Tensor images = dataset.batch(rows);
    CounterRng noise_rng = noise_base.split(it);

    models::ForwardResult fr;
    try {
      nn::Tape tape;
      model.zero_grad();
      fr = model.forward_loss(tape, images, noise_rng, static_cast<long>(it + 1));
      tape.backward(fr.loss);
      for (const auto* p : params)
        if (!p->grad.all_finite())
          throw NumericalError("non-finite gradient for " + p->name, static_cast<long>(it + 1), "grad:" + p->name);
    } catch (const NumericalError& e) {
      std::ostringstream diag;
      diag << "numerical abort\niteration = " << e.iteration() << "\nterm = " << e.term() << "\nmessage = " << e.what()
           << "\nlast_finite_loss = " << format_double(last_loss) << "\n[config]\n"
           << config.serialize();
      write_text(out / kDiagnosticFile, diag.str());
      save_checkpoint(out / "diagnostic_checkpoint.bin", config, model, adam, completed);
      throw;
    }
    nn::adam_step(params, adam, adam_config);
    completed = it + 1;
    last_loss = fr.total;

    std::string line = std::to_string(completed) + "," + format_double(fr.total);
    for (double v : fr.recon) line += "," + format_double(v);
    for (double v : fr.kl) line += "," + format_double(v);
    for (const auto& per_dim : fr.kl_per_dim)
      for (double v : per_dim) line += "," + format_double(v);
    const bool eval_now = (config.eval_every > 0 && completed % config.eval_every == 0) || completed == config.iterations;
    if (eval_now) {
      CounterRng rng = metric_base.split(completed);
      const auto set = metrics::collect_latents(model, dataset, 0, config.eval_samples, rng, config.latent_mode);
      const auto track = metrics::nmi_track(set);
      line += "," + std::to_string(track.top_kl_dim);
      for (double v : track.top_row) line += "," + format_double(v);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
      std::ostringstream msg;
      msg << "iter " << completed << "/" << config.iterations << " loss " << fr.total << " recon0 " << fr.recon[0]
          << " nmi_dim " << track.top_kl_dim << " (" << secs << " s)";
      log_line(options.log, msg.str());
    } else {
      line += ",";
      for (std::size_t k = 0; k < dataset.num_factors(); ++k) line += ",";
    }
    csv_out << line << '\n';

    const bool stop = options.stop_after != 0 && completed >= options.stop_after && completed < config.iterations;
    if ((config.checkpoint_every > 0 && completed % config.checkpoint_every == 0) || stop) {
      csv_out.flush();
      save_checkpoint(ck_path, config, model, adam, completed);
    }
    if (stop) break;
  }
  csv_out.flush();
  result.completed = completed;
  result.last_loss = last_loss;
  result.finished = completed == config.iterations;
  if (!result.finished) return result;

  save_checkpoint(ck_path, config, model, adam, completed);
  if (options.skip_report) return result;
  result.report = metrics::evaluate(model, dataset, config.eval_options(config.final_eval_samples), config.seed);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  write_text(out / kReportFile, report_json(config, result.report, dataset, completed, last_loss, secs).dump(2) + "\n");
  return result;
}

metrics::MetricsReport evaluate_checkpoint(const fs::path& checkpoint, const fs::path& out, std::uint64_t seed,
                                           const std::optional<std::string>& dataset_override) {
  auto run = load_checkpoint(checkpoint);
  if (dataset_override) run.config.dataset = *dataset_override;
  const auto dataset = load_dataset(run.config);
  const auto start = std::chrono::steady_clock::now();
  auto report = metrics::evaluate(run.model, dataset, run.config.eval_options(run.config.final_eval_samples), seed);
  if (!out.empty()) {
    fs::create_directories(out);
    auto j = report_json(run.config, report, dataset, run.iteration, std::numeric_limits<double>::quiet_NaN(),
                         std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    j["eval_seed"] = seed;
    j["checkpoint"] = checkpoint.string();
    write_text(out / kReportFile, j.dump(2) + "\n");
  }
  return report;
}

metrics::MetricsReport read_report(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw DataError("malformed report " + path.string() + ": " + e.what());
  }
  metrics::MetricsReport report;
  for (const auto& s : j.at("spaces")) {
    metrics::SpaceReport r;
    r.space = s.at("space").get<std::size_t>();
    r.mig = s.at("mig").get<double>();
    r.dci = s.at("dci_disentanglement").get<double>();
    r.factor_vae_defined = !s.at("factor_vae_score").is_null();
    r.factor_vae = r.factor_vae_defined ? s.at("factor_vae_score").get<double>() : 0.0;
    r.recon = s.at("recon_error").get<double>();
    r.kl_per_dim = s.at("kl_per_dim").get<std::vector<double>>();
    const auto& nmi = s.at("nmi");
    const std::size_t rows = nmi.size(), cols = rows ? nmi[0].size() : 0;
    r.nmi = Tensor({rows, cols});
    for (std::size_t a = 0; a < rows; ++a)
      for (std::size_t b = 0; b < cols; ++b) r.nmi.at(a, b) = nmi[a][b].get<double>();
    report.spaces.push_back(std::move(r));
  }
  return report;
}

RunSummary run_or_reuse(const RunConfig& config, const std::string& tag, std::ostream* log) {
  const fs::path out = config.out;
  const fs::path report_path = out / kReportFile;
  if (fs::exists(report_path) && fs::exists(out / kConfigFile)) {
    try {
      if (read_text(out / kConfigFile) == config.serialize())
        return {tag, config, read_report(report_path)};
    } catch (const DataError&) {
      // fall through and retrain
    }
  }
  log_line(log, "training " + tag + " seed " + std::to_string(config.seed));
  TrainOptions opts;
  opts.resume = true;
  opts.log = log;
  auto result = train(config, opts);
  return {tag, config, std::move(result.report)};
}

Traversal traverse(const models::Model& model, const data::FactorDataset& dataset, const TraverseOptions& o) {
  if (o.space >= model.spaces()) throw ConfigError("traverse: space index out of range");
  if (o.steps == 0 || o.seeds == 0 || o.top_k == 0) throw ConfigError("traverse: steps, seeds and top_k must be positive");
  if (!(o.hi >= o.lo)) throw ConfigError("traverse: range must satisfy lo <= hi");
  const CounterRng base(o.seed, Stream::kTraversal);
  CounterRng kl_rng = base.split(0);
  const auto set = metrics::collect_latents(model, dataset, o.space, std::min<std::size_t>(dataset.size(), 10'000),
                                            kl_rng, metrics::LatentMode::kMean);
  std::vector<std::size_t> order(model.latent_dim());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return set.kl_per_dim[a] > set.kl_per_dim[b]; });

  Traversal t;
  for (std::size_t j : order) {
    if (t.dims.size() == o.top_k) break;
    if (set.kl_per_dim[j] >= metrics::kFactorVaePruneKl) t.dims.push_back(j);
  }
  if (t.dims.size() < o.top_k)
    std::cerr << "warning: only " << t.dims.size() << " non-degenerate latent dimensions (requested " << o.top_k
              << ")\n";

  CounterRng seed_rng = base.split(1);
  for (std::size_t s = 0; s < o.seeds; ++s) t.seed_rows.push_back(seed_rng.below(dataset.size()));
  for (std::size_t step = 0; step < o.steps; ++step)
    t.values.push_back(o.steps == 1 ? o.lo
                                    : o.lo + (o.hi - o.lo) * static_cast<double>(step) / static_cast<double>(o.steps - 1));

  const std::size_t res = dataset.resolution(), d = model.latent_dim(), c = dataset.channels();
  const Tensor seeds_mean = model.posterior(dataset.batch(t.seed_rows), o.space).mean;
  t.grid = Image(o.steps * res, std::max<std::size_t>(1, t.dims.size() * o.seeds) * res, c);
  if (t.dims.empty()) {
    t.grid = Image();
    return t;
  }
  for (std::size_t di = 0; di < t.dims.size(); ++di) {
    Tensor z({o.seeds * o.steps, d});
    for (std::size_t s = 0; s < o.seeds; ++s)
      for (std::size_t step = 0; step < o.steps; ++step) {
        const std::size_t r = s * o.steps + step;
        std::copy_n(seeds_mean.data() + s * d, d, z.data() + r * d);
        z.at(r, t.dims[di]) = t.values[step];
      }
    const auto probs = probabilities(model, model.decode(z, o.space));
    const std::size_t tile = c * res * res;
    for (std::size_t r = 0; r < o.seeds * o.steps; ++r) {
      std::vector<double> img(probs.begin() + static_cast<std::ptrdiff_t>(r * tile),
                              probs.begin() + static_cast<std::ptrdiff_t>((r + 1) * tile));
      const std::size_t s = r / o.steps, step = r % o.steps;
      blit_planar(t.grid, img, res, step * res, (di * o.seeds + s) * res);
      t.tiles.push_back(std::move(img));
    }
  }
  return t;
}

Traversal traverse_checkpoint(const fs::path& checkpoint, const fs::path& out, const TraverseOptions& options) {
  const auto run = load_checkpoint(checkpoint);
  const auto dataset = load_dataset(run.config);
  auto t = traverse(run.model, dataset, options);
  fs::create_directories(out);
  if (t.grid.pixels.empty()) return t;
  std::ostringstream extra;
  extra << "traverse range=" << format_double(options.lo) << "," << format_double(options.hi)
        << " steps=" << options.steps << " top_k=" << options.top_k << " seeds=" << options.seeds
        << " space=" << options.space << " traverse_seed=" << options.seed << " dims=";
  for (std::size_t i = 0; i < t.dims.size(); ++i) extra << (i ? "," : "") << t.dims[i];
  write_pnm(out / (t.grid.channels == 1 ? "traversal.pgm" : "traversal.ppm"), t.grid,
            config_comment(run.config, extra.str()));
  return t;
}

std::vector<std::vector<double>> sample_prior(const models::Model& model, std::size_t n, std::uint64_t seed,
                                              std::size_t space) {
  if (space >= model.spaces()) throw ConfigError("sample: space index out of range");
  std::vector<std::vector<double>> images;
  if (n == 0) return images;
  CounterRng rng(seed, Stream::kPrior);
  const std::size_t d = model.latent_dim();
  Tensor z({n, d});
  for (auto& v : z.values()) v = rng.normal();
  const auto probs = probabilities(model, model.decode(z, space));
  const std::size_t tile = probs.size() / n;
  for (std::size_t i = 0; i < n; ++i)
    images.emplace_back(probs.begin() + static_cast<std::ptrdiff_t>(i * tile),
                        probs.begin() + static_cast<std::ptrdiff_t>((i + 1) * tile));
  return images;
}

std::size_t sample_checkpoint(const fs::path& checkpoint, const fs::path& out, std::size_t n, std::uint64_t seed,
                              std::size_t space) {
  const auto run = load_checkpoint(checkpoint);
  const auto images = sample_prior(run.model, n, seed, space);
  if (images.empty()) return 0;
  const std::size_t res = run.config.resolution, c = images[0].size() / (res * res);
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  const std::size_t rows = (n + cols - 1) / cols;
  Image grid(cols * res, rows * res, c);
  for (std::size_t i = 0; i < n; ++i) blit_planar(grid, images[i], res, (i % cols) * res, (i / cols) * res);
  fs::create_directories(out);
  write_pnm(out / (c == 1 ? "samples.pgm" : "samples.ppm"), grid,
            config_comment(run.config, "sample n=" + std::to_string(n) + " sample_seed=" + std::to_string(seed) +
                                           " space=" + std::to_string(space)));
  return n;
}

std::vector<AblationRow> ablate(const RunConfig& base, const fs::path& out, const std::vector<std::uint64_t>& seeds,
                                std::ostream* log) {
  if (base.betas.size() < 2) throw ConfigError("ablate needs at least two pressures, e.g. betas = 1,10,40");
  std::vector<AblationRow> rows;
  const auto add_rows = [&rows](const RunSummary& run, const std::string& variant, std::size_t space_offset) {
    for (const auto& s : run.report.spaces)
      rows.push_back({variant, space_offset + s.space, run.config.betas[s.space], run.config.seed, s.mig, s.dci,
                      s.factor_vae, s.recon});
  };
  for (auto seed : seeds) {
    for (std::size_t i = 0; i < base.betas.size(); ++i) {
      RunConfig c = base;
      c.variant = models::Variant::kBetaVae;
      c.betas = {base.betas[i]};
      c.seed = seed;
      const std::string tag = "beta_vae_b" + format_double(base.betas[i]);
      c.out = (out / tag / ("seed_" + std::to_string(seed))).string();
      add_rows(run_or_reuse(c, tag, log), "beta_vae", i);
    }
    for (auto variant : {models::Variant::kMultiSpace, models::Variant::kHisLinear, models::Variant::kDeVae}) {
      RunConfig c = base;
      c.variant = variant;
      c.seed = seed;
      const std::string tag(models::to_string(variant));
      c.out = (out / tag / ("seed_" + std::to_string(seed))).string();
      add_rows(run_or_reuse(c, tag, log), tag, 0);
    }
  }
  fs::create_directories(out);
  std::string csv = "# devae ablation\n" + commented(base.serialize()) + "variant,space,beta,seed,mig,dci,factor_vae,recon\n";
  for (const auto& r : rows)
    csv += r.variant + "," + std::to_string(r.space) + "," + format_double(r.beta) + "," + std::to_string(r.seed) + "," +
           format_double(r.mig) + "," + format_double(r.dci) + "," + format_double(r.factor_vae) + "," +
           format_double(r.recon) + "\n";
  write_text(out / "ablation.csv", csv);
  return rows;
}

SweepMode parse_sweep_mode(std::string_view text) {
  if (text == "beta_x") return SweepMode::kBetaX;
  if (text == "beta_1_x") return SweepMode::kBeta1X;
  if (text == "beta_x_40") return SweepMode::kBetaX40;
  if (text == "ladder") return SweepMode::kLadder;
  throw ConfigError("unknown sweep mode '" + std::string(text) + "' (beta_x, beta_1_x, beta_x_40, ladder)");
}

std::string_view to_string(SweepMode mode) {
  switch (mode) {
    case SweepMode::kBetaX: return "beta_x";
    case SweepMode::kBeta1X: return "beta_1_x";
    case SweepMode::kBetaX40: return "beta_x_40";
    case SweepMode::kLadder: return "ladder";
  }
  return "?";
}

std::vector<std::vector<double>> parse_sweep_values(SweepMode mode, std::string_view text) {
  std::vector<std::vector<double>> values;
  const char sep = mode == SweepMode::kLadder ? ';' : ',';
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto pos = std::min(text.find(sep, start), text.size());
    const std::string item(text.substr(start, pos - start));
    start = pos + 1;
    if (item.find_first_not_of(" \t") == std::string::npos) {
      if (pos == text.size()) break;
      throw ConfigError("sweep values: empty entry");
    }
    RunConfig scratch;
    apply_setting(scratch, "betas", item);
    if (mode != SweepMode::kLadder && scratch.betas.size() != 1)
      throw ConfigError("sweep values: scalar modes take a comma-separated list of numbers");
    values.push_back(scratch.betas);
  }
  if (values.empty()) throw ConfigError("sweep values: at least one value is required");
  return values;
}

std::vector<double> sweep_betas(SweepMode mode, const std::vector<double>& value, const std::vector<double>& base) {
  const double x = value.at(0);
  switch (mode) {
    case SweepMode::kBetaX:
      return {x};
    case SweepMode::kBeta1X: {
      const double b0 = base.empty() ? 1.0 : base.front();
      if (x == b0) return {b0};
      if (x < b0) throw ConfigError("beta_1_x: value " + format_double(x) + " is below the first pressure");
      return {b0, x};
    }
    case SweepMode::kBetaX40: {
      const double b1 = base.size() >= 2 ? base[1] : 40.0;
      if (x == b1) return {b1};
      if (x > b1) throw ConfigError("beta_x_40: value " + format_double(x) + " exceeds the second pressure");
      return {x, b1};
    }
    case SweepMode::kLadder:
      return value;
  }
  return value;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw UsageError("spearman: length mismatch");
  const auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

SweepResult sweep(const RunConfig& base, SweepMode mode, const std::vector<std::vector<double>>& values,
                  const fs::path& out, const std::vector<std::uint64_t>& seeds, std::ostream* log) {
  SweepResult result;
  std::vector<double> xs, mig_medians, recon_medians;
  for (const auto& value : values) {
    const auto betas = sweep_betas(mode, value, base.betas);
    RunConfig c = base;
    c.betas = betas;
    if (betas.size() == 1) {
      c.variant = models::Variant::kBetaVae;
    } else if (c.variant == models::Variant::kBetaVae) {
      c.variant = models::Variant::kDeVae;
    }
    std::string tag = "b";
    for (double b : betas) tag += (tag.size() > 1 ? "_" : "") + format_double(b);
    std::vector<double> migs, recons;
    for (auto seed : seeds) {
      c.seed = seed;
      c.out = (out / tag / ("seed_" + std::to_string(seed))).string();
      const auto run = run_or_reuse(c, tag, log);
      const auto& s0 = run.report.spaces.at(0);
      result.rows.push_back({std::string(to_string(mode)), mode == SweepMode::kLadder ? format_list(value)
                                                                                      : format_double(value[0]),
                             betas, seed, s0.mig, s0.dci, s0.factor_vae, s0.recon});
      migs.push_back(s0.mig);
      recons.push_back(s0.recon);
    }
    xs.push_back(mode == SweepMode::kLadder ? static_cast<double>(value.size()) : value[0]);
    mig_medians.push_back(median(migs));
    recon_medians.push_back(median(recons));
  }
  result.spearman_mig = spearman(xs, mig_medians);
  result.spearman_recon = spearman(xs, recon_medians);

  fs::create_directories(out);
  std::string csv = "# devae sweep mode=" + std::string(to_string(mode)) + "\n" + commented(base.serialize()) +
                    "mode,value,betas,seed,mig,dci,factor_vae,recon\n";
  for (const auto& r : result.rows)
    csv += r.mode + ",\"" + r.value + "\",\"" + format_list(r.betas) + "\"," + std::to_string(r.seed) + "," +
           format_double(r.mig) + "," + format_double(r.dci) + "," + format_double(r.factor_vae) + "," +
           format_double(r.recon) + "\n";
  write_text(out / "frontier.csv", csv);
  json summary = {{"mode", to_string(mode)},
                  {"config", config_json(base)},
                  {"x", xs},
                  {"median_mig", mig_medians},
                  {"median_recon", recon_medians},
                  {"spearman_mig", std::isnan(result.spearman_mig) ? json(nullptr) : json(result.spearman_mig)},
                  {"spearman_recon", std::isnan(result.spearman_recon) ? json(nullptr) : json(result.spearman_recon)}};
  write_text(out / "sweep.json", summary.dump(2) + "\n");
  return result;
}

std::vector<std::string> csv_data_rows(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<std::string> rows;
  for (std::string line; std::getline(in, line);)
    if (!line.empty() && line[0] != '#') rows.push_back(line);
  return rows;
}

}  // namespace devae::experiment
