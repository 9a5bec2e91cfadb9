#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "devae/adam.hpp"
#include "devae/config.hpp"
#include "devae/data.hpp"
#include "devae/image_io.hpp"
#include "devae/metrics.hpp"
#include "devae/model.hpp"

/// Training loop, artifact emission and the multi-run studies.
namespace devae::experiment {

namespace fs = std::filesystem;

inline constexpr const char* kConfigFile = "config.txt";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kReportFile = "report.json";
inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kDiagnosticFile = "diagnostic.txt";

/// Loads `config.dataset` or renders the `config.factors` grid.
data::FactorDataset load_dataset(const RunConfig& config);

struct TrainOptions {
  /// Continue from out/checkpoint.bin when present.
  bool resume = false;
  /// Stop (after checkpointing) once this many iterations have completed; 0 = run to the end.
  std::size_t stop_after = 0;
  /// Skip the final evaluation and report (used for short probes).
  bool skip_report = false;
  std::ostream* log = nullptr;
};

struct TrainResult {
  std::size_t completed = 0;
  std::size_t resumed_from = 0;
  bool finished = false;
  double last_loss = 0.0;
  metrics::MetricsReport report;
};

/// Runs the optimisation loop for `config`, writing config.txt, metrics.csv,
/// checkpoint.bin and report.json into `config.out`. A non-finite term writes
/// diagnostic.txt plus a snapshot and rethrows NumericalError.
TrainResult train(const RunConfig& config, const TrainOptions& options = {});

/// Model (and optimiser) state restored from a checkpoint file.
struct LoadedRun {
  RunConfig config;
  models::Model model;
  nn::AdamState adam;
  std::size_t iteration = 0;
};

LoadedRun load_checkpoint(const fs::path& path);
void save_checkpoint(const fs::path& path, const RunConfig& config, const models::Model& model,
                     const nn::AdamState& adam, std::size_t iteration);

/// Full metric evaluation of a checkpoint; writes report.json into `out` when non-empty.
metrics::MetricsReport evaluate_checkpoint(const fs::path& checkpoint, const fs::path& out, std::uint64_t seed,
                                           const std::optional<std::string>& dataset_override = std::nullopt);

struct TraverseOptions {
  double lo = -2.0;
  double hi = 2.0;
  std::size_t steps = 9;
  std::size_t top_k = 5;
  std::size_t seeds = 3;
  std::size_t space = 0;
  std::uint64_t seed = 0;
};

struct Traversal {
  std::vector<std::size_t> dims;          // traversed dimensions, highest KL first
  std::vector<std::size_t> seed_rows;     // dataset rows whose encodings fix the other latents
  std::vector<double> values;             // traversal values, one per step
  /// tiles[(d * seeds + s) * steps + t] = decoded image (probabilities, planar).
  std::vector<std::vector<double>> tiles;
  Image grid;                             // width steps*res, height dims*seeds*res
};

/// Fewer than top_k non-degenerate dimensions: traverses all of them and warns.
Traversal traverse(const models::Model& model, const data::FactorDataset& dataset, const TraverseOptions& options);

/// Traverses a checkpoint and writes traversal.pgm (or .ppm) into `out`.
Traversal traverse_checkpoint(const fs::path& checkpoint, const fs::path& out, const TraverseOptions& options);

/// Decodes n prior draws with the space-`space` indicator. Returns planar probabilities.
std::vector<std::vector<double>> sample_prior(const models::Model& model, std::size_t n, std::uint64_t seed,
                                              std::size_t space = 0);

/// Writes samples.pgm (tiled, or nothing when n = 0). Returns the number of images written.
std::size_t sample_checkpoint(const fs::path& checkpoint, const fs::path& out, std::size_t n, std::uint64_t seed,
                              std::size_t space = 0);

/// One finished run summarised for the multi-run studies.
struct RunSummary {
  std::string tag;
  RunConfig config;
  metrics::MetricsReport report;
};

/// Trains config unless config.out already holds a finished report for an identical
/// configuration, in which case that report is loaded.
RunSummary run_or_reuse(const RunConfig& config, const std::string& tag, std::ostream* log = nullptr);

/// Reads report.json back into a MetricsReport.
metrics::MetricsReport read_report(const fs::path& path);

struct AblationRow {
  std::string variant;
  std::size_t space = 0;
  double beta = 0.0;
  std::uint64_t seed = 0;
  double mig = 0.0;
  double dci = 0.0;
  double factor_vae = 0.0;
  double recon = 0.0;
};

/// Variant comparison over `betas` (default [1,10,40]): one BetaVAE per beta plus
/// MultiSpace, HiSLinear and DeVAE, each for every seed. Writes ablation.csv.
std::vector<AblationRow> ablate(const RunConfig& base, const fs::path& out, const std::vector<std::uint64_t>& seeds,
                                std::ostream* log = nullptr);

enum class SweepMode { kBetaX, kBeta1X, kBetaX40, kLadder };
SweepMode parse_sweep_mode(std::string_view text);
std::string_view to_string(SweepMode mode);

/// Parses "1,5,10" (scalar modes) or "[1,10];[1,10,40]" (ladder mode).
std::vector<std::vector<double>> parse_sweep_values(SweepMode mode, std::string_view text);

/// Beta assignment for one sweep point; equal pressures collapse to a single-space BetaVAE.
std::vector<double> sweep_betas(SweepMode mode, const std::vector<double>& value, const std::vector<double>& base_betas);

struct FrontierRow {
  std::string mode;
  std::string value;
  std::vector<double> betas;
  std::uint64_t seed = 0;
  double mig = 0.0;
  double dci = 0.0;
  double factor_vae = 0.0;
  double recon = 0.0;  // space 0
};

struct SweepResult {
  std::vector<FrontierRow> rows;
  double spearman_mig = 0.0;    // sweep value vs median MIG (scalar modes)
  double spearman_recon = 0.0;  // sweep value vs median recon
};

/// One run per (value, seed); writes frontier.csv and sweep.json into `out`.
SweepResult sweep(const RunConfig& base, SweepMode mode, const std::vector<std::vector<double>>& values,
                  const fs::path& out, const std::vector<std::uint64_t>& seeds, std::ostream* log = nullptr);

/// Spearman rank correlation with average ranks for ties. NaN when either side is constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

double median(std::vector<double> values);

/// Data rows of a metrics CSV, i.e. everything except '#' comment lines.
std::vector<std::string> csv_data_rows(const fs::path& path);

}  // namespace devae::experiment
