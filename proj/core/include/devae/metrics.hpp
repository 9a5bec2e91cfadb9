#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "devae/data.hpp"
#include "devae/model.hpp"
#include "devae/rng.hpp"
#include "devae/tensor.hpp"

/// Disentanglement and reconstruction evaluation.
namespace devae::metrics {

inline constexpr std::size_t kDefaultSamples = 10'000;
inline constexpr std::size_t kDefaultBins = 20;
inline constexpr std::size_t kFactorVaeVotes = 800;
inline constexpr std::size_t kFactorVaeBatch = 100;
inline constexpr double kFactorVaePruneKl = 0.01;
inline constexpr double kDciRidge = 1e-6;

/// Posterior means (default) or reparameterised samples.
enum class LatentMode { kMean, kSample };

/// Aggregated-posterior sample: latent rows with their ground-truth factor labels.
struct LatentSampleSet {
  Tensor z;                              // [n, d]
  std::vector<std::int32_t> labels;      // [n, F] row-major
  std::vector<std::size_t> cardinalities;
  std::vector<double> kl_per_dim;        // mean posterior KL per dimension
  bool with_replacement = false;

  std::size_t size() const { return z.rank() == 2 ? z.dim(0) : 0; }
  std::size_t dim() const { return z.rank() == 2 ? z.dim(1) : 0; }
  std::size_t num_factors() const noexcept { return cardinalities.size(); }
  std::vector<std::int32_t> factor_column(std::size_t k) const;
};

/// Draws n dataset rows (without replacement when n <= N, else with replacement and
/// flagged) and records space-`space` latents and labels.
LatentSampleSet collect_latents(const models::Model& model, const data::FactorDataset& dataset, std::size_t space,
                                std::size_t n, CounterRng& rng, LatentMode mode = LatentMode::kMean);

struct Discretized {
  std::vector<std::int32_t> bins;
  bool degenerate = false;
};

/// Equal-width bins over [min, max] of the column; the maximum lands in the last
/// bin. A constant column maps entirely to bin 0 and is flagged degenerate.
Discretized discretize(std::span<const double> column, std::size_t bins = kDefaultBins);

/// Plug-in entropy of a discrete sample, in nats.
double entropy(std::span<const std::int32_t> values);
/// Plug-in mutual information from the joint histogram, in nats.
double mutual_info_discrete(std::span<const std::int32_t> a, std::span<const std::int32_t> b);

struct MigResult {
  double score = 0.0;
  std::vector<double> per_factor;             // gap / H(c_k), NaN for excluded factors
  std::vector<std::size_t> excluded_factors;  // zero-entropy factors
};

MigResult mig(const LatentSampleSet& samples, std::size_t bins = kDefaultBins);

/// I(z_j; c_k) / H(c_k) as a [d, F] tensor (0 for zero-entropy factors).
Tensor nmi_matrix(const LatentSampleSet& samples, std::size_t bins = kDefaultBins);

struct NmiTrack {
  Tensor nmi;                   // [d, F]
  std::size_t top_kl_dim = 0;   // argmax of kl_per_dim
  std::vector<double> top_row;  // nmi row of that dimension
};

NmiTrack nmi_track(const LatentSampleSet& samples, std::size_t bins = kDefaultBins);

struct DciResult {
  double score = 0.0;
  Tensor importance;               // [d, F], |ridge coefficients|
  std::vector<double> per_dim;     // 1 - normalised entropy of each importance row
  std::vector<double> weights;     // share of total importance per dimension
};

/// Ridge regression of each standardised factor on the standardised latents;
/// disentanglement is the importance-weighted mean of 1 - H_F(row).
DciResult dci_disentanglement(const LatentSampleSet& samples, double ridge = kDciRidge);

/// Maps dataset rows to latent means [rows, d].
using MeanEncoder = std::function<Tensor(std::span<const std::size_t> rows)>;

struct FactorVaeOptions {
  std::size_t votes = kFactorVaeVotes;
  std::size_t batch = kFactorVaeBatch;
  double prune_kl = kFactorVaePruneKl;
  std::size_t normalization_samples = kDefaultSamples;
};

struct FactorVaeResult {
  double accuracy = 0.0;
  std::vector<std::size_t> active_dims;
  std::vector<std::size_t> skipped_factors;  // constant factors
};

/// Majority-vote accuracy of predicting the fixed factor from the dimension with the
/// lowest normalised variance. Throws DataError when every dimension is pruned.
FactorVaeResult factorvae_metric(const MeanEncoder& encoder, std::span<const double> kl_per_dim,
                                 const data::FactorDataset& dataset, const FactorVaeOptions& options, CounterRng& rng);

FactorVaeResult factorvae_metric(const models::Model& model, const data::FactorDataset& dataset, std::size_t space,
                                 const FactorVaeOptions& options, CounterRng& rng);

/// Posterior-mean encoder for one space, caching all dataset means when the dataset is small.
MeanEncoder make_mean_encoder(const models::Model& model, const data::FactorDataset& dataset, std::size_t space);

/// Mean per-sample pixel-summed loss (BCE or squared error) of decoding the space-`space`
/// posterior mean. Uses every row when n_eval >= N.
double reconstruction_error(const models::Model& model, const data::FactorDataset& dataset, std::size_t space,
                            std::size_t n_eval, CounterRng& rng);

struct SpaceReport {
  std::size_t space = 0;
  double mig = 0.0;
  double dci = 0.0;
  double factor_vae = 0.0;
  bool factor_vae_defined = true;
  double recon = 0.0;
  std::vector<double> kl_per_dim;
  Tensor nmi;
};

struct EvalOptions {
  std::size_t samples = kDefaultSamples;
  std::size_t bins = kDefaultBins;
  std::size_t recon_samples = 1000;
  LatentMode mode = LatentMode::kMean;
  FactorVaeOptions factor_vae;
  bool with_factor_vae = true;
};

struct MetricsReport {
  std::vector<SpaceReport> spaces;
};

/// Full per-space evaluation with independent metric streams derived from `seed`.
MetricsReport evaluate(const models::Model& model, const data::FactorDataset& dataset, const EvalOptions& options,
                       std::uint64_t seed);

}  // namespace devae::metrics
