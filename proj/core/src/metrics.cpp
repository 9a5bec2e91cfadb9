#include "devae/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>

#include "devae/errors.hpp"
#include "devae/ops.hpp"

namespace devae::metrics {
namespace {

// Encoding is batched to bound peak memory of the inference tape.
constexpr std::size_t kEncodeChunk = 1024;
constexpr std::size_t kCacheLimit = 200'000;

models::Posterior posterior_rows(const models::Model& model, const data::FactorDataset& dataset, std::size_t space,
                                 std::span<const std::size_t> rows) {
  const std::size_t d = model.latent_dim();
  models::Posterior out{Tensor({rows.size(), d}), Tensor({rows.size(), d})};
  for (std::size_t begin = 0; begin < rows.size(); begin += kEncodeChunk) {
    const std::size_t count = std::min(kEncodeChunk, rows.size() - begin);
    const auto part = model.posterior(dataset.batch(rows.subspan(begin, count)), space);
    std::copy(part.mean.values().begin(), part.mean.values().end(), out.mean.values().begin() + begin * d);
    std::copy(part.logvar.values().begin(), part.logvar.values().end(), out.logvar.values().begin() + begin * d);
  }
  return out;
}

std::vector<double> standardize(std::vector<double> v, bool& constant) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= n;
  constant = !(var > 0.0);
  for (double& x : v) x = constant ? 0.0 : (x - mean) / std::sqrt(var);
  return v;
}

}  // namespace

std::vector<std::int32_t> LatentSampleSet::factor_column(std::size_t k) const {
  const std::size_t F = num_factors();
  std::vector<std::int32_t> col(size());
  for (std::size_t r = 0; r < col.size(); ++r) col[r] = labels[r * F + k];
  return col;
}

LatentSampleSet collect_latents(const models::Model& model, const data::FactorDataset& dataset, std::size_t space,
                                std::size_t n, CounterRng& rng, LatentMode mode) {
  if (n == 0) throw UsageError("collect_latents: n must be positive");
  if (dataset.size() == 0) throw DataError("collect_latents: empty dataset");
  LatentSampleSet set;
  const std::size_t N = dataset.size();
  std::vector<std::size_t> rows(n);
  if (n > N) {
    set.with_replacement = true;
    for (auto& r : rows) r = rng.below(N);
  } else {
    // partial Fisher-Yates
    std::vector<std::size_t> perm(N);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = 0; i < n; ++i) std::swap(perm[i], perm[i + rng.below(N - i)]);
    std::copy_n(perm.begin(), n, rows.begin());
  }
  const auto post = posterior_rows(model, dataset, space, rows);
  const std::size_t d = model.latent_dim();
  set.z = post.mean;
  if (mode == LatentMode::kSample) {
    for (std::size_t i = 0; i < n * d; ++i) set.z[i] = post.mean[i] + std::exp(0.5 * post.logvar[i]) * rng.normal();
  }
  set.kl_per_dim = latent::kl_standard(post.mean, post.logvar).per_dim;
  const std::size_t F = dataset.num_factors();
  set.labels.resize(n * F);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < F; ++k) set.labels[r * F + k] = dataset.label(rows[r], k);
  for (const auto& s : dataset.specs()) set.cardinalities.push_back(s.cardinality);
  return set;
}

Discretized discretize(std::span<const double> column, std::size_t bins) {
  if (column.size() < 2) throw UsageError("discretize: need at least two values");
  if (bins == 0) throw UsageError("discretize: bins must be positive");
  const auto [lo_it, hi_it] = std::minmax_element(column.begin(), column.end());
  const double lo = *lo_it, hi = *hi_it;
  Discretized out;
  out.bins.assign(column.size(), 0);
  if (!(hi > lo)) {
    out.degenerate = true;
    return out;
  }
  const double range = hi - lo;
  const auto last = static_cast<std::int32_t>(bins - 1);
  for (std::size_t i = 0; i < column.size(); ++i) {
    const auto b = static_cast<std::int32_t>(std::floor((column[i] - lo) / range * static_cast<double>(bins)));
    out.bins[i] = std::clamp(b, std::int32_t{0}, last);
  }
  return out;
}

double entropy(std::span<const std::int32_t> values) {
  if (values.empty()) return 0.0;
  std::map<std::int32_t, std::size_t> counts;
  for (auto v : values) ++counts[v];
  const double n = static_cast<double>(values.size());
  double h = 0.0;
  for (const auto& [_, c] : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

double mutual_info_discrete(std::span<const std::int32_t> a, std::span<const std::int32_t> b) {
  if (a.size() != b.size()) throw UsageError("mutual_info_discrete: length mismatch");
  if (a.empty()) return 0.0;
  std::map<std::int32_t, std::size_t> ca, cb;
  std::map<std::pair<std::int32_t, std::int32_t>, std::size_t> joint;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++ca[a[i]];
    ++cb[b[i]];
    ++joint[{a[i], b[i]}];
  }
  const double n = static_cast<double>(a.size());
  double mi = 0.0;
  for (const auto& [key, c] : joint) {
    const double pxy = static_cast<double>(c) / n;
    const double px = static_cast<double>(ca[key.first]) / n;
    const double py = static_cast<double>(cb[key.second]) / n;
    mi += pxy * std::log(pxy / (px * py));
  }
  // Clamp rounding residue; the plug-in estimate is a KL divergence and hence >= 0.
  return std::max(mi, 0.0);
}

namespace {

std::vector<std::vector<std::int32_t>> discretize_all(const LatentSampleSet& s, std::size_t bins) {
  std::vector<std::vector<std::int32_t>> out(s.dim());
  for (std::size_t j = 0; j < s.dim(); ++j) out[j] = discretize(s.z.column(j), bins).bins;
  return out;
}

}  // namespace

MigResult mig(const LatentSampleSet& samples, std::size_t bins) {
  if (samples.dim() < 2) throw UsageError("mig needs at least two latent dimensions");
  const auto codes = discretize_all(samples, bins);
  MigResult result;
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t k = 0; k < samples.num_factors(); ++k) {
    const auto factor = samples.factor_column(k);
    const double h = entropy(factor);
    if (!(h > 0.0)) {
      result.excluded_factors.push_back(k);
      result.per_factor.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    std::vector<double> mi(samples.dim());
    for (std::size_t j = 0; j < samples.dim(); ++j) mi[j] = mutual_info_discrete(codes[j], factor);
    std::partial_sort(mi.begin(), mi.begin() + 2, mi.end(), std::greater<>());
    const double gap = (mi[0] - mi[1]) / h;
    result.per_factor.push_back(gap);
    total += gap;
    ++used;
  }
  if (used == 0) throw DataError("mig: every factor is constant");
  result.score = total / static_cast<double>(used);
  return result;
}

Tensor nmi_matrix(const LatentSampleSet& samples, std::size_t bins) {
  const auto codes = discretize_all(samples, bins);
  const std::size_t F = samples.num_factors();
  Tensor nmi({samples.dim(), F});
  for (std::size_t k = 0; k < F; ++k) {
    const auto factor = samples.factor_column(k);
    const double h = entropy(factor);
    if (!(h > 0.0)) continue;
    for (std::size_t j = 0; j < samples.dim(); ++j) {
      nmi.at(j, k) = std::min(1.0, mutual_info_discrete(codes[j], factor) / h);
    }
  }
  return nmi;
}

NmiTrack nmi_track(const LatentSampleSet& samples, std::size_t bins) {
  NmiTrack track;
  track.nmi = nmi_matrix(samples, bins);
  if (samples.kl_per_dim.size() != samples.dim()) throw UsageError("nmi_track: KL vector width mismatch");
  track.top_kl_dim = static_cast<std::size_t>(
      std::max_element(samples.kl_per_dim.begin(), samples.kl_per_dim.end()) - samples.kl_per_dim.begin());
  const std::size_t F = samples.num_factors();
  track.top_row.assign(track.nmi.data() + track.top_kl_dim * F, track.nmi.data() + (track.top_kl_dim + 1) * F);
  return track;
}

DciResult dci_disentanglement(const LatentSampleSet& samples, double ridge) {
  const std::size_t n = samples.size(), d = samples.dim(), F = samples.num_factors();
  if (n < 2 || d == 0) throw UsageError("dci needs at least two samples");
  Eigen::MatrixXd X(n, d);
  for (std::size_t j = 0; j < d; ++j) {
    bool constant = false;
    const auto col = standardize(samples.z.column(j), constant);
    for (std::size_t r = 0; r < n; ++r) X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = col[r];
  }
  Eigen::MatrixXd gram = X.transpose() * X;
  gram.diagonal().array() += ridge;
  const Eigen::LDLT<Eigen::MatrixXd> solver(gram);

  DciResult result;
  result.importance = Tensor({d, F});
  std::size_t active_factors = 0;
  for (std::size_t k = 0; k < F; ++k) {
    const auto factor = samples.factor_column(k);
    bool constant = false;
    const auto y = standardize(std::vector<double>(factor.begin(), factor.end()), constant);
    if (constant) continue;
    ++active_factors;
    const Eigen::VectorXd rhs = X.transpose() * Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(n));
    const Eigen::VectorXd beta = solver.solve(rhs);
    for (std::size_t j = 0; j < d; ++j) result.importance.at(j, k) = std::abs(beta(static_cast<Eigen::Index>(j)));
  }
  if (active_factors == 0) throw DataError("dci: every factor is constant");

  const double log_base = active_factors > 1 ? std::log(static_cast<double>(active_factors)) : 1.0;
  result.per_dim.assign(d, 0.0);
  result.weights.assign(d, 0.0);
  double total_importance = 0.0;
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t k = 0; k < F; ++k) total_importance += result.importance.at(j, k);
  if (!(total_importance > 0.0)) return result;
  for (std::size_t j = 0; j < d; ++j) {
    double row = 0.0;
    for (std::size_t k = 0; k < F; ++k) row += result.importance.at(j, k);
    if (!(row > 0.0)) continue;  // excluded from weighting
    double h = 0.0;
    for (std::size_t k = 0; k < F; ++k) {
      const double p = result.importance.at(j, k) / row;
      if (p > 0.0) h -= p * std::log(p);
    }
    result.per_dim[j] = active_factors > 1 ? 1.0 - h / log_base : 1.0;
    result.weights[j] = row / total_importance;
    result.score += result.weights[j] * result.per_dim[j];
  }
  return result;
}

MeanEncoder make_mean_encoder(const models::Model& model, const data::FactorDataset& dataset, std::size_t space) {
  if (dataset.size() <= kCacheLimit) {
    std::vector<std::size_t> all(dataset.size());
    std::iota(all.begin(), all.end(), 0);
    auto cache = std::make_shared<Tensor>(posterior_rows(model, dataset, space, all).mean);
    return [cache](std::span<const std::size_t> rows) {
      const std::size_t d = cache->dim(1);
      Tensor out({rows.size(), d});
      for (std::size_t r = 0; r < rows.size(); ++r)
        std::copy_n(cache->data() + rows[r] * d, d, out.data() + r * d);
      return out;
    };
  }
  return [&model, &dataset, space](std::span<const std::size_t> rows) {
    return posterior_rows(model, dataset, space, rows).mean;
  };
}

FactorVaeResult factorvae_metric(const MeanEncoder& encoder, std::span<const double> kl_per_dim,
                                 const data::FactorDataset& dataset, const FactorVaeOptions& options, CounterRng& rng) {
  const std::size_t d = kl_per_dim.size();
  const std::size_t N = dataset.size();
  FactorVaeResult result;

  // Global scale of each dimension.
  std::vector<std::size_t> norm_rows(std::min(options.normalization_samples, N));
  if (norm_rows.size() == N) {
    std::iota(norm_rows.begin(), norm_rows.end(), 0);
  } else {
    for (auto& r : norm_rows) r = rng.below(N);
  }
  const Tensor reference = encoder(norm_rows);
  std::vector<double> scale(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    bool constant = false;
    const auto col = reference.column(j);
    standardize(col, constant);
    if (constant) continue;
    const double mean = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(col.size());
    double var = 0.0;
    for (double v : col) var += (v - mean) * (v - mean);
    scale[j] = std::sqrt(var / static_cast<double>(col.size()));
  }
  for (std::size_t j = 0; j < d; ++j)
    if (kl_per_dim[j] >= options.prune_kl && scale[j] > 0.0) result.active_dims.push_back(j);
  if (result.active_dims.empty()) throw DataError("factorvae_metric: every latent dimension was pruned");

  std::vector<std::size_t> factors;
  for (std::size_t k = 0; k < dataset.num_factors(); ++k) {
    if (dataset.specs()[k].cardinality < 2) {
      std::cerr << "warning: factorvae_metric skips constant factor '" << dataset.specs()[k].name << "'\n";
      result.skipped_factors.push_back(k);
    } else {
      factors.push_back(k);
    }
  }
  if (factors.empty()) throw DataError("factorvae_metric: every factor is constant");

  const std::size_t F = dataset.num_factors();
  std::vector<std::size_t> votes(d * F, 0);
  for (std::size_t v = 0; v < options.votes; ++v) {
    const std::size_t k = factors[rng.below(factors.size())];
    const auto batch = data::sample_fixed_factor_batch(dataset, k, options.batch, rng);
    const Tensor z = encoder(batch.rows);
    std::size_t best = result.active_dims.front();
    double best_var = std::numeric_limits<double>::infinity();
    for (std::size_t j : result.active_dims) {
      const auto col = z.column(j);
      const double mean = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(col.size());
      double var = 0.0;
      for (double x : col) var += (x / scale[j] - mean / scale[j]) * (x / scale[j] - mean / scale[j]);
      var /= static_cast<double>(col.size() - 1);
      if (var < best_var) {
        best_var = var;
        best = j;
      }
    }
    ++votes[best * F + k];
  }
  std::size_t correct = 0;
  for (std::size_t j = 0; j < d; ++j) correct += *std::max_element(votes.begin() + j * F, votes.begin() + (j + 1) * F);
  result.accuracy = static_cast<double>(correct) / static_cast<double>(options.votes);
  return result;
}

FactorVaeResult factorvae_metric(const models::Model& model, const data::FactorDataset& dataset, std::size_t space,
                                 const FactorVaeOptions& options, CounterRng& rng) {
  CounterRng kl_rng = rng.split(1);
  const auto set = collect_latents(model, dataset, space, std::min(options.normalization_samples, dataset.size()),
                                   kl_rng, LatentMode::kMean);
  CounterRng vote_rng = rng.split(2);
  return factorvae_metric(make_mean_encoder(model, dataset, space), set.kl_per_dim, dataset, options, vote_rng);
}

double reconstruction_error(const models::Model& model, const data::FactorDataset& dataset, std::size_t space,
                            std::size_t n_eval, CounterRng& rng) {
  if (n_eval == 0) throw UsageError("reconstruction_error: n_eval must be positive");
  const std::size_t N = dataset.size();
  std::vector<std::size_t> rows;
  if (n_eval >= N) {
    rows.resize(N);
    std::iota(rows.begin(), rows.end(), 0);
  } else {
    rows.resize(n_eval);
    for (auto& r : rows) r = rng.below(N);
  }
  const bool bernoulli = model.config().likelihood() == models::Likelihood::kBernoulli;
  double total = 0.0;
  for (std::size_t begin = 0; begin < rows.size(); begin += kEncodeChunk) {
    const std::size_t count = std::min(kEncodeChunk, rows.size() - begin);
    const Tensor images = dataset.batch(std::span(rows).subspan(begin, count));
    const Tensor out = model.decode(model.posterior(images, space).mean, space);
    total += static_cast<double>(count) * (bernoulli ? nn::bce_with_logits_value(out.values(), images.values(), count)
                                                     : nn::squared_error_value(out.values(), images.values(), count));
  }
  return total / static_cast<double>(rows.size());
}

MetricsReport evaluate(const models::Model& model, const data::FactorDataset& dataset, const EvalOptions& options,
                       std::uint64_t seed) {
  MetricsReport report;
  const CounterRng base(seed, Stream::kMetrics);
  for (std::size_t i = 0; i < model.spaces(); ++i) {
    SpaceReport space;
    space.space = i;
    // Same rows for every space so per-space numbers are directly comparable.
    CounterRng sample_rng = base.split(1);
    const auto set = collect_latents(model, dataset, i, options.samples, sample_rng, options.mode);
    space.mig = mig(set, options.bins).score;
    space.dci = dci_disentanglement(set).score;
    space.nmi = nmi_matrix(set, options.bins);
    space.kl_per_dim = set.kl_per_dim;
    CounterRng recon_rng = base.split(2);
    space.recon = reconstruction_error(model, dataset, i, options.recon_samples, recon_rng);
    if (options.with_factor_vae) {
      CounterRng fv_rng = base.split(3);
      try {
        space.factor_vae = factorvae_metric(model, dataset, i, options.factor_vae, fv_rng).accuracy;
      } catch (const DataError& e) {
        std::cerr << "warning: factor_vae metric undefined for space " << i << ": " << e.what() << '\n';
        space.factor_vae_defined = false;
        space.factor_vae = 0.0;
      }
    }
    report.spaces.push_back(std::move(space));
  }
  return report;
}

}  // namespace devae::metrics
