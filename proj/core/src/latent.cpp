#include "devae/latent.hpp"

#include <cmath>
#include <string>

#include "devae/errors.hpp"

namespace devae::latent {

void GaussianParams::validate() const {
  if (mean.size() != logvar.size()) throw ConfigError("GaussianParams: mean and logvar differ in length");
  for (double v : logvar)
    if (!std::isfinite(v)) throw ConfigError("GaussianParams: non-finite logvar");
}

DiTChain DiTChain::identity(std::size_t spaces, std::size_t dim) {
  DiTChain chain;
  const std::size_t n = spaces == 0 ? 0 : spaces - 1;
  chain.w1.assign(n, std::vector<double>(dim, 0.0));
  chain.w2.assign(n, std::vector<double>(dim, 0.0));
  return chain;
}

void DiTChain::validate(std::size_t dim) const {
  if (w1.size() != w2.size()) throw ConfigError("DiTChain: w1 and w2 differ in length");
  for (std::size_t i = 0; i < w1.size(); ++i) {
    if (w1[i].size() != dim || w2[i].size() != dim) throw ConfigError("DiTChain: transition width mismatch");
    for (std::size_t j = 0; j < dim; ++j)
      if (!std::isfinite(w1[i][j]) || !std::isfinite(w2[i][j])) throw ConfigError("DiTChain: non-finite log-scale");
  }
}

void HierarchyConfig::validate() const {
  if (betas.empty()) throw ConfigError("hierarchy needs at least one space");
  for (std::size_t i = 0; i < betas.size(); ++i) {
    if (!std::isfinite(betas[i]) || betas[i] <= 0.0) throw ConfigError("beta values must be positive and finite");
    if (i > 0 && !(betas[i] > betas[i - 1])) {
      throw ConfigError("betas must be strictly increasing (beta[" + std::to_string(i) + "] <= beta[" +
                        std::to_string(i - 1) + "])");
    }
  }
}

std::vector<double> reparameterize(const GaussianParams& params, std::span<const double> noise) {
  if (noise.size() != params.dim()) throw UsageError("reparameterize: noise length mismatch");
  std::vector<double> z(params.dim());
  for (std::size_t j = 0; j < z.size(); ++j) z[j] = params.mean[j] + std::exp(0.5 * params.logvar[j]) * noise[j];
  return z;
}

GaussianParams dit_apply(const GaussianParams& params, std::span<const double> w1, std::span<const double> w2) {
  if (w1.size() != params.dim() || w2.size() != params.dim()) throw UsageError("dit_apply: log-scale length mismatch");
  GaussianParams out = params;
  for (std::size_t j = 0; j < params.dim(); ++j) {
    out.mean[j] = std::exp(w1[j]) * params.mean[j];
    out.logvar[j] = params.logvar[j] + 2.0 * w2[j];
  }
  return out;
}

namespace {

void check_space(const DiTChain& chain, std::size_t space) {
  if (space >= chain.spaces()) {
    throw UsageError("space index " + std::to_string(space) + " out of range for " + std::to_string(chain.spaces()) +
                     " spaces");
  }
}

}  // namespace

GaussianParams cascade_params(const GaussianParams& params0, const DiTChain& chain, std::size_t space) {
  check_space(chain, space);
  GaussianParams out = params0;
  for (std::size_t j = 0; j < params0.dim(); ++j) {
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t t = 0; t < space; ++t) {
      s1 += chain.w1[t][j];
      s2 += chain.w2[t][j];
    }
    out.mean[j] = std::exp(s1) * params0.mean[j];
    out.logvar[j] = params0.logvar[j] + 2.0 * s2;
  }
  return out;
}

KlTerms kl_standard(const GaussianParams& params) {
  KlTerms kl;
  kl.per_dim.resize(params.dim());
  for (std::size_t j = 0; j < params.dim(); ++j) {
    const double mu = params.mean[j];
    const double lv = params.logvar[j];
    kl.per_dim[j] = 0.5 * (mu * mu + std::exp(lv) - 1.0 - lv);
    kl.total += kl.per_dim[j];
  }
  return kl;
}

KlTerms kl_standard(const Tensor& mean, const Tensor& logvar) {
  if (mean.shape() != logvar.shape() || mean.rank() != 2 || mean.dim(0) == 0) {
    throw UsageError("kl_standard: expected matching nonempty [n x d] tensors");
  }
  const std::size_t n = mean.dim(0), d = mean.dim(1);
  KlTerms kl;
  kl.per_dim.assign(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) {
      const double mu = mean.at(r, j);
      const double lv = logvar.at(r, j);
      kl.per_dim[j] += 0.5 * (mu * mu + std::exp(lv) - 1.0 - lv);
    }
  for (double& v : kl.per_dim) {
    v /= static_cast<double>(n);
    kl.total += v;
  }
  return kl;
}

double kl_chain(const GaussianParams& params0, const DiTChain& chain, std::size_t space) {
  check_space(chain, space);
  double total = 0.0;
  for (std::size_t j = 0; j < params0.dim(); ++j) {
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t t = 0; t < space; ++t) {
      s1 += chain.w1[t][j];
      s2 += chain.w2[t][j];
    }
    // log sigma_i^2 = 2 s2 + logvar0, mu_i^2 = exp(2 s1) mu0^2.
    const double log_var_i = 2.0 * s2 + params0.logvar[j];
    total += 0.5 * (std::exp(2.0 * s1) * params0.mean[j] * params0.mean[j] + std::exp(log_var_i) - 1.0 - log_var_i);
  }
  return total;
}

double devae_loss(std::span<const double> recon_terms, std::span<const double> kl_terms,
                  std::span<const double> betas) {
  if (recon_terms.size() != kl_terms.size() || kl_terms.size() != betas.size()) {
    throw UsageError("devae_loss: recon, kl and beta vectors must have equal length");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < betas.size(); ++i) loss += recon_terms[i] + betas[i] * kl_terms[i];
  return loss;
}

CorrelationMatrix correlation_matrix(const Tensor& samples) {
  if (samples.rank() != 2 || samples.dim(0) < 2) throw UsageError("correlation_matrix: need [n x d] with n >= 2");
  const std::size_t n = samples.dim(0), d = samples.dim(1);
  std::vector<double> mean(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) mean[j] += samples.at(r, j);
  for (double& m : mean) m /= static_cast<double>(n);

  std::vector<double> cov(d * d, 0.0);
  std::vector<double> centered(d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) centered[j] = samples.at(r, j) - mean[j];
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i; j < d; ++j) cov[i * d + j] += centered[i] * centered[j];
  }

  CorrelationMatrix out;
  out.dim = d;
  out.values.assign(d * d, 0.0);
  out.degenerate.assign(d, false);
  for (std::size_t j = 0; j < d; ++j) out.degenerate[j] = !(cov[j * d + j] > 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    if (out.degenerate[i]) continue;
    out.values[i * d + i] = 1.0;
    for (std::size_t j = i + 1; j < d; ++j) {
      if (out.degenerate[j]) continue;
      const double rho = cov[i * d + j] / std::sqrt(cov[i * d + i] * cov[j * d + j]);
      out.values[i * d + j] = rho;
      out.values[j * d + i] = rho;
    }
  }
  return out;
}

}  // namespace devae::latent
