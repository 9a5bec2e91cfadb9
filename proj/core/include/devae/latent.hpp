#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "devae/tensor.hpp"

/// Diagonal-Gaussian latent spaces chained by positive per-dimension scalings.
namespace devae::latent {

/// Posterior parameters of one sample. The scale is stored as log-variance,
/// so sigma = exp(logvar / 2).
struct GaussianParams {
  std::vector<double> mean;
  std::vector<double> logvar;

  std::size_t dim() const noexcept { return mean.size(); }
  void validate() const;

  friend bool operator==(const GaussianParams&, const GaussianParams&) = default;
};

/// Learnable log-scales of the K-1 transitions between consecutive spaces.
/// Transition i maps space i to space i+1 by mean *= exp(w1[i]), sigma *= exp(w2[i]).
struct DiTChain {
  std::vector<std::vector<double>> w1;
  std::vector<std::vector<double>> w2;

  /// Identity chain (all log-scales zero) for a K-space hierarchy.
  static DiTChain identity(std::size_t spaces, std::size_t dim);

  std::size_t transitions() const noexcept { return w1.size(); }
  std::size_t spaces() const noexcept { return w1.size() + 1; }
  void validate(std::size_t dim) const;
};

/// Number of spaces and their KL pressures.
struct HierarchyConfig {
  std::vector<double> betas{1.0, 40.0};

  std::size_t spaces() const noexcept { return betas.size(); }
  /// Throws ConfigError unless K >= 1 and betas are finite, positive and strictly increasing.
  void validate() const;
};

struct KlTerms {
  std::vector<double> per_dim;
  double total = 0.0;
};

/// z = mean + exp(logvar/2) * noise.
std::vector<double> reparameterize(const GaussianParams& params, std::span<const double> noise);

/// One transition: mean' = exp(w1) * mean, logvar' = logvar + 2 w2.
GaussianParams dit_apply(const GaussianParams& params, std::span<const double> w1, std::span<const double> w2);

/// Parameters of space `space` computed from space 0 via cumulative log-scale sums.
GaussianParams cascade_params(const GaussianParams& params0, const DiTChain& chain, std::size_t space);

/// Closed-form KL against the unit normal prior, per dimension and summed.
KlTerms kl_standard(const GaussianParams& params);
/// Batched form: per-dimension KL averaged over rows of mean/logvar [n x d].
KlTerms kl_standard(const Tensor& mean, const Tensor& logvar);

/// KL of space `space` written directly in terms of space-0 parameters and the
/// cumulative chain sums. Agrees with kl_standard(cascade_params(...)).
double kl_chain(const GaussianParams& params0, const DiTChain& chain, std::size_t space);

/// Minimised objective: sum_i recon_i + sum_i beta_i * kl_i.
double devae_loss(std::span<const double> recon_terms, std::span<const double> kl_terms,
                  std::span<const double> betas);

struct CorrelationMatrix {
  std::size_t dim = 0;
  std::vector<double> values;   // row-major d x d
  std::vector<bool> degenerate; // zero-variance dimensions

  double at(std::size_t i, std::size_t j) const { return values[i * dim + j]; }
};

/// Pearson correlations between the columns of `samples` [n x d]. Zero-variance
/// columns are flagged and their rows/columns reported as 0.
CorrelationMatrix correlation_matrix(const Tensor& samples);

}  // namespace devae::latent
