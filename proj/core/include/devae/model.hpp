#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "devae/latent.hpp"
#include "devae/rng.hpp"
#include "devae/tape.hpp"

namespace devae::models {

enum class EncoderKind { kConv, kMlp };
enum class Variant { kBetaVae, kMultiSpace, kHisLinear, kDeVae };
enum class Likelihood { kBernoulli, kGaussian };

std::string_view to_string(Variant v);
std::string_view to_string(EncoderKind k);
Variant parse_variant(std::string_view text);
EncoderKind parse_encoder_kind(std::string_view text);

struct ArchitectureConfig {
  EncoderKind kind = EncoderKind::kMlp;
  /// Hidden widths of the mlp encoder; the decoder mirrors them. Ignored for conv.
  std::vector<std::size_t> hidden{128, 128};
  std::size_t resolution = 16;
  std::size_t channels = 1;
  std::size_t latent_dim = 10;

  std::size_t pixels() const noexcept { return channels * resolution * resolution; }
  /// conv requires 64x64 inputs (the fixed 4-layer stride-2 stack); mlp any square >= 8.
  void validate() const;
};

struct ModelConfig {
  Variant variant = Variant::kDeVae;
  latent::HierarchyConfig hierarchy;
  ArchitectureConfig arch;
  /// Reuse one noise draw for every space instead of fresh noise per space.
  bool shared_noise = false;

  std::size_t spaces() const noexcept { return hierarchy.spaces(); }
  Likelihood likelihood() const noexcept {
    return arch.channels == 1 ? Likelihood::kBernoulli : Likelihood::kGaussian;
  }
  /// BetaVAE needs K = 1, MultiSpace and HisLinear K >= 2; DeVAE accepts any K >= 1.
  void validate() const;
};

/// One-hot space index fed to the shared decoder.
struct SpaceIndicator {
  std::size_t index = 0;
  std::size_t spaces = 1;

  std::vector<double> one_hot() const;
};

/// Value-level ablation transition: mean' = M1 mean, logvar' = M2 logvar, with
/// M1, M2 row-major d x d.
latent::GaussianParams linear_transition_apply(const latent::GaussianParams& params, std::span<const double> m1,
                                               std::span<const double> m2);

struct Posterior {
  Tensor mean;    // [n, d]
  Tensor logvar;  // [n, d]
};

struct ForwardResult {
  nn::Var loss;
  double total = 0.0;
  std::vector<double> recon;                     // per space, batch mean
  std::vector<double> kl;                        // per space, batch mean
  std::vector<std::vector<double>> kl_per_dim;   // per space, per dimension
};

/// Encoder(s), shared decoder and inter-space transitions for one variant.
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  std::size_t spaces() const noexcept { return config_.spaces(); }
  std::size_t latent_dim() const noexcept { return config_.arch.latent_dim; }

  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;
  void zero_grad();
  /// Replaces all parameter values; shapes must match exactly.
  void load_parameters(std::span<const Tensor> values);

  /// Records the full training objective for `images` ([B, c, h, w] in [0,1]) on
  /// `tape`, drawing reparameterisation noise from `noise_rng`. Throws
  /// NumericalError naming the first non-finite term.
  ForwardResult forward_loss(nn::Tape& tape, const Tensor& images, CounterRng& noise_rng, long iteration = -1);

  /// Raw encoder head ([n, 2d]) of encoder `which` (0 unless MultiSpace).
  Tensor encoder_head(const Tensor& images, std::size_t which = 0) const;
  /// Posterior of space `space` for each image.
  Posterior posterior(const Tensor& images, std::size_t space) const;
  /// Decoder logits (Bernoulli) or means (Gaussian), shape [n, c, h, w].
  Tensor decode(const Tensor& z, std::size_t space) const;

  /// DiT log-scales (DeVAE only; identity chain otherwise).
  latent::DiTChain chain() const;
  void set_chain(const latent::DiTChain& chain);

 private:
  struct Dense {
    std::size_t weight, bias;
  };
  struct Conv {
    std::size_t kernel, bias;
  };
  struct EncoderLayout {
    std::vector<Conv> convs;
    std::vector<Dense> dense;
  };
  struct DecoderLayout {
    std::vector<Dense> dense;
    std::vector<Conv> deconvs;
  };
  using Binder = std::function<nn::Var(std::size_t)>;

  std::size_t add_param(std::string name, Shape shape, double bound, CounterRng& rng);
  EncoderLayout build_encoder(const std::string& prefix, CounterRng& rng);
  DecoderLayout build_decoder(CounterRng& rng);

  nn::Var run_encoder(nn::Tape& tape, const Binder& bind, const EncoderLayout& enc, nn::Var images) const;
  nn::Var run_decoder(nn::Tape& tape, const Binder& bind, nn::Var z, std::size_t space) const;
  /// Space-i (mean, logvar) vars built from the encoder head(s).
  std::vector<std::pair<nn::Var, nn::Var>> space_params(nn::Tape& tape, const Binder& bind, nn::Var images) const;

  ModelConfig config_;
  std::vector<nn::Parameter> params_;
  std::vector<EncoderLayout> encoders_;
  DecoderLayout decoder_;
  std::vector<std::pair<std::size_t, std::size_t>> transitions_;  // (w1|M1, w2|M2) per transition
};

}  // namespace devae::models
