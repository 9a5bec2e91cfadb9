#include "devae/model.hpp"

#include <cmath>

#include "devae/errors.hpp"
#include "devae/ops.hpp"

namespace devae::models {

using nn::Tape;
using nn::Var;

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kBetaVae: return "beta_vae";
    case Variant::kMultiSpace: return "multi_space";
    case Variant::kHisLinear: return "his_linear";
    case Variant::kDeVae: return "devae";
  }
  return "?";
}

std::string_view to_string(EncoderKind k) { return k == EncoderKind::kConv ? "conv" : "mlp"; }

Variant parse_variant(std::string_view text) {
  if (text == "beta_vae" || text == "betavae") return Variant::kBetaVae;
  if (text == "multi_space" || text == "ms") return Variant::kMultiSpace;
  if (text == "his_linear" || text == "linear") return Variant::kHisLinear;
  if (text == "devae") return Variant::kDeVae;
  throw ConfigError("unknown variant '" + std::string(text) + "' (beta_vae, multi_space, his_linear, devae)");
}

EncoderKind parse_encoder_kind(std::string_view text) {
  if (text == "mlp") return EncoderKind::kMlp;
  if (text == "conv") return EncoderKind::kConv;
  throw ConfigError("unknown architecture '" + std::string(text) + "' (mlp, conv)");
}

void ArchitectureConfig::validate() const {
  if (latent_dim == 0) throw ConfigError("latent_dim must be positive");
  if (channels != 1 && channels != 3) throw ConfigError("channels must be 1 or 3");
  if (kind == EncoderKind::kConv) {
    if (resolution != 64) throw ConfigError("conv architecture requires 64x64 inputs");
  } else {
    if (resolution < 8) throw ConfigError("mlp architecture requires resolution >= 8");
    if (hidden.empty()) throw ConfigError("mlp architecture needs at least one hidden layer");
    for (auto w : hidden)
      if (w == 0) throw ConfigError("hidden widths must be positive");
  }
}

void ModelConfig::validate() const {
  hierarchy.validate();
  arch.validate();
  const std::size_t k = spaces();
  switch (variant) {
    case Variant::kBetaVae:
      if (k != 1) throw ConfigError("beta_vae uses exactly one space");
      break;
    case Variant::kMultiSpace:
    case Variant::kHisLinear:
      if (k < 2) throw ConfigError(std::string(to_string(variant)) + " needs at least two spaces");
      break;
    case Variant::kDeVae:
      break;
  }
}

std::vector<double> SpaceIndicator::one_hot() const {
  if (index >= spaces) throw UsageError("space indicator index out of range");
  std::vector<double> v(spaces, 0.0);
  v[index] = 1.0;
  return v;
}

latent::GaussianParams linear_transition_apply(const latent::GaussianParams& params, std::span<const double> m1,
                                               std::span<const double> m2) {
  const std::size_t d = params.dim();
  if (m1.size() != d * d || m2.size() != d * d) throw UsageError("linear_transition_apply: matrices must be d x d");
  latent::GaussianParams out = params;
  for (std::size_t r = 0; r < d; ++r) {
    double mu = 0.0, lv = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      mu += m1[r * d + c] * params.mean[c];
      lv += m2[r * d + c] * params.logvar[c];
    }
    out.mean[r] = mu;
    out.logvar[r] = lv;
  }
  return out;
}

// ---------------------------------------------------------------------------

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  CounterRng rng(seed, Stream::kInit);
  const std::size_t k = spaces();
  const std::size_t n_enc = config_.variant == Variant::kMultiSpace ? k : 1;
  for (std::size_t e = 0; e < n_enc; ++e) encoders_.push_back(build_encoder("encoder" + std::to_string(e), rng));
  decoder_ = build_decoder(rng);
  const std::size_t d = latent_dim();
  if (config_.variant == Variant::kDeVae) {
    for (std::size_t t = 0; t + 1 < k; ++t) {
      const auto w1 = add_param("dit" + std::to_string(t) + ".w1", {d}, 0.0, rng);
      const auto w2 = add_param("dit" + std::to_string(t) + ".w2", {d}, 0.0, rng);
      transitions_.emplace_back(w1, w2);
    }
  } else if (config_.variant == Variant::kHisLinear) {
    for (std::size_t t = 0; t + 1 < k; ++t) {
      const auto m1 = add_param("linear" + std::to_string(t) + ".mean_map", {d, d}, 0.0, rng);
      const auto m2 = add_param("linear" + std::to_string(t) + ".logvar_map", {d, d}, 0.0, rng);
      for (std::size_t j = 0; j < d; ++j) {
        params_[m1].value.at(j, j) = 1.0;
        params_[m2].value.at(j, j) = 1.0;
      }
      transitions_.emplace_back(m1, m2);
    }
  }
}

std::size_t Model::add_param(std::string name, Shape shape, double bound, CounterRng& rng) {
  Tensor value(std::move(shape));
  if (bound > 0.0) {
    CounterRng local = rng.split(params_.size());
    for (double& v : value.values()) v = (2.0 * local.uniform() - 1.0) * bound;
  }
  params_.emplace_back(std::move(name), std::move(value));
  return params_.size() - 1;
}

Model::EncoderLayout Model::build_encoder(const std::string& prefix, CounterRng& rng) {
  const auto& a = config_.arch;
  EncoderLayout enc;
  auto dense = [&](const std::string& name, std::size_t in, std::size_t out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    const auto w = add_param(prefix + "." + name + ".weight", {in, out}, bound, rng);
    const auto b = add_param(prefix + "." + name + ".bias", {out}, 0.0, rng);
    enc.dense.push_back({w, b});
  };
  if (a.kind == EncoderKind::kConv) {
    const std::size_t widths[] = {a.channels, 32, 32, 64, 64};
    for (std::size_t l = 0; l < 4; ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(widths[l] * 16));
      const auto kernel =
          add_param(prefix + ".conv" + std::to_string(l) + ".kernel", {widths[l + 1], widths[l], 4, 4}, bound, rng);
      const auto bias = add_param(prefix + ".conv" + std::to_string(l) + ".bias", {widths[l + 1]}, 0.0, rng);
      enc.convs.push_back({kernel, bias});
    }
    dense("fc0", 64 * 4 * 4, 256);
    dense("head", 256, 2 * a.latent_dim);
  } else {
    std::size_t in = a.pixels();
    for (std::size_t l = 0; l < a.hidden.size(); ++l) {
      dense("fc" + std::to_string(l), in, a.hidden[l]);
      in = a.hidden[l];
    }
    dense("head", in, 2 * a.latent_dim);
  }
  return enc;
}

Model::DecoderLayout Model::build_decoder(CounterRng& rng) {
  const auto& a = config_.arch;
  DecoderLayout dec;
  const std::size_t k = spaces();
  const std::size_t in0 = a.latent_dim + (k > 1 ? k : 0);
  auto dense = [&](const std::string& name, std::size_t in, std::size_t out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    const auto w = add_param("decoder." + name + ".weight", {in, out}, bound, rng);
    const auto b = add_param("decoder." + name + ".bias", {out}, 0.0, rng);
    dec.dense.push_back({w, b});
  };
  if (a.kind == EncoderKind::kConv) {
    dense("fc0", in0, 256);
    dense("fc1", 256, 64 * 4 * 4);
    const std::size_t widths[] = {64, 64, 32, 32, a.channels};
    for (std::size_t l = 0; l < 4; ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(widths[l] * 16));
      const auto kernel =
          add_param("decoder.deconv" + std::to_string(l) + ".kernel", {widths[l], widths[l + 1], 4, 4}, bound, rng);
      const auto bias = add_param("decoder.deconv" + std::to_string(l) + ".bias", {widths[l + 1]}, 0.0, rng);
      dec.deconvs.push_back({kernel, bias});
    }
  } else {
    std::size_t in = in0;
    for (std::size_t l = a.hidden.size(); l-- > 0;) {
      dense("fc" + std::to_string(a.hidden.size() - 1 - l), in, a.hidden[l]);
      in = a.hidden[l];
    }
    dense("out", in, a.pixels());
  }
  return dec;
}

std::vector<nn::Parameter*> Model::parameters() {
  std::vector<nn::Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const nn::Parameter*> Model::parameters() const {
  std::vector<const nn::Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

void Model::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Model::load_parameters(std::span<const Tensor> values) {
  if (values.size() != params_.size()) {
    throw DataError("parameter count mismatch: expected " + std::to_string(params_.size()) + ", got " +
                    std::to_string(values.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].shape() != params_[i].value.shape()) {
      throw DataError("shape mismatch for " + params_[i].name + ": expected " +
                      shape_to_string(params_[i].value.shape()) + ", got " + shape_to_string(values[i].shape()));
    }
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    params_[i].value = values[i];
    params_[i].zero_grad();
  }
}

Var Model::run_encoder(Tape& tape, const Binder& bind, const EncoderLayout& enc, Var images) const {
  const auto& a = config_.arch;
  const std::size_t batch = tape.value(images).dim(0);
  Var h = images;
  if (a.kind == EncoderKind::kConv) {
    for (const auto& c : enc.convs) h = nn::relu(tape, nn::conv2d(tape, h, bind(c.kernel), bind(c.bias)));
    h = nn::reshape(tape, h, {batch, 64 * 4 * 4});
  } else {
    h = nn::reshape(tape, h, {batch, a.pixels()});
  }
  for (std::size_t l = 0; l < enc.dense.size(); ++l) {
    h = nn::affine(tape, h, bind(enc.dense[l].weight), bind(enc.dense[l].bias));
    if (l + 1 < enc.dense.size()) h = nn::relu(tape, h);
  }
  return h;
}

Var Model::run_decoder(Tape& tape, const Binder& bind, Var z, std::size_t space) const {
  const auto& a = config_.arch;
  const std::size_t batch = tape.value(z).dim(0);
  const std::size_t k = spaces();
  Var h = z;
  if (k > 1) {
    Tensor indicator({batch, k});
    for (std::size_t b = 0; b < batch; ++b) indicator.at(b, space) = 1.0;
    h = nn::concat_cols(tape, h, tape.constant(std::move(indicator)));
  }
  const bool conv = a.kind == EncoderKind::kConv;
  for (std::size_t l = 0; l < decoder_.dense.size(); ++l) {
    h = nn::affine(tape, h, bind(decoder_.dense[l].weight), bind(decoder_.dense[l].bias));
    if (conv || l + 1 < decoder_.dense.size()) h = nn::relu(tape, h);
  }
  if (conv) {
    h = nn::reshape(tape, h, {batch, 64, 4, 4});
    for (std::size_t l = 0; l < decoder_.deconvs.size(); ++l) {
      h = nn::deconv2d(tape, h, bind(decoder_.deconvs[l].kernel), bind(decoder_.deconvs[l].bias));
      if (l + 1 < decoder_.deconvs.size()) h = nn::relu(tape, h);
    }
    return h;
  }
  return nn::reshape(tape, h, {batch, a.channels, a.resolution, a.resolution});
}

std::vector<std::pair<Var, Var>> Model::space_params(Tape& tape, const Binder& bind, Var images) const {
  const std::size_t d = latent_dim();
  const std::size_t k = spaces();
  std::vector<std::pair<Var, Var>> out;
  auto split = [&](Var head) {
    return std::pair{nn::slice_cols(tape, head, 0, d), nn::slice_cols(tape, head, d, d)};
  };
  if (config_.variant == Variant::kMultiSpace) {
    for (std::size_t i = 0; i < k; ++i) out.push_back(split(run_encoder(tape, bind, encoders_[i], images)));
    return out;
  }
  out.push_back(split(run_encoder(tape, bind, encoders_[0], images)));
  for (std::size_t t = 0; t + 1 < k; ++t) {
    auto [mean, logvar] = out.back();
    const auto [p1, p2] = transitions_[t];
    if (config_.variant == Variant::kDeVae) {
      // mean' = exp(w1) * mean, logvar' = logvar + 2 w2
      mean = nn::mul_row(tape, mean, nn::exp(tape, bind(p1)));
      logvar = nn::add_row(tape, logvar, nn::scale(tape, bind(p2), 2.0));
    } else {
      mean = nn::matmul(tape, mean, bind(p1));
      logvar = nn::matmul(tape, logvar, bind(p2));
    }
    out.emplace_back(mean, logvar);
  }
  return out;
}

ForwardResult Model::forward_loss(Tape& tape, const Tensor& images, CounterRng& noise_rng, long iteration) {
  const auto& a = config_.arch;
  if (images.rank() != 4 || images.dim(1) != a.channels || images.dim(2) != a.resolution ||
      images.dim(3) != a.resolution) {
    throw ConfigError("image batch " + shape_to_string(images.shape()) + " does not match the model's " +
                      std::to_string(a.channels) + "x" + std::to_string(a.resolution) + "x" +
                      std::to_string(a.resolution) + " input");
  }
  const std::size_t batch = images.dim(0);
  if (batch == 0) throw ConfigError("empty batch");
  const std::size_t d = latent_dim();
  const std::size_t k = spaces();

  const Binder bind = [&](std::size_t idx) { return tape.parameter(params_[idx]); };
  const Var x = tape.constant(images);
  const auto params = space_params(tape, bind, x);

  std::vector<Var> recon_vars, kl_vars;
  ForwardResult result;
  Tensor shared;
  for (std::size_t i = 0; i < k; ++i) {
    const auto [mean, logvar] = params[i];
    Tensor noise({batch, d});
    if (!config_.shared_noise || i == 0) {
      for (double& v : noise.values()) v = noise_rng.normal();
      if (config_.shared_noise) shared = noise;
    } else {
      noise = shared;
    }
    const Var std_dev = nn::exp(tape, nn::scale(tape, logvar, 0.5));
    const Var z = nn::add(tape, mean, nn::mul(tape, std_dev, tape.constant(std::move(noise))));
    const Var out = run_decoder(tape, bind, z, i);
    recon_vars.push_back(config_.likelihood() == Likelihood::kBernoulli ? nn::bce_with_logits(tape, out, x)
                                                                         : nn::squared_error(tape, out, x));
    kl_vars.push_back(nn::gaussian_kl(tape, mean, logvar));
    result.recon.push_back(tape.value(recon_vars.back())[0]);
    result.kl.push_back(tape.value(kl_vars.back())[0]);
    result.kl_per_dim.push_back(latent::kl_standard(tape.value(mean), tape.value(logvar)).per_dim);
  }

  for (std::size_t i = 0; i < k; ++i) {
    if (!std::isfinite(result.recon[i])) {
      throw NumericalError("non-finite reconstruction term in space " + std::to_string(i), iteration,
                           "recon" + std::to_string(i));
    }
    if (!std::isfinite(result.kl[i])) {
      throw NumericalError("non-finite KL term in space " + std::to_string(i), iteration, "kl" + std::to_string(i));
    }
  }

  std::vector<Var> terms;
  std::vector<double> weights;
  for (std::size_t i = 0; i < k; ++i) {
    terms.push_back(recon_vars[i]);
    weights.push_back(1.0);
    terms.push_back(kl_vars[i]);
    weights.push_back(config_.hierarchy.betas[i]);
  }
  result.loss = nn::weighted_sum(tape, terms, weights);
  result.total = tape.value(result.loss)[0];
  if (!std::isfinite(result.total)) throw NumericalError("non-finite total loss", iteration, "total");
  return result;
}

Tensor Model::encoder_head(const Tensor& images, std::size_t which) const {
  if (which >= encoders_.size()) throw UsageError("encoder index out of range");
  Tape tape;
  const Binder bind = [&](std::size_t idx) { return tape.constant(params_[idx].value); };
  return tape.value(run_encoder(tape, bind, encoders_[which], tape.constant(images)));
}

Posterior Model::posterior(const Tensor& images, std::size_t space) const {
  if (space >= spaces()) throw UsageError("space index " + std::to_string(space) + " out of range");
  const auto& a = config_.arch;
  if (images.rank() != 4 || images.dim(1) != a.channels || images.dim(2) != a.resolution ||
      images.dim(3) != a.resolution) {
    throw ConfigError("image batch " + shape_to_string(images.shape()) + " does not match the model input");
  }
  Tape tape;
  const Binder bind = [&](std::size_t idx) { return tape.constant(params_[idx].value); };
  const auto params = space_params(tape, bind, tape.constant(images));
  return Posterior{tape.value(params[space].first), tape.value(params[space].second)};
}

Tensor Model::decode(const Tensor& z, std::size_t space) const {
  if (space >= spaces()) throw UsageError("space index " + std::to_string(space) + " out of range");
  if (z.rank() != 2 || z.dim(1) != latent_dim()) throw UsageError("decode expects z of shape [n, latent_dim]");
  Tape tape;
  const Binder bind = [&](std::size_t idx) { return tape.constant(params_[idx].value); };
  return tape.value(run_decoder(tape, bind, tape.constant(z), space));
}

latent::DiTChain Model::chain() const {
  latent::DiTChain chain = latent::DiTChain::identity(spaces(), latent_dim());
  if (config_.variant != Variant::kDeVae) return chain;
  for (std::size_t t = 0; t < transitions_.size(); ++t) {
    const auto& w1 = params_[transitions_[t].first].value;
    const auto& w2 = params_[transitions_[t].second].value;
    chain.w1[t].assign(w1.values().begin(), w1.values().end());
    chain.w2[t].assign(w2.values().begin(), w2.values().end());
  }
  return chain;
}

void Model::set_chain(const latent::DiTChain& chain) {
  if (config_.variant != Variant::kDeVae) throw UsageError("set_chain applies to the devae variant only");
  chain.validate(latent_dim());
  if (chain.transitions() != transitions_.size()) throw UsageError("chain length does not match the model");
  for (std::size_t t = 0; t < transitions_.size(); ++t) {
    params_[transitions_[t].first].value = Tensor({latent_dim()}, chain.w1[t]);
    params_[transitions_[t].second].value = Tensor({latent_dim()}, chain.w2[t]);
  }
}

}  // namespace devae::models
