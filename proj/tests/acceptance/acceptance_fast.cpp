// Acceptance checks that run in minutes: gradients, KL chain, scaling
// invariance, metric oracles, the single-space special case and replay.
#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "../support/gradcheck.hpp"
#include "devae/data.hpp"
#include "devae/experiment.hpp"
#include "devae/latent.hpp"
#include "devae/metrics.hpp"
#include "devae/model.hpp"
#include "verdict.hpp"

using namespace devae;
using namespace devae::acceptance;
namespace fs = std::filesystem;

namespace {

// Full DeVAE loss on the conv stack (conv, deconv, dense, DiT), 50 coordinates.
// The check runs at a generic point: biases and DiT weights are randomised so no
// ReLU input sits exactly at zero. A probe whose +-h step flips a ReLU straddles
// a kink, where central differences do not measure the derivative; such a
// coordinate is replaced by another one from the same tensor.
void gradient_oracle(Verdicts& v) {
  Stopwatch sw;
  models::ModelConfig cfg;
  cfg.variant = models::Variant::kDeVae;
  cfg.hierarchy.betas = {1, 10, 40};
  cfg.arch.kind = models::EncoderKind::kConv;
  cfg.arch.resolution = 64;
  models::Model model(cfg, 101);
  CounterRng rng(101, Stream::kTest);
  for (auto* p : model.parameters()) {
    const bool dit = p->name.rfind("dit", 0) == 0;
    const bool bias = p->name.find("bias") != std::string::npos;
    if (dit || bias)
      for (auto& x : p->value.values()) x = (dit ? 0.5 : 0.1) * (2.0 * rng.uniform() - 1.0);
  }

  const auto ds = data::generate_dataset(data::parse_factor_specs("shape:3,scale:2,posX:4,posY:4"), 64);
  const std::vector<std::size_t> rows{rng.below(ds.size()), rng.below(ds.size())};
  nn::Tape tape;
  CounterRng noise(101, Stream::kNoise);
  model.zero_grad();
  const auto fr = model.forward_loss(tape, ds.batch(rows), noise);
  tape.backward(fr.loss);

  // One coordinate in every parameter tensor, the rest spread uniformly over tensors.
  auto params = model.parameters();
  std::vector<nn::Parameter*> targets(params.begin(), params.end());
  while (targets.size() < 50) targets.push_back(params[rng.below(params.size())]);
  constexpr double kStep = 1e-4;
  constexpr std::size_t kMaxRedraws = 50;
  double worst = 0.0;
  std::size_t checked = 0, redrawn = 0, unresolved = 0;
  const auto pattern = testing::relu_pattern(tape);
  for (auto* p : targets) {
    bool done = false;
    for (std::size_t attempt = 0; attempt <= kMaxRedraws && !done; ++attempt) {
      const auto probe = testing::probe_gradient(tape, fr.loss, *p, rng.below(p->value.size()), kStep, 1e-4, &pattern);
      if (probe.crossed_kink) {
        ++redrawn;
        continue;
      }
      worst = std::max(worst, probe.rel);
      ++checked;
      done = true;
    }
    unresolved += !done;
  }
  const double secs = sw.seconds();
  v.record(1, worst <= 1e-4 && checked == 50 && secs < 60.0, "gradient oracle",
           fmt("worst relative error %.3g over %.0f coordinates in %.0f tensors", worst, static_cast<double>(checked),
               static_cast<double>(params.size())) +
               fmt("; %.0f kink-straddling draws replaced, %.0f tensors without a smooth coordinate",
                   static_cast<double>(redrawn), static_cast<double>(unresolved)),
           secs);
}

void kl_chain_consistency(Verdicts& v) {
  Stopwatch sw;
  CounterRng rng(202, Stream::kTest);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t d = 1 + rng.below(10);
    const std::size_t k = 1 + rng.below(5);
    latent::GaussianParams p;
    for (std::size_t j = 0; j < d; ++j) {
      p.mean.push_back(3.0 * (2.0 * rng.uniform() - 1.0));
      p.logvar.push_back(4.0 * (2.0 * rng.uniform() - 1.0));
    }
    auto chain = latent::DiTChain::identity(k, d);
    for (auto* w : {&chain.w1, &chain.w2})
      for (auto& row : *w)
        for (auto& x : row) x = 2.0 * rng.uniform() - 1.0;
    const std::size_t i = rng.below(k);
    const double closed = latent::kl_chain(p, chain, i);
    const double cascaded = latent::kl_standard(latent::cascade_params(p, chain, i)).total;
    worst = std::max(worst, std::abs(closed - cascaded));
  }
  v.record(2, worst <= 1e-9, "KL chain consistency", fmt("max |difference| %.3g over 1000 triples", worst),
           sw.seconds());
}

metrics::LatentSampleSet scaled_copy(const metrics::LatentSampleSet& s, const latent::DiTChain& chain, std::size_t space) {
  metrics::LatentSampleSet out = s;
  for (std::size_t r = 0; r < s.size(); ++r) {
    latent::GaussianParams p;
    for (std::size_t j = 0; j < s.dim(); ++j) {
      p.mean.push_back(s.z.at(r, j));
      p.logvar.push_back(0.0);
    }
    const auto q = latent::cascade_params(p, chain, space);
    for (std::size_t j = 0; j < s.dim(); ++j) out.z.at(r, j) = q.mean[j];
  }
  return out;
}

struct MetricTriple {
  double mig;
  Tensor nmi;
  double dci;
};

MetricTriple metric_triple(const metrics::LatentSampleSet& s) {
  return {metrics::mig(s).score, metrics::nmi_matrix(s), metrics::dci_disentanglement(s).score};
}

void scaling_invariance(Verdicts& v, const fs::path& work) {
  Stopwatch sw;
  CounterRng rng(303, Stream::kTest);
  bool ok = true;

  // (a) correlation matrix under positive diagonal scaling
  Tensor z({2000, 8});
  for (std::size_t r = 0; r < 2000; ++r) {
    const double shared = rng.normal();
    for (std::size_t j = 0; j < 8; ++j) z.at(r, j) = (j % 2 ? shared : 0.0) + rng.normal();
  }
  const auto base = latent::correlation_matrix(z);
  double worst_corr = 0.0;
  for (int t = 0; t < 100; ++t) {
    Tensor s = z;
    std::vector<double> w(8);
    for (auto& x : w) x = std::exp(6.0 * rng.uniform() - 3.0);
    for (std::size_t r = 0; r < 2000; ++r)
      for (std::size_t j = 0; j < 8; ++j) s.at(r, j) *= w[j];
    const auto c = latent::correlation_matrix(s);
    for (std::size_t i = 0; i < 64; ++i) worst_corr = std::max(worst_corr, std::abs(c.values[i] - base.values[i]));
  }
  ok = ok && worst_corr <= 1e-10;

  // (b) discretisation under positive scaling
  std::size_t bin_mismatches = 0;
  for (int t = 0; t < 200; ++t) {
    std::vector<double> col(10000);
    for (auto& x : col) x = rng.normal();
    const double c = std::exp(6.0 * rng.uniform() - 3.0);
    std::vector<double> scaled(col);
    for (auto& x : scaled) x *= c;
    const auto a = metrics::discretize(col), b = metrics::discretize(scaled);
    for (std::size_t i = 0; i < col.size(); ++i) bin_mismatches += a.bins[i] != b.bins[i];
  }
  ok = ok && bin_mismatches == 0;

  // (c) metrics on a trained checkpoint: learned spaces and a random DiT chain
  RunConfig cfg;
  cfg.betas = {1, 10, 40};
  cfg.seed = 3;
  cfg.iterations = 2000;
  cfg.eval_every = 500;
  cfg.out = (work / "invariance_run").string();
  experiment::TrainOptions opts;
  opts.skip_report = true;
  experiment::train(cfg, opts);
  auto run = experiment::load_checkpoint(work / "invariance_run" / experiment::kCheckpointFile);
  const auto ds = experiment::load_dataset(cfg);

  auto collect = [&](std::size_t space) {
    CounterRng r(7, Stream::kMetrics);
    return metrics::collect_latents(run.model, ds, space, 10000, r);
  };
  const auto s0 = collect(0);
  const auto m0 = metric_triple(s0);
  bool exact = true;
  double worst_dci = 0.0;
  auto compare = [&](const metrics::LatentSampleSet& s) {
    const auto m = metric_triple(s);
    exact = exact && m.mig == m0.mig && m.nmi == m0.nmi;
    worst_dci = std::max(worst_dci, std::abs(m.dci - m0.dci));
  };
  for (std::size_t sp = 1; sp < 3; ++sp) compare(collect(sp));
  for (int t = 0; t < 5; ++t) {
    auto chain = latent::DiTChain::identity(3, s0.dim());
    for (auto* w : {&chain.w1, &chain.w2})
      for (auto& row : *w)
        for (auto& x : row) x = 3.0 * (2.0 * rng.uniform() - 1.0);
    compare(scaled_copy(s0, chain, 2));
    run.model.set_chain(chain);
    compare(collect(2));
  }
  ok = ok && exact && worst_dci <= 1e-9;

  v.record(3, ok, "scaling invariance",
           fmt("corr max diff %.3g; bin mismatches %.0f; MIG/NMI exact %.0f; DCI max diff %.3g", worst_corr,
               static_cast<double>(bin_mismatches), exact ? 1.0 : 0.0, worst_dci),
           sw.seconds());
}

// Latents built directly from factor labels, for the metric oracles.
metrics::LatentSampleSet code_from_labels(const data::FactorDataset& ds, const std::vector<std::size_t>& rows,
                                          const std::vector<std::size_t>& perm) {
  metrics::LatentSampleSet s;
  const std::size_t f = ds.num_factors();
  s.z = Tensor({rows.size(), f});
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t k = 0; k < f; ++k) {
      s.z.at(r, perm[k]) = static_cast<double>(ds.label(rows[r], k));
      s.labels.push_back(ds.label(rows[r], k));
    }
  for (const auto& spec : ds.specs()) s.cardinalities.push_back(spec.grid.size());
  s.kl_per_dim.assign(f, 1.0);
  return s;
}

void metric_oracles(Verdicts& v) {
  Stopwatch sw;
  const auto ds = data::generate_dataset(data::parse_factor_specs("shape:3,scale:6,posX:16,posY:16"), 16);
  CounterRng rng(404, Stream::kTest);
  const std::size_t n = 10000;
  std::vector<std::size_t> rows(n);
  for (auto& r : rows) r = rng.below(ds.size());
  const std::size_t f = ds.num_factors();
  std::vector<std::size_t> perm(f);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[0], perm[1]);

  const auto code = code_from_labels(ds, rows, perm);
  const double mig_code = metrics::mig(code).score;
  const double dci_code = metrics::dci_disentanglement(code).score;
  const metrics::MeanEncoder code_encoder = [&](std::span<const std::size_t> rs) {
    return code_from_labels(ds, std::vector<std::size_t>(rs.begin(), rs.end()), perm).z;
  };
  CounterRng fv_rng(404, Stream::kMetrics);
  const double fv_code =
      metrics::factorvae_metric(code_encoder, code.kl_per_dim, ds, metrics::FactorVaeOptions{}, fv_rng).accuracy;

  // Independent N(0,1) code, 10 dimensions, a fixed draw per dataset row.
  const std::size_t d = 10;
  auto noise_row = [&](std::size_t row, double* out) {
    CounterRng r = CounterRng(405, Stream::kTest).split(row);
    for (std::size_t j = 0; j < d; ++j) out[j] = r.normal();
  };
  metrics::LatentSampleSet noise = code;
  noise.z = Tensor({n, d});
  for (std::size_t r = 0; r < n; ++r) noise_row(rows[r], &noise.z.at(r, 0));
  noise.kl_per_dim.assign(d, 1.0);
  const double mig_noise = metrics::mig(noise).score;
  const metrics::MeanEncoder noise_encoder = [&](std::span<const std::size_t> rs) {
    Tensor z({rs.size(), d});
    for (std::size_t r = 0; r < rs.size(); ++r) noise_row(rs[r], &z.at(r, 0));
    return z;
  };
  CounterRng fv_rng2(406, Stream::kMetrics);
  const double fv_noise =
      metrics::factorvae_metric(noise_encoder, noise.kl_per_dim, ds, metrics::FactorVaeOptions{}, fv_rng2).accuracy;
  const double chance = 1.0 / static_cast<double>(f);

  const bool ok = mig_code >= 0.95 && std::abs(dci_code - 1.0) <= 1e-9 && fv_code == 1.0 && mig_noise <= 0.05 &&
                  std::abs(fv_noise - chance) <= 0.1;
  v.record(4, ok, "metric oracles",
           fmt("permutation: MIG %.4f DCI-1 %.2g FactorVAE %.3f", mig_code, dci_code - 1.0, fv_code) +
               fmt("; noise: MIG %.4f FactorVAE %.3f (chance %.3f)", mig_noise, fv_noise, chance),
           sw.seconds());
}

RunConfig short_run(models::Variant variant, std::vector<double> betas, std::size_t iterations, const fs::path& out) {
  RunConfig cfg;
  cfg.variant = variant;
  cfg.betas = std::move(betas);
  cfg.seed = 5;
  cfg.iterations = iterations;
  cfg.eval_every = 250;
  cfg.checkpoint_every = 250;
  cfg.out = out.string();
  return cfg;
}

void special_case(Verdicts& v, const fs::path& work) {
  Stopwatch sw;
  experiment::TrainOptions opts;
  opts.skip_report = true;
  experiment::train(short_run(models::Variant::kBetaVae, {6}, 500, work / "k1_beta_vae"), opts);
  experiment::train(short_run(models::Variant::kDeVae, {6}, 500, work / "k1_devae"), opts);
  const auto a = experiment::csv_data_rows(work / "k1_beta_vae" / experiment::kMetricsFile);
  const auto b = experiment::csv_data_rows(work / "k1_devae" / experiment::kMetricsFile);
  const bool ok = a.size() == 501 && a == b;
  v.record(5, ok, "single-space special case",
           fmt("%.0f data rows each, identical %.0f", static_cast<double>(a.size()), a == b ? 1.0 : 0.0), sw.seconds());
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Re-running the emitted config.txt must give the same CSV byte for byte apart
// from the '# out = ...' line naming the output directory.
void reproducibility(Verdicts& v, const fs::path& work) {
  Stopwatch sw;
  experiment::TrainOptions opts;
  opts.skip_report = true;
  const std::vector<RunConfig> runs{short_run(models::Variant::kDeVae, {1, 10, 40}, 400, work / "replay_devae"),
                                    short_run(models::Variant::kHisLinear, {1, 40}, 400, work / "replay_his"),
                                    short_run(models::Variant::kMultiSpace, {1, 40}, 400, work / "replay_multi")};
  std::size_t identical = 0;
  for (const auto& cfg : runs) {
    experiment::train(cfg, opts);
    auto again = load_config(fs::path(cfg.out) / experiment::kConfigFile);
    const fs::path replay = cfg.out + "_again";
    again.out = replay.string();
    experiment::train(again, opts);
    auto strip_out = [](std::string text) {
      const auto pos = text.find("# out = ");
      if (pos != std::string::npos) text.erase(pos, text.find('\n', pos) - pos);
      return text;
    };
    const auto a = strip_out(file_bytes(fs::path(cfg.out) / experiment::kMetricsFile));
    const auto b = strip_out(file_bytes(replay / experiment::kMetricsFile));
    identical += !a.empty() && a == b;
  }
  v.record(9, identical == runs.size(), "reproducibility",
           fmt("%.0f of %.0f replays byte-identical", static_cast<double>(identical), static_cast<double>(runs.size())),
           sw.seconds());
}

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  fs::path work = fs::temp_directory_path() / "devae_acceptance_fast";
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--strict") == 0)
      strict = true;
    else
      work = argv[i];
  }
  fs::remove_all(work);
  fs::create_directories(work);
  Verdicts v;
  try {
    gradient_oracle(v);
    kl_chain_consistency(v);
    scaling_invariance(v, work);
    metric_oracles(v);
    special_case(v, work);
    reproducibility(v, work);
  } catch (const std::exception& e) {
    std::cerr << "acceptance harness error: " << e.what() << "\n";
    return 2;
  }
  return v.finish(strict);
}
