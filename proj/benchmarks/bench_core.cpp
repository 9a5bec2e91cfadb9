#include <benchmark/benchmark.h>

#include "devae/adam.hpp"
#include "devae/data.hpp"
#include "devae/metrics.hpp"
#include "devae/model.hpp"

using namespace devae;

namespace {

const data::FactorDataset& toy() {
  static const auto ds = [] {
    const auto specs = data::parse_factor_specs("posX:16,posY:16,scale:4");
    return data::generate_dataset(specs, 16);
  }();
  return ds;
}

models::ModelConfig config(models::Variant variant, std::vector<double> betas, models::EncoderKind kind,
                           std::size_t resolution) {
  models::ModelConfig c;
  c.variant = variant;
  c.hierarchy.betas = std::move(betas);
  c.arch.kind = kind;
  c.arch.resolution = resolution;
  return c;
}

// One optimizer step (forward, backward, Adam) on a batch of 64 toy images.
void train_step(benchmark::State& state, const models::ModelConfig& cfg) {
  const auto& ds = toy();
  models::Model model(cfg, 1);
  auto params = model.parameters();
  auto adam = nn::AdamState::zeros_like(params);
  CounterRng rows_rng(1, Stream::kBatches);
  std::vector<std::size_t> rows(64);
  for (auto& r : rows) r = rows_rng.below(ds.size());
  const Tensor batch = ds.batch(rows);
  std::uint64_t it = 0;
  for (auto _ : state) {
    CounterRng noise = CounterRng(1, Stream::kNoise).split(it++);
    nn::Tape tape;
    model.zero_grad();
    const auto fr = model.forward_loss(tape, batch, noise);
    tape.backward(fr.loss);
    nn::adam_step(params, adam, {1e-4});
    benchmark::DoNotOptimize(fr.total);
  }
}

void BM_TrainStepBetaVae(benchmark::State& state) {
  train_step(state, config(models::Variant::kBetaVae, {1}, models::EncoderKind::kMlp, 16));
}
void BM_TrainStepDeVae3(benchmark::State& state) {
  train_step(state, config(models::Variant::kDeVae, {1, 10, 40}, models::EncoderKind::kMlp, 16));
}

void BM_Mig(benchmark::State& state) {
  const auto& ds = toy();
  models::Model model(config(models::Variant::kDeVae, {1, 40}, models::EncoderKind::kMlp, 16), 1);
  CounterRng rng(1, Stream::kMetrics);
  const auto samples = metrics::collect_latents(model, ds, 0, static_cast<std::size_t>(state.range(0)), rng);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::mig(samples).score);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_Dci(benchmark::State& state) {
  const auto& ds = toy();
  models::Model model(config(models::Variant::kDeVae, {1, 40}, models::EncoderKind::kMlp, 16), 1);
  CounterRng rng(1, Stream::kMetrics);
  const auto samples = metrics::collect_latents(model, ds, 0, 2000, rng);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::dci_disentanglement(samples).score);
}

}  // namespace

BENCHMARK(BM_TrainStepBetaVae)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrainStepDeVae3)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Mig)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Dci)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
