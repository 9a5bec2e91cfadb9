#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "../support/gradcheck.hpp"
#include "devae/adam.hpp"
#include "devae/checkpoint.hpp"
#include "devae/data.hpp"
#include "devae/errors.hpp"
#include "devae/model.hpp"

using namespace devae;
using namespace devae::models;
using devae::testing::check_gradients;
using devae::testing::random_tensor;

namespace {

ModelConfig mlp_config(Variant v, std::vector<double> betas, std::size_t res = 16) {
  ModelConfig c;
  c.variant = v;
  c.hierarchy.betas = std::move(betas);
  c.arch.kind = EncoderKind::kMlp;
  c.arch.hidden = {32, 16};
  c.arch.resolution = res;
  return c;
}

ModelConfig conv_config(Variant v, std::vector<double> betas) {
  ModelConfig c = mlp_config(v, std::move(betas), 64);
  c.arch.kind = EncoderKind::kConv;
  return c;
}

Tensor binary_images(std::size_t n, std::size_t res, CounterRng& rng) {
  Tensor t({n, 1, res, res});
  for (auto& v : t.values()) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
  return t;
}

const nn::Parameter& param(const Model& m, const std::string& name) {
  for (const auto* p : m.parameters())
    if (p->name == name) return *p;
  throw std::runtime_error("no parameter " + name);
}

std::vector<double> train_losses(const ModelConfig& cfg, std::uint64_t seed, std::size_t iters,
                                  const data::FactorDataset& ds) {
  Model m(cfg, seed);
  auto params = m.parameters();
  auto adam = nn::AdamState::zeros_like(params);
  std::vector<double> losses;
  for (std::size_t it = 0; it < iters; ++it) {
    CounterRng brng = CounterRng(seed, Stream::kBatches).split(it);
    std::vector<std::size_t> rows(32);
    for (auto& r : rows) r = brng.below(ds.size());
    CounterRng nrng = CounterRng(seed, Stream::kNoise).split(it);
    nn::Tape tape;
    m.zero_grad();
    const auto fr = m.forward_loss(tape, ds.batch(rows), nrng);
    tape.backward(fr.loss);
    nn::adam_step(params, adam, {1e-3});
    losses.push_back(fr.total);
  }
  return losses;
}

}  // namespace

TEST(ModelConfig, VariantSpaceRules) {
  EXPECT_NO_THROW(mlp_config(Variant::kBetaVae, {6}).validate());
  EXPECT_THROW(mlp_config(Variant::kBetaVae, {1, 40}).validate(), ConfigError);
  EXPECT_THROW(mlp_config(Variant::kMultiSpace, {1}).validate(), ConfigError);
  EXPECT_THROW(mlp_config(Variant::kHisLinear, {1}).validate(), ConfigError);
  EXPECT_NO_THROW(mlp_config(Variant::kDeVae, {1}).validate());
  EXPECT_EQ(ModelConfig{}.hierarchy.betas, (std::vector<double>{1, 40}));
  EXPECT_EQ(ModelConfig{}.arch.latent_dim, 10u);
  auto bad = conv_config(Variant::kDeVae, {1, 40});
  bad.arch.resolution = 32;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(SpaceIndicator, OneHot) {
  EXPECT_EQ((SpaceIndicator{1, 3}.one_hot()), (std::vector<double>{0, 1, 0}));
  EXPECT_THROW((SpaceIndicator{3, 3}.one_hot()), UsageError);
}

TEST(Encoder, ConvStackHeadHas20Values) {
  Model m(conv_config(Variant::kDeVae, {1, 40}), 1);
  CounterRng rng(1, Stream::kTest);
  const Tensor x = binary_images(2, 64, rng);
  const Tensor head = m.encoder_head(x);
  EXPECT_EQ(head.shape(), (Shape{2, 20}));
  EXPECT_EQ(m.encoder_head(x), head);
  EXPECT_EQ(m.decode(Tensor({2, 10}), 1).shape(), (Shape{2, 1, 64, 64}));
}

TEST(Encoder, MlpToyHeadShapeAndResolutionCheck) {
  Model m(mlp_config(Variant::kDeVae, {1, 40}), 2);
  CounterRng rng(2, Stream::kTest);
  EXPECT_EQ(m.encoder_head(binary_images(5, 16, rng)).shape(), (Shape{5, 20}));
  const auto post = m.posterior(binary_images(5, 16, rng), 1);
  EXPECT_EQ(post.mean.shape(), (Shape{5, 10}));
  EXPECT_THROW(m.posterior(binary_images(2, 32, rng), 0), ConfigError);
}

TEST(Decoder, InputWidthIncludesIndicatorOnlyForMultipleSpaces) {
  const Model devae(mlp_config(Variant::kDeVae, {1, 10, 40}), 3);
  EXPECT_EQ(param(devae, "decoder.fc0.weight").value.dim(0), 10u + 3u);
  const Model beta(mlp_config(Variant::kBetaVae, {6}), 3);
  EXPECT_EQ(param(beta, "decoder.fc0.weight").value.dim(0), 10u);
  const Model conv(conv_config(Variant::kMultiSpace, {1, 40}), 3);
  EXPECT_EQ(param(conv, "decoder.fc0.weight").value.dim(0), 12u);
}

TEST(Variants, MultiSpaceHasIndependentEncoders) {
  const Model m(mlp_config(Variant::kMultiSpace, {1, 10, 40}), 4);
  const auto& a = param(m, "encoder0.fc0.weight");
  const auto& b = param(m, "encoder1.fc0.weight");
  EXPECT_EQ(a.value.shape(), b.value.shape());
  EXPECT_NE(a.value, b.value);
}

TEST(ForwardLoss, CoincidentSpacesGiveEqualTerms) {
  auto cfg = mlp_config(Variant::kDeVae, {1, 2, 3});
  cfg.shared_noise = true;
  Model m(cfg, 5);
  // With zero DiT weights only the space indicator tells the spaces apart; mute it.
  for (auto* p : m.parameters())
    if (p->name == "decoder.fc0.weight")
      for (std::size_t r = 10; r < 13; ++r)
        for (std::size_t c = 0; c < p->value.dim(1); ++c) p->value.at(r, c) = 0.0;
  CounterRng rng(5, Stream::kTest);
  const Tensor x = binary_images(8, 16, rng);
  nn::Tape tape;
  CounterRng noise(5, Stream::kNoise);
  const auto fr = m.forward_loss(tape, x, noise);
  for (std::size_t i = 1; i < 3; ++i) {
    EXPECT_EQ(fr.recon[i], fr.recon[0]);
    EXPECT_EQ(fr.kl[i], fr.kl[0]);
  }
  EXPECT_NEAR(fr.total, 3 * fr.recon[0] + 6 * fr.kl[0], 1e-9 * fr.total);
}

TEST(ForwardLoss, PerDimensionKlIsNonnegativeAndSumsToSpaceKl) {
  Model m(mlp_config(Variant::kHisLinear, {1, 40}), 6);
  CounterRng rng(6, Stream::kTest);
  nn::Tape tape;
  CounterRng noise(6, Stream::kNoise);
  const auto fr = m.forward_loss(tape, binary_images(8, 16, rng), noise);
  for (std::size_t i = 0; i < 2; ++i) {
    double sum = 0.0;
    for (double v : fr.kl_per_dim[i]) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, fr.kl[i], 1e-12 * std::max(1.0, fr.kl[i]));
  }
}

TEST(ForwardLoss, BetaVaeEqualsDevaeWithOneSpace) {
  const auto ds = data::generate_dataset(data::parse_factor_specs("posX:8,posY:8,scale:2"), 16);
  const auto a = train_losses(mlp_config(Variant::kBetaVae, {6}), 11, 30, ds);
  const auto b = train_losses(mlp_config(Variant::kDeVae, {6}), 11, 30, ds);
  EXPECT_EQ(a, b);
}

TEST(ForwardLoss, LossDecreasesOverFirstHundredIterations) {
  const auto ds = data::generate_dataset(data::parse_factor_specs("posX:16,posY:16,scale:4"), 16);
  const std::vector<std::pair<Variant, std::vector<double>>> variants{{Variant::kBetaVae, {1}},
                                                                      {Variant::kMultiSpace, {1, 40}},
                                                                      {Variant::kHisLinear, {1, 40}},
                                                                      {Variant::kDeVae, {1, 40}}};
  for (const auto& [v, betas] : variants) {
    std::vector<double> drops;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto l = train_losses(mlp_config(v, betas), seed, 100, ds);
      const double head = std::accumulate(l.begin(), l.begin() + 10, 0.0);
      const double tail = std::accumulate(l.end() - 10, l.end(), 0.0);
      drops.push_back(head - tail);
    }
    std::sort(drops.begin(), drops.end());
    EXPECT_GT(drops[2], 0.0) << to_string(v);
  }
}

TEST(ForwardLoss, NonFiniteInputAborts) {
  Model m(mlp_config(Variant::kDeVae, {1, 40}), 7);
  Tensor x({2, 1, 16, 16});
  x[3] = std::numeric_limits<double>::quiet_NaN();
  nn::Tape tape;
  CounterRng noise(7, Stream::kNoise);
  try {
    m.forward_loss(tape, x, noise, 12);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_EQ(e.iteration(), 12);
    EXPECT_FALSE(e.term().empty());
  } catch (const DataError&) {
    // The BCE target check may reject the NaN first; either way the run stops.
  }
}

TEST(Gradients, AllVariantsMatchFiniteDifferences) {
  CounterRng rng(8, Stream::kTest);
  for (auto v : {Variant::kBetaVae, Variant::kMultiSpace, Variant::kHisLinear, Variant::kDeVae}) {
    const std::vector<double> betas = v == Variant::kBetaVae ? std::vector<double>{4} : std::vector<double>{1, 10, 40};
    Model m(mlp_config(v, betas), 9);
    // Move the transitions away from their initial values so every path is exercised.
    for (auto* p : m.parameters())
      if (p->name.rfind("dit", 0) == 0 || p->name.rfind("linear", 0) == 0)
        for (auto& x : p->value.values()) x += 0.2 * (2.0 * rng.uniform() - 1.0);
    const Tensor x = binary_images(4, 16, rng);
    nn::Tape tape;
    CounterRng noise(9, Stream::kNoise);
    m.zero_grad();
    const auto fr = m.forward_loss(tape, x, noise);
    tape.backward(fr.loss);
    std::vector<std::pair<nn::Parameter*, std::size_t>> coords;
    for (auto* p : m.parameters())
      for (int k = 0; k < 2; ++k) coords.emplace_back(p, rng.below(p->value.size()));
    EXPECT_LE(check_gradients(tape, fr.loss, coords).worst_rel, 1e-4) << to_string(v);
  }
}

TEST(LinearTransition, IdentityPermutationAndMixing) {
  const latent::GaussianParams p{{1, 2, 3}, {0.1, 0.2, 0.3}};
  const std::vector<double> eye{1, 0, 0, 0, 1, 0, 0, 0, 1};
  EXPECT_EQ(linear_transition_apply(p, eye, eye), p);
  const std::vector<double> perm{0, 1, 0, 0, 0, 1, 1, 0, 0};
  EXPECT_EQ(linear_transition_apply(p, perm, eye).mean, (std::vector<double>{2, 3, 1}));

  CounterRng rng(10, Stream::kTest);
  const std::size_t n = 2000;
  Tensor z({n, 3}), mixed({n, 3});
  const std::vector<double> m1{1, 0.8, 0, 0, 1, 0, 0.5, 0, 1};
  for (std::size_t r = 0; r < n; ++r) {
    latent::GaussianParams s{{rng.normal(), rng.normal(), rng.normal()}, {0, 0, 0}};
    const auto t = linear_transition_apply(s, m1, eye);
    for (std::size_t j = 0; j < 3; ++j) {
      z.at(r, j) = s.mean[j];
      mixed.at(r, j) = t.mean[j];
    }
  }
  const auto before = latent::correlation_matrix(z), after = latent::correlation_matrix(mixed);
  double diff = 0.0;
  for (std::size_t i = 0; i < 9; ++i) diff = std::max(diff, std::abs(after.values[i] - before.values[i]));
  EXPECT_GT(diff, 0.3);
}

TEST(Checkpoint, RoundTripIsBitwiseStable) {
  CounterRng rng(11, Stream::kTest);
  models::Checkpoint ck;
  ck.header = "format = test\nseed = 3\n";
  ck.tensors = {random_tensor({3, 4}, rng), random_tensor({2, 1, 4, 4}, rng), Tensor({5}, -0.0)};
  const auto dir = std::filesystem::temp_directory_path();
  const auto a = dir / "devae_ck_a.bin", b = dir / "devae_ck_b.bin";
  write_checkpoint(a, ck);
  const auto back = read_checkpoint(a);
  EXPECT_EQ(back.header, ck.header);
  ASSERT_EQ(back.tensors.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(back.tensors[i], ck.tensors[i]);
  write_checkpoint(b, back);
  auto bytes = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(bytes(a), bytes(b));
  EXPECT_EQ(std::string(bytes(a).data(), 6), std::string("DEVAE\x01", 6));
  {
    std::ofstream corrupt(b, std::ios::binary);
    corrupt << "NOTDEVAE";
  }
  EXPECT_THROW(read_checkpoint(b), DataError);
  std::filesystem::remove(a);
  std::filesystem::remove(b);
}

TEST(Model, LoadParametersChecksShapes) {
  Model m(mlp_config(Variant::kDeVae, {1, 40}), 12);
  std::vector<Tensor> values;
  for (const auto* p : m.parameters()) values.push_back(p->value);
  EXPECT_NO_THROW(m.load_parameters(values));
  values.pop_back();
  EXPECT_THROW(m.load_parameters(values), DataError);
}

TEST(Model, ChainRoundTrip) {
  Model m(mlp_config(Variant::kDeVae, {1, 10, 40}), 13);
  auto chain = m.chain();
  EXPECT_EQ(chain.transitions(), 2u);
  chain.w1[1][3] = 0.7;
  m.set_chain(chain);
  EXPECT_EQ(m.chain().w1[1][3], 0.7);
}
