#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "devae/errors.hpp"
#include "devae/latent.hpp"
#include "devae/rng.hpp"

using namespace devae;
using namespace devae::latent;

namespace {

// KL(N(mu, s^2) || N(0,1)) by composite Simpson integration of q log(q/p).
double kl_by_integration(double mu, double logvar) {
  const double s = std::exp(0.5 * logvar);
  const double lo = mu - 14 * s, hi = mu + 14 * s;
  const int n = 20000;
  const double h = (hi - lo) / n;
  auto f = [&](double z) {
    const double logq = -0.5 * std::log(2 * std::numbers::pi) - 0.5 * logvar - 0.5 * (z - mu) * (z - mu) / (s * s);
    const double logp = -0.5 * std::log(2 * std::numbers::pi) - 0.5 * z * z;
    return std::exp(logq) * (logq - logp);
  };
  double acc = f(lo) + f(hi);
  for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * f(lo + i * h);
  return acc * h / 3.0;
}

GaussianParams random_params(std::size_t d, CounterRng& rng) {
  GaussianParams p;
  for (std::size_t j = 0; j < d; ++j) {
    p.mean.push_back(3.0 * (2.0 * rng.uniform() - 1.0));
    p.logvar.push_back(4.0 * (2.0 * rng.uniform() - 1.0));
  }
  return p;
}

DiTChain random_chain(std::size_t spaces, std::size_t d, CounterRng& rng) {
  DiTChain c = DiTChain::identity(spaces, d);
  for (auto* w : {&c.w1, &c.w2})
    for (auto& v : *w)
      for (auto& x : v) x = 2.0 * rng.uniform() - 1.0;
  return c;
}

}  // namespace

TEST(Reparameterize, Examples) {
  const GaussianParams p{{1.5, -2.0}, {0.3, -1.0}};
  EXPECT_EQ(reparameterize(p, std::vector<double>{0, 0}), p.mean);
  const std::vector<double> n{0.7, -1.3};
  EXPECT_EQ(reparameterize({{0, 0}, {0, 0}}, n), n);
  EXPECT_DOUBLE_EQ(reparameterize({{1.0}, {2.0 * std::log(2.0)}}, std::vector<double>{0.5})[0], 2.0);
}

TEST(DitApply, Examples) {
  const GaussianParams p{{1.0, -3.0, 0.25}, {0.1, 0.2, -0.4}};
  const std::vector<double> zero(3, 0.0), ln2(3, std::log(2.0)), one(3, 1.0);
  EXPECT_EQ(dit_apply(p, zero, zero), p);
  const auto doubled = dit_apply(p, ln2, zero);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(doubled.mean[j], 2.0 * p.mean[j]);
  const auto shifted = dit_apply(p, zero, one);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(shifted.logvar[j], p.logvar[j] + 2.0);
}

TEST(CascadeParams, Examples) {
  const GaussianParams p{{1.0, 2.0}, {0.5, -0.5}};
  CounterRng rng(1, Stream::kTest);
  EXPECT_EQ(cascade_params(p, random_chain(3, 2, rng), 0), p);
  const auto id = DiTChain::identity(3, 2);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(cascade_params(p, id, i), p);
  DiTChain c = DiTChain::identity(3, 2);
  c.w1 = {{std::log(2.0), std::log(2.0)}, {std::log(3.0), std::log(3.0)}};
  const auto out = cascade_params(p, c, 2);
  EXPECT_NEAR(out.mean[0], 6.0, 1e-12);
  EXPECT_NEAR(out.mean[1], 12.0, 1e-12);
  EXPECT_THROW(cascade_params(p, c, 3), UsageError);
}

TEST(CascadeParams, CompositionEqualsSummedLogScales) {
  CounterRng rng(2, Stream::kTest);
  for (int t = 0; t < 100; ++t) {
    const auto p = random_params(5, rng);
    const auto c = random_chain(3, 5, rng);
    const auto two_steps = dit_apply(dit_apply(p, c.w1[0], c.w2[0]), c.w1[1], c.w2[1]);
    std::vector<double> s1(5), s2(5);
    for (std::size_t j = 0; j < 5; ++j) {
      s1[j] = c.w1[0][j] + c.w1[1][j];
      s2[j] = c.w2[0][j] + c.w2[1][j];
    }
    const auto one_step = dit_apply(p, s1, s2);
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_NEAR(two_steps.mean[j], one_step.mean[j], 1e-12 * std::max(1.0, std::abs(one_step.mean[j])));
      EXPECT_NEAR(two_steps.logvar[j], one_step.logvar[j], 1e-12);
    }
  }
}

TEST(KlStandard, Examples) {
  EXPECT_EQ(kl_standard({{0, 0}, {0, 0}}).total, 0.0);
  const auto unit_shift = kl_standard({{1.0, 1.0}, {0.0, 0.0}});
  EXPECT_NEAR(unit_shift.per_dim[0], kl_by_integration(1.0, 0.0), 1e-9);
  EXPECT_NEAR(unit_shift.per_dim[0], 0.5, 1e-12);
  EXPECT_NEAR(unit_shift.total, 1.0, 1e-12);
  EXPECT_NEAR(kl_standard({{0.0}, {1.0}}).total, 0.5 * (std::numbers::e - 2.0), 1e-12);
}

TEST(KlStandard, MatchesIntegrationAndIsNonnegative) {
  CounterRng rng(3, Stream::kTest);
  for (int t = 0; t < 20; ++t) {
    const auto p = random_params(1, rng);
    const double kl = kl_standard(p).total;
    EXPECT_GE(kl, 0.0);
    EXPECT_NEAR(kl, kl_by_integration(p.mean[0], p.logvar[0]), 1e-7 * std::max(1.0, kl));
  }
}

TEST(KlStandard, BatchedIsRowMean) {
  const Tensor mean = Tensor::from({2, 2}, {1, 0, 0, 2});
  const Tensor logvar = Tensor::from({2, 2}, {0, 1, 0, 0});
  const auto k = kl_standard(mean, logvar);
  EXPECT_NEAR(k.per_dim[0], 0.25, 1e-12);
  EXPECT_NEAR(k.per_dim[1], 0.5 * (0.5 * (std::numbers::e - 2.0) + 2.0), 1e-12);
  EXPECT_NEAR(k.total, k.per_dim[0] + k.per_dim[1], 1e-12);
}

TEST(KlChain, SpecialCasesAndConsistency) {
  CounterRng rng(4, Stream::kTest);
  const auto p = random_params(6, rng);
  const auto c = random_chain(4, 6, rng);
  EXPECT_NEAR(kl_chain(p, c, 0), kl_standard(p).total, 1e-12);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(kl_chain(p, DiTChain::identity(4, 6), i), kl_standard(p).total, 1e-12);
  for (int t = 0; t < 200; ++t) {
    const auto q = random_params(6, rng);
    const auto chain = random_chain(4, 6, rng);
    const std::size_t i = rng.below(4);
    EXPECT_NEAR(kl_chain(q, chain, i), kl_standard(cascade_params(q, chain, i)).total, 1e-9);
  }
  EXPECT_THROW(kl_chain(p, c, 4), UsageError);
}

TEST(DevaeLoss, Examples) {
  const std::vector<double> recon{10, 12}, kl{2, 1}, betas{1, 40};
  EXPECT_DOUBLE_EQ(devae_loss(recon, kl, betas), 64.0);
  EXPECT_DOUBLE_EQ(devae_loss(std::vector<double>{5}, std::vector<double>{3}, std::vector<double>{1}), 8.0);
  EXPECT_DOUBLE_EQ(devae_loss(recon, std::vector<double>{0, 0}, betas), 22.0);
  EXPECT_THROW(devae_loss(recon, std::vector<double>{1}, betas), UsageError);
}

TEST(DevaeLoss, SlopeInEachKlIsBeta) {
  const std::vector<double> recon{3, 4, 5}, betas{1, 10, 40};
  std::vector<double> kl{1, 2, 3};
  const double base = devae_loss(recon, kl, betas);
  for (std::size_t i = 0; i < 3; ++i) {
    auto bumped = kl;
    bumped[i] += 0.5;
    EXPECT_DOUBLE_EQ(devae_loss(recon, bumped, betas) - base, 0.5 * betas[i]);
  }
}

TEST(HierarchyConfig, Validation) {
  EXPECT_NO_THROW((HierarchyConfig{{1, 40}}.validate()));
  EXPECT_NO_THROW((HierarchyConfig{{6}}.validate()));
  EXPECT_THROW((HierarchyConfig{{}}.validate()), ConfigError);
  EXPECT_THROW((HierarchyConfig{{1, 1}}.validate()), ConfigError);
  EXPECT_THROW((HierarchyConfig{{10, 1}}.validate()), ConfigError);
  EXPECT_THROW((HierarchyConfig{{-1, 1}}.validate()), ConfigError);
  EXPECT_EQ(HierarchyConfig{}.betas, (std::vector<double>{1, 40}));
}

TEST(CorrelationMatrix, ScalingInvarianceAndSpecialCases) {
  CounterRng rng(5, Stream::kTest);
  const std::size_t n = 500, d = 4;
  Tensor z({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    const double shared = rng.normal();
    z.at(r, 0) = shared + 0.3 * rng.normal();
    z.at(r, 1) = shared;  // duplicated below
    z.at(r, 2) = rng.normal();
    z.at(r, 3) = shared;
  }
  const auto base = correlation_matrix(z);
  EXPECT_NEAR(base.at(1, 3), 1.0, 1e-12);
  for (std::size_t j = 0; j < d; ++j) EXPECT_EQ(base.at(j, j), 1.0);
  Tensor scaled = z;
  const std::vector<double> w{0.001, 7.5, 123.0, 0.5};
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) scaled.at(r, j) *= w[j];
  const auto after = correlation_matrix(scaled);
  for (std::size_t i = 0; i < d * d; ++i) EXPECT_NEAR(after.values[i], base.values[i], 1e-10);

  Tensor with_constant = z;
  for (std::size_t r = 0; r < n; ++r) with_constant.at(r, 2) = 4.0;
  const auto deg = correlation_matrix(with_constant);
  EXPECT_TRUE(deg.degenerate[2]);
  EXPECT_EQ(deg.at(2, 0), 0.0);
  EXPECT_EQ(deg.at(2, 2), 0.0);
}

TEST(CorrelationMatrix, IndependentColumnsDecorrelate) {
  CounterRng rng(6, Stream::kTest);
  Tensor z({20000, 2});
  for (auto& v : z.values()) v = rng.normal();
  EXPECT_LT(std::abs(correlation_matrix(z).at(0, 1)), 0.03);
}
