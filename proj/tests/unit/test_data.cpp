#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>

#include "devae/data.hpp"
#include "devae/errors.hpp"

using namespace devae;
using namespace devae::data;

namespace {

std::size_t lit(const std::vector<std::uint8_t>& img) { return std::accumulate(img.begin(), img.end(), std::size_t{0}); }

// Pixel centres x + 0.5 with |x + 0.5 - c| < h, counted on one axis.
std::size_t centres_inside(double c, double h, std::size_t res) {
  std::size_t n = 0;
  for (std::size_t x = 0; x < res; ++x)
    if (std::abs(static_cast<double>(x) + 0.5 - c) < h) ++n;
  return n;
}

// Upper-tail chi-square critical value via the Wilson-Hilferty approximation.
double chi2_critical(double dof, double z) {
  const double a = 2.0 / (9.0 * dof);
  return dof * std::pow(1.0 - a + z * std::sqrt(a), 3.0);
}

}  // namespace

TEST(FactorSpec, CanonicalGrids) {
  const auto pos = FactorSpec::make("posX", 16);
  EXPECT_EQ(pos.grid.size(), 16u);
  EXPECT_EQ(pos.grid.front(), 0.0);
  EXPECT_EQ(pos.grid.back(), 1.0);
  EXPECT_TRUE(std::is_sorted(pos.grid.begin(), pos.grid.end()));
  const auto orient = FactorSpec::make("orientation", 40);
  EXPECT_LT(orient.grid.back(), 2 * 3.14159265358979);
  EXPECT_EQ(FactorSpec::make("scale", 1).grid, std::vector<double>{1.0});
  EXPECT_THROW(FactorSpec::make("colour", 3), ConfigError);
  EXPECT_THROW(FactorSpec::make("posX", 0), ConfigError);
}

TEST(FactorSpec, ParseAndFormat) {
  const auto specs = parse_factor_specs("posX:16,posY:16,scale:4");
  ASSERT_EQ(specs.size(), 3u);
  EXPECT_EQ(format_factor_specs(specs), "posX:16,posY:16,scale:4");
  EXPECT_THROW(parse_factor_specs("posX:16,posX:4"), ConfigError);
  EXPECT_THROW(parse_factor_specs("posX16"), ConfigError);
}

TEST(RenderSprite, Deterministic) {
  SpriteFactors f{ShapeKind::kHeart, 0.75, 3, 40, 0.4, 0.6};
  EXPECT_EQ(render_sprite(f, 64), render_sprite(f, 64));
}

TEST(RenderSprite, CentredSquareLightsKSquaredPixels) {
  // Centre on a pixel centre (7.5) with half extent 1.5 covers a 3x3 block.
  SpriteFactors f{ShapeKind::kSquare, 0.375, 0, 1, 7.0 / 15.0, 7.0 / 15.0};
  EXPECT_EQ(lit(render_sprite(f, 16)), 9u);
  for (std::size_t res : {16u, 32u, 64u}) {
    for (double scale : {0.25, 0.5, 0.75, 1.0}) {
      for (double pos : {0.0, 0.5, 7.0 / 15.0, 1.0}) {
        SpriteFactors g{ShapeKind::kSquare, scale, 0, 1, pos, pos};
        const double c = 0.5 + pos * (static_cast<double>(res) - 1.0);
        const std::size_t k = centres_inside(c, sprite_half_extent(scale, res), res);
        EXPECT_EQ(lit(render_sprite(g, res)), k * k) << "res " << res << " scale " << scale << " pos " << pos;
      }
    }
  }
}

TEST(RenderSprite, FullTurnMatchesZeroOrientation) {
  for (auto shape : {ShapeKind::kSquare, ShapeKind::kEllipse, ShapeKind::kHeart}) {
    SpriteFactors a{shape, 0.8, 0, 40, 0.3, 0.7};
    SpriteFactors b = a;
    b.orientation_index = 40;
    EXPECT_EQ(render_sprite(a, 32), render_sprite(b, 32));
  }
}

TEST(RenderSprite, ShapesDiffer) {
  SpriteFactors sq{ShapeKind::kSquare, 1.0, 0, 1, 0.5, 0.5};
  SpriteFactors el = sq, he = sq;
  el.shape = ShapeKind::kEllipse;
  he.shape = ShapeKind::kHeart;
  const auto a = render_sprite(sq, 32), b = render_sprite(el, 32), c = render_sprite(he, 32);
  EXPECT_NE(a, b);
  EXPECT_NE(b, c);
  EXPECT_GT(lit(a), lit(b));
  EXPECT_GT(lit(c), 0u);
}

TEST(GenerateDataset, ToySize) {
  const auto ds = generate_dataset(parse_factor_specs("posX:16,posY:16,scale:4"), 16);
  EXPECT_EQ(ds.size(), 1024u);
  EXPECT_EQ(ds.num_factors(), 3u);
  for (std::size_t r = 0; r < ds.size(); ++r) EXPECT_GT(lit(ds.image(r)), 0u);
}

TEST(GenerateDataset, SingleConstantFactor) {
  const auto ds = generate_dataset(parse_factor_specs("shape:1"), 16);
  EXPECT_EQ(ds.size(), 1u);
}

TEST(GenerateDataset, DspritesShapedSpecSize) {
  const auto specs = parse_factor_specs("shape:3,orientation:40,scale:6,posX:32,posY:32");
  EXPECT_EQ(dataset_size(specs), 737'280u);
  EXPECT_THROW(generate_dataset(parse_factor_specs("posX:1000,posY:1001"), 16), ConfigError);
}

TEST(GenerateDataset, LabelsIndexImagesAndRegenerateBitwise) {
  const auto specs = parse_factor_specs("shape:3,orientation:4,scale:2,posX:3,posY:3");
  const auto ds = generate_dataset(specs, 24);
  const auto again = generate_dataset(specs, 24);
  EXPECT_EQ(ds.packed(), again.packed());
  std::map<std::vector<std::int32_t>, std::size_t> seen;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const auto row = ds.label_row(r);
    EXPECT_EQ(ds.index_of(row), r);
    EXPECT_TRUE(seen.emplace(std::vector<std::int32_t>(row.begin(), row.end()), r).second);
    EXPECT_EQ(ds.image(r), render_sprite(ds.factors_of(r), 24));
  }
  // Last factor varies fastest.
  EXPECT_EQ(ds.label(1, 4), 1);
  EXPECT_EQ(ds.label(1, 3), 0);
}

TEST(GenerateDataset, BatchIsBinaryTensor) {
  const auto ds = generate_dataset(parse_factor_specs("posX:4,posY:4"), 16);
  const std::vector<std::size_t> rows{0, 5, 15};
  const Tensor b = ds.batch(rows);
  EXPECT_EQ(b.shape(), (Shape{3, 1, 16, 16}));
  for (double v : b.values()) EXPECT_TRUE(v == 0.0 || v == 1.0);
  for (std::size_t p = 0; p < 256; ++p) EXPECT_EQ(b[256 + p], ds.pixel(5, p) ? 1.0 : 0.0);
}

TEST(DatasetFile, RoundTrip) {
  const auto ds = generate_dataset(parse_factor_specs("scale:3,posX:5,posY:5"), 16);
  const auto path = std::filesystem::temp_directory_path() / "devae_test_dataset.bin";
  write_dataset(path, ds);
  const auto back = read_dataset(path);
  EXPECT_EQ(back.packed(), ds.packed());
  EXPECT_EQ(back.labels(), ds.labels());
  EXPECT_EQ(back.resolution(), 16u);
  EXPECT_EQ(format_factor_specs(back.specs()), "scale:3,posX:5,posY:5");
  std::filesystem::remove(path);
  EXPECT_THROW(read_dataset(path), DataError);
}

TEST(FixedFactorBatch, SharesFactorAndErrorsOnConstant) {
  const auto ds = generate_dataset(parse_factor_specs("shape:1,scale:4,posX:8,posY:8"), 16);
  CounterRng rng(3, Stream::kTest);
  const auto batch = sample_fixed_factor_batch(ds, 1, 100, rng);
  ASSERT_EQ(batch.rows.size(), 100u);
  for (auto r : batch.rows) EXPECT_EQ(ds.label(r, 1), batch.value);
  EXPECT_THROW(sample_fixed_factor_batch(ds, 0, 100, rng), DataError);
}

TEST(FixedFactorBatch, OtherFactorsUniformChiSquare) {
  const auto ds = generate_dataset(parse_factor_specs("scale:4,posX:8,posY:8"), 16);
  CounterRng rng(4, Stream::kTest);
  std::vector<std::size_t> counts_x(8, 0), counts_fixed(4, 0);
  std::size_t draws = 0;
  while (draws < 10'000) {
    const auto b = sample_fixed_factor_batch(ds, 0, 100, rng);
    ++counts_fixed[static_cast<std::size_t>(b.value)];
    for (auto r : b.rows) ++counts_x[static_cast<std::size_t>(ds.label(r, 1))];
    draws += b.rows.size();
  }
  const double expected = static_cast<double>(draws) / 8.0;
  double chi2 = 0.0;
  for (auto c : counts_x) chi2 += (static_cast<double>(c) - expected) * (static_cast<double>(c) - expected) / expected;
  EXPECT_LT(chi2, chi2_critical(7.0, 3.09));  // p = 0.001
  for (auto c : counts_fixed) EXPECT_GT(c, 0u);
}
