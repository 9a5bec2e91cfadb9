#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "devae/rng.hpp"
#include "devae/tensor.hpp"

/// Procedural factor-labelled sprite images.
namespace devae::data {

enum class ShapeKind : std::int32_t { kSquare = 0, kEllipse = 1, kHeart = 2 };

enum class FactorKind { kShape, kScale, kOrientation, kPosX, kPosY };

/// One generative factor and its value grid. Grids are canonical per kind:
///   shape        {0, 1, 2, ...}                 (square, ellipse, heart)
///   scale        uniform on [0.25, 1]
///   orientation  2 pi k / n, k < n
///   posX, posY   uniform on [0, 1]
/// A single-valued grid sits at the factor's default (scale 1, position 0.5, angle 0).
struct FactorSpec {
  std::string name;
  FactorKind kind = FactorKind::kPosX;
  std::size_t cardinality = 1;
  std::vector<double> grid;

  static FactorSpec make(std::string_view name, std::size_t cardinality);
  void validate() const;
};

/// Parses "posX:16,posY:16,scale:4". Throws ConfigError on unknown names or bad counts.
std::vector<FactorSpec> parse_factor_specs(std::string_view text);
std::string format_factor_specs(std::span<const FactorSpec> specs);

/// Product of cardinalities.
std::size_t dataset_size(std::span<const FactorSpec> specs);

constexpr std::size_t kMaxImages = 1'000'000;

struct SpriteFactors {
  ShapeKind shape = ShapeKind::kSquare;
  double scale = 1.0;
  std::size_t orientation_index = 0;
  std::size_t orientation_count = 1;
  double pos_x = 0.5;
  double pos_y = 0.5;
};

/// Half side length, in pixels, of a sprite at `scale`.
double sprite_half_extent(double scale, std::size_t resolution);

/// Binary rasterisation (0/1 per pixel, row-major) by testing each pixel centre
/// against the rotated, scaled and translated shape region.
std::vector<std::uint8_t> render_sprite(const SpriteFactors& factors, std::size_t resolution);

/// Exhaustive Cartesian product of factor values in row-major factor order
/// (first spec varies slowest). Images are stored bit-packed, one byte-aligned
/// block per image.
class FactorDataset {
 public:
  FactorDataset() = default;
  FactorDataset(std::size_t resolution, std::vector<FactorSpec> specs, std::vector<std::uint8_t> packed,
                std::vector<std::int32_t> labels);

  std::size_t size() const noexcept { return count_; }
  std::size_t resolution() const noexcept { return resolution_; }
  std::size_t channels() const noexcept { return 1; }
  std::size_t pixels_per_image() const noexcept { return resolution_ * resolution_; }
  std::size_t num_factors() const noexcept { return specs_.size(); }
  const std::vector<FactorSpec>& specs() const noexcept { return specs_; }

  std::int32_t label(std::size_t row, std::size_t factor) const { return labels_[row * specs_.size() + factor]; }
  std::span<const std::int32_t> label_row(std::size_t row) const {
    return std::span(labels_).subspan(row * specs_.size(), specs_.size());
  }
  const std::vector<std::int32_t>& labels() const noexcept { return labels_; }
  const std::vector<std::uint8_t>& packed() const noexcept { return packed_; }

  /// Row index of the image with the given factor indices.
  std::size_t index_of(std::span<const std::int32_t> labels) const;
  /// Factor values (grid entries) for a row.
  SpriteFactors factors_of(std::size_t row) const;

  bool pixel(std::size_t row, std::size_t p) const;
  /// Unpacked 0/1 image.
  std::vector<std::uint8_t> image(std::size_t row) const;
  /// Images as doubles, shape [n, 1, res, res].
  Tensor batch(std::span<const std::size_t> rows) const;

  std::size_t bytes_per_image() const noexcept { return (pixels_per_image() + 7) / 8; }

 private:
  std::size_t resolution_ = 0;
  std::size_t count_ = 0;
  std::vector<FactorSpec> specs_;
  std::vector<std::uint8_t> packed_;
  std::vector<std::int32_t> labels_;
};

/// Throws ConfigError when the product exceeds kMaxImages, DataError when a
/// sprite would render with no lit pixel. Rendering is deterministic; the seed is
/// accepted for CLI symmetry and does not affect the output.
FactorDataset generate_dataset(std::span<const FactorSpec> specs, std::size_t resolution, std::uint64_t seed = 0);

struct FixedFactorBatch {
  std::size_t factor = 0;
  std::int32_t value = 0;
  std::vector<std::size_t> rows;
};

/// L rows sharing one random value of factor `factor`, other factors uniform.
/// Throws DataError for a constant (cardinality-1) factor.
FixedFactorBatch sample_fixed_factor_batch(const FactorDataset& dataset, std::size_t factor, std::size_t L,
                                           CounterRng& rng);

/// Header line, packed image bits, then little-endian int32 labels.
void write_dataset(const std::filesystem::path& path, const FactorDataset& dataset);
FactorDataset read_dataset(const std::filesystem::path& path);

}  // namespace devae::data
