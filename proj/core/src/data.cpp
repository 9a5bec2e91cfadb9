#include "devae/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "binary_io.hpp"
#include "devae/errors.hpp"

namespace devae::data {
namespace {

constexpr std::string_view kDatasetMagic = "DEVAE-DATASET";

// Geometry is snapped to dyadic grids so the inside-tests below never depend on the
// last bits of sin/cos or of grid arithmetic such as (k / 15.0) * 15.0.
double snap(double v) { return std::nearbyint(v * 0x1.0p40) * 0x1.0p-40; }
double snap_coarse(double v) { return std::nearbyint(v * 0x1.0p20) * 0x1.0p-20; }

std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    out[k] = n == 1 ? hi : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n - 1);
  }
  return out;
}

FactorKind kind_from_name(std::string_view name) {
  if (name == "shape") return FactorKind::kShape;
  if (name == "scale") return FactorKind::kScale;
  if (name == "orientation") return FactorKind::kOrientation;
  if (name == "posX") return FactorKind::kPosX;
  if (name == "posY") return FactorKind::kPosY;
  throw ConfigError("unknown factor '" + std::string(name) + "' (expected shape, scale, orientation, posX, posY)");
}

bool inside(ShapeKind shape, double u, double v, double half) {
  switch (shape) {
    case ShapeKind::kSquare:
      return std::abs(u) < half && std::abs(v) < half;
    case ShapeKind::kEllipse: {
      const double a = u / half;
      const double b = v / (0.5 * half);
      return a * a + b * b < 1.0;
    }
    case ShapeKind::kHeart: {
      // (x^2 + y^2 - 1)^3 - x^2 y^3 <= 0, fitted to the unit box with y pointing up.
      const double x = 1.15 * u / half;
      const double y = -1.15 * v / half + 0.15;
      const double r = x * x + y * y - 1.0;
      return r * r * r - x * x * y * y * y < 0.0;
    }
  }
  return false;
}

SpriteFactors factors_for(std::span<const FactorSpec> specs, std::span<const std::int32_t> labels) {
  SpriteFactors f;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const auto& spec = specs[k];
    const auto idx = static_cast<std::size_t>(labels[k]);
    switch (spec.kind) {
      case FactorKind::kShape: f.shape = static_cast<ShapeKind>(idx); break;
      case FactorKind::kScale: f.scale = spec.grid[idx]; break;
      case FactorKind::kOrientation:
        f.orientation_index = idx;
        f.orientation_count = spec.cardinality;
        break;
      case FactorKind::kPosX: f.pos_x = spec.grid[idx]; break;
      case FactorKind::kPosY: f.pos_y = spec.grid[idx]; break;
    }
  }
  return f;
}

}  // namespace

FactorSpec FactorSpec::make(std::string_view name, std::size_t cardinality) {
  FactorSpec spec;
  spec.name = std::string(name);
  spec.kind = kind_from_name(name);
  spec.cardinality = cardinality;
  if (cardinality == 0) throw ConfigError("factor '" + spec.name + "' needs cardinality >= 1");
  switch (spec.kind) {
    case FactorKind::kShape:
      if (cardinality > 3) throw ConfigError("shape factor supports at most 3 shapes");
      spec.grid = linspace(0.0, static_cast<double>(cardinality - 1), cardinality);
      if (cardinality == 1) spec.grid = {0.0};
      break;
    case FactorKind::kScale:
      spec.grid = linspace(0.25, 1.0, cardinality);
      break;
    case FactorKind::kOrientation:
      spec.grid.resize(cardinality);
      for (std::size_t k = 0; k < cardinality; ++k) {
        spec.grid[k] = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(cardinality);
      }
      break;
    case FactorKind::kPosX:
    case FactorKind::kPosY:
      spec.grid = cardinality == 1 ? std::vector<double>{0.5} : linspace(0.0, 1.0, cardinality);
      break;
  }
  return spec;
}

void FactorSpec::validate() const {
  if (cardinality < 1 || grid.size() != cardinality) throw ConfigError("factor '" + name + "': grid/cardinality mismatch");
  for (std::size_t k = 1; k < grid.size(); ++k) {
    if (!(grid[k] > grid[k - 1])) throw ConfigError("factor '" + name + "': grid must be strictly increasing");
  }
}

std::vector<FactorSpec> parse_factor_specs(std::string_view text) {
  std::vector<FactorSpec> specs;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find(',', start), text.size());
    std::string_view item = text.substr(start, end - start);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (!item.empty()) {
      const std::size_t colon = item.find(':');
      if (colon == std::string_view::npos) throw ConfigError("factor entry '" + std::string(item) + "' lacks ':count'");
      std::size_t count = 0;
      const auto count_text = item.substr(colon + 1);
      const auto [ptr, ec] = std::from_chars(count_text.data(), count_text.data() + count_text.size(), count);
      if (ec != std::errc() || ptr != count_text.data() + count_text.size()) {
        throw ConfigError("bad cardinality in factor entry '" + std::string(item) + "'");
      }
      specs.push_back(FactorSpec::make(item.substr(0, colon), count));
    }
    start = end + 1;
  }
  if (specs.empty()) throw ConfigError("factor list is empty");
  for (std::size_t i = 0; i < specs.size(); ++i)
    for (std::size_t j = i + 1; j < specs.size(); ++j)
      if (specs[i].kind == specs[j].kind) throw ConfigError("factor '" + specs[i].name + "' listed twice");
  return specs;
}

std::string format_factor_specs(std::span<const FactorSpec> specs) {
  std::string out;
  for (const auto& s : specs) {
    if (!out.empty()) out += ',';
    out += s.name + ':' + std::to_string(s.cardinality);
  }
  return out;
}

std::size_t dataset_size(std::span<const FactorSpec> specs) {
  std::size_t n = 1;
  for (const auto& s : specs) {
    if (s.cardinality != 0 && n > kMaxImages * 16 / s.cardinality) return kMaxImages * 16;  // saturate
    n *= s.cardinality;
  }
  return n;
}

double sprite_half_extent(double scale, std::size_t resolution) {
  return snap_coarse(scale * 0.25 * static_cast<double>(resolution));
}

std::vector<std::uint8_t> render_sprite(const SpriteFactors& f, std::size_t resolution) {
  if (resolution == 0) throw ConfigError("resolution must be positive");
  const double res = static_cast<double>(resolution);
  const double cx = snap_coarse(0.5 + f.pos_x * (res - 1.0));
  const double cy = snap_coarse(0.5 + f.pos_y * (res - 1.0));
  const double half = sprite_half_extent(f.scale, resolution);
  double c = 1.0, s = 0.0;
  if (f.orientation_count > 1 && f.orientation_index % f.orientation_count != 0) {
    const double theta =
        2.0 * std::numbers::pi * static_cast<double>(f.orientation_index) / static_cast<double>(f.orientation_count);
    c = snap(std::cos(theta));
    s = snap(std::sin(theta));
  }
  std::vector<std::uint8_t> image(resolution * resolution, 0);
  for (std::size_t py = 0; py < resolution; ++py) {
    const double dy = static_cast<double>(py) + 0.5 - cy;
    for (std::size_t px = 0; px < resolution; ++px) {
      const double dx = static_cast<double>(px) + 0.5 - cx;
      const double u = c * dx + s * dy;
      const double v = -s * dx + c * dy;
      image[py * resolution + px] = inside(f.shape, u, v, half) ? 1 : 0;
    }
  }
  return image;
}

FactorDataset::FactorDataset(std::size_t resolution, std::vector<FactorSpec> specs, std::vector<std::uint8_t> packed,
                             std::vector<std::int32_t> labels)
    : resolution_(resolution), count_(dataset_size(specs)), specs_(std::move(specs)), packed_(std::move(packed)),
      labels_(std::move(labels)) {
  if (packed_.size() != count_ * bytes_per_image()) throw DataError("dataset image block has the wrong size");
  if (labels_.size() != count_ * specs_.size()) throw DataError("dataset label block has the wrong size");
}

std::size_t FactorDataset::index_of(std::span<const std::int32_t> labels) const {
  if (labels.size() != specs_.size()) throw UsageError("index_of: label width mismatch");
  std::size_t index = 0;
  for (std::size_t k = 0; k < specs_.size(); ++k) {
    if (labels[k] < 0 || static_cast<std::size_t>(labels[k]) >= specs_[k].cardinality) {
      throw UsageError("index_of: label out of range for factor " + specs_[k].name);
    }
    index = index * specs_[k].cardinality + static_cast<std::size_t>(labels[k]);
  }
  return index;
}

SpriteFactors FactorDataset::factors_of(std::size_t row) const { return factors_for(specs_, label_row(row)); }

bool FactorDataset::pixel(std::size_t row, std::size_t p) const {
  const std::uint8_t byte = packed_[row * bytes_per_image() + p / 8];
  return (byte >> (7 - p % 8)) & 1u;
}

std::vector<std::uint8_t> FactorDataset::image(std::size_t row) const {
  std::vector<std::uint8_t> out(pixels_per_image());
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = pixel(row, p) ? 1 : 0;
  return out;
}

Tensor FactorDataset::batch(std::span<const std::size_t> rows) const {
  const std::size_t ppi = pixels_per_image();
  Tensor out({rows.size(), 1, resolution_, resolution_});
  for (std::size_t b = 0; b < rows.size(); ++b) {
    if (rows[b] >= count_) throw UsageError("dataset row out of range");
    for (std::size_t p = 0; p < ppi; ++p) out[b * ppi + p] = pixel(rows[b], p) ? 1.0 : 0.0;
  }
  return out;
}

FactorDataset generate_dataset(std::span<const FactorSpec> specs, std::size_t resolution, std::uint64_t /*seed*/) {
  if (specs.empty()) throw ConfigError("dataset needs at least one factor");
  if (resolution < 4) throw ConfigError("resolution must be at least 4");
  for (const auto& s : specs) s.validate();
  const std::size_t n = dataset_size(specs);
  if (n > kMaxImages) {
    throw ConfigError("dataset of " + std::to_string(n) + " images exceeds the budget of " + std::to_string(kMaxImages));
  }
  const std::size_t F = specs.size();
  const std::size_t ppi = resolution * resolution;
  const std::size_t bpi = (ppi + 7) / 8;
  std::vector<std::uint8_t> packed(n * bpi, 0);
  std::vector<std::int32_t> labels(n * F);
  std::vector<std::size_t> digits(F, 0);
  for (std::size_t row = 0; row < n; ++row) {
    for (std::size_t k = 0; k < F; ++k) labels[row * F + k] = static_cast<std::int32_t>(digits[k]);
    // odometer, last factor fastest
    for (std::size_t k = F; k-- > 0;) {
      if (++digits[k] < specs[k].cardinality) break;
      digits[k] = 0;
    }
  }
  for (std::size_t row = 0; row < n; ++row) {
    const auto image = render_sprite(factors_for(specs, std::span(labels).subspan(row * F, F)), resolution);
    bool lit = false;
    for (std::size_t p = 0; p < ppi; ++p) {
      if (image[p]) {
        packed[row * bpi + p / 8] |= static_cast<std::uint8_t>(0x80u >> (p % 8));
        lit = true;
      }
    }
    if (!lit) throw DataError("factor tuple at row " + std::to_string(row) + " renders an empty image");
  }
  return FactorDataset(resolution, std::vector<FactorSpec>(specs.begin(), specs.end()), std::move(packed),
                       std::move(labels));
}

FixedFactorBatch sample_fixed_factor_batch(const FactorDataset& dataset, std::size_t factor, std::size_t L,
                                           CounterRng& rng) {
  if (factor >= dataset.num_factors()) throw UsageError("fixed factor index out of range");
  if (L < 2) throw UsageError("fixed-factor batches need L >= 2");
  const auto& specs = dataset.specs();
  if (specs[factor].cardinality < 2) {
    throw DataError("factor '" + specs[factor].name + "' is constant; fixed-factor batches are undefined");
  }
  FixedFactorBatch batch;
  batch.factor = factor;
  batch.value = static_cast<std::int32_t>(rng.below(specs[factor].cardinality));
  std::vector<std::int32_t> labels(specs.size());
  batch.rows.reserve(L);
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t k = 0; k < specs.size(); ++k) {
      labels[k] = k == factor ? batch.value : static_cast<std::int32_t>(rng.below(specs[k].cardinality));
    }
    batch.rows.push_back(dataset.index_of(labels));
  }
  return batch;
}

void write_dataset(const std::filesystem::path& path, const FactorDataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << kDatasetMagic << " resolution=" << dataset.resolution() << " channels=" << dataset.channels()
      << " encoding=bits count=" << dataset.size() << " factors=" << format_factor_specs(dataset.specs()) << '\n';
  const auto& packed = dataset.packed();
  out.write(reinterpret_cast<const char*>(packed.data()), static_cast<std::streamsize>(packed.size()));
  for (std::int32_t v : dataset.labels()) detail::write_i32(out, v);
  if (!out) throw DataError("failed writing " + path.string());
}

FactorDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw DataError("dataset header missing");
  std::istringstream fields(header);
  std::string magic;
  fields >> magic;
  if (magic != kDatasetMagic) throw DataError(path.string() + " is not a dataset file");
  std::size_t resolution = 0, channels = 0, count = 0;
  std::string encoding, factors;
  std::string token;
  while (fields >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw DataError("malformed dataset header token '" + token + "'");
    const std::string key = token.substr(0, eq), value = token.substr(eq + 1);
    if (key == "resolution") resolution = std::stoul(value);
    else if (key == "channels") channels = std::stoul(value);
    else if (key == "count") count = std::stoul(value);
    else if (key == "encoding") encoding = value;
    else if (key == "factors") factors = value;
  }
  if (channels != 1 || encoding != "bits") throw DataError("only single-channel bit-packed datasets are supported");
  std::vector<FactorSpec> specs;
  try {
    specs = parse_factor_specs(factors);
  } catch (const ConfigError& e) {
    throw DataError(std::string("dataset header: ") + e.what());
  }
  if (dataset_size(specs) != count) throw DataError("dataset header count disagrees with factor cardinalities");
  const std::size_t bpi = (resolution * resolution + 7) / 8;
  std::vector<std::uint8_t> packed(count * bpi);
  if (!in.read(reinterpret_cast<char*>(packed.data()), static_cast<std::streamsize>(packed.size()))) {
    throw DataError("dataset image block truncated");
  }
  std::vector<std::int32_t> labels(count * specs.size());
  for (auto& v : labels) v = detail::read_i32(in);
  return FactorDataset(resolution, std::move(specs), std::move(packed), std::move(labels));
}

}  // namespace devae::data
