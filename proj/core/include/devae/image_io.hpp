#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace devae {

/// 8-bit raster, row-major, `channels` interleaved samples per pixel (1 or 3).
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c = 1, std::uint8_t fill = 0);

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
};

/// Maps [0,1] intensities to bytes with rounding; values outside are clamped.
std::uint8_t to_byte(double v);

/// Copies a c x res x res planar tile (values in [0,1]) into `image` at (x0, y0).
void blit_planar(Image& image, std::span<const double> planar, std::size_t res, std::size_t x0, std::size_t y0);

/// Binary P5 (grey) or P6 (RGB) depending on `channels`. Each line of `comment`
/// becomes a '#' header line.
void write_pnm(const std::filesystem::path& path, const Image& image, std::string_view comment = {});
Image read_pnm(const std::filesystem::path& path);

}  // namespace devae
