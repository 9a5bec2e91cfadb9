#include "devae/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "devae/errors.hpp"

namespace devae {

Image::Image(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill)
    : width(w), height(h), channels(c), pixels(w * h * c, fill) {
  if (c != 1 && c != 3) throw UsageError("Image: channels must be 1 or 3");
}

std::uint8_t to_byte(double v) {
  if (!(v > 0.0)) return 0;  // also maps NaN to black
  if (v >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

void blit_planar(Image& image, std::span<const double> planar, std::size_t res, std::size_t x0, std::size_t y0) {
  const std::size_t c = image.channels;
  if (planar.size() != c * res * res) throw UsageError("blit_planar: tile size mismatch");
  if (x0 + res > image.width || y0 + res > image.height) throw UsageError("blit_planar: tile outside image");
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < res; ++y)
      for (std::size_t x = 0; x < res; ++x) image.at(x0 + x, y0 + y, ch) = to_byte(planar[(ch * res + y) * res + x]);
}

void write_pnm(const std::filesystem::path& path, const Image& image, std::string_view comment) {
  if (image.pixels.size() != image.width * image.height * image.channels)
    throw UsageError("write_pnm: pixel buffer size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image " + path.string());
  out << (image.channels == 1 ? "P5" : "P6") << '\n';
  std::size_t start = 0;
  while (start < comment.size()) {
    const auto end = std::min(comment.find('\n', start), comment.size());
    out << "# " << comment.substr(start, end - start) << '\n';
    start = end + 1;
  }
  out << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw DataError("short write to " + path.string());
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  const auto skip_comments = [&in] {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string line;
      std::getline(in, line);
      in >> std::ws;
    }
  };
  in >> magic;
  skip_comments();
  in >> w;
  skip_comments();
  in >> h;
  skip_comments();
  in >> maxval;
  if ((magic != "P5" && magic != "P6") || maxval != 255 || w == 0 || h == 0)
    throw DataError("unsupported image header in " + path.string());
  in.get();
  Image image(w, h, magic == "P5" ? 1 : 3);
  in.read(reinterpret_cast<char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!in) throw DataError("truncated image " + path.string());
  return image;
}

}  // namespace devae
