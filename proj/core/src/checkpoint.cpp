#include "devae/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "binary_io.hpp"
#include "devae/errors.hpp"

namespace devae::models {

using detail::read_f64;
using detail::read_le;
using detail::write_f64;
using detail::write_le;

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_le<std::uint64_t>(out, checkpoint.header.size());
    out.write(checkpoint.header.data(), static_cast<std::streamsize>(checkpoint.header.size()));
    for (const Tensor& t : checkpoint.tensors) {
      write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
      for (std::size_t extent : t.shape()) write_le<std::uint64_t>(out, extent);
      for (double v : t.values()) write_f64(out, v);
    }
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw DataError(path.string() + " is not a checkpoint");
  }
  Checkpoint checkpoint;
  const auto header_len = read_le<std::uint64_t>(in);
  if (header_len > (1u << 24)) throw DataError("checkpoint header too large");
  checkpoint.header.resize(header_len);
  if (!in.read(checkpoint.header.data(), static_cast<std::streamsize>(header_len))) {
    throw DataError("checkpoint header truncated");
  }
  while (in.peek() != std::char_traits<char>::eof()) {
    const auto rank = read_le<std::uint32_t>(in);
    if (rank > 8) throw DataError("checkpoint tensor rank " + std::to_string(rank) + " is implausible");
    Shape shape(rank);
    for (auto& extent : shape) extent = read_le<std::uint64_t>(in);
    if (shape_size(shape) > (std::size_t{1} << 32)) throw DataError("checkpoint tensor too large");
    Tensor t(shape);
    for (double& v : t.values()) v = read_f64(in);
    checkpoint.tensors.push_back(std::move(t));
  }
  return checkpoint;
}

}  // namespace devae::models
