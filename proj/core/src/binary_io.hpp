#pragma once

// Little-endian primitives shared by the dataset and checkpoint formats.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>

#include "devae/errors.hpp"

namespace devae::detail {

template <typename U>
void write_le(std::ostream& out, U value) {
  static_assert(std::is_unsigned_v<U>);
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFFu);
  out.write(bytes, sizeof(U));
}

template <typename U>
U read_le(std::istream& in) {
  static_assert(std::is_unsigned_v<U>);
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw DataError("unexpected end of file");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

inline void write_f64(std::ostream& out, double v) { write_le(out, std::bit_cast<std::uint64_t>(v)); }
inline double read_f64(std::istream& in) { return std::bit_cast<double>(read_le<std::uint64_t>(in)); }

inline void write_i32(std::ostream& out, std::int32_t v) { write_le(out, std::bit_cast<std::uint32_t>(v)); }
inline std::int32_t read_i32(std::istream& in) { return std::bit_cast<std::int32_t>(read_le<std::uint32_t>(in)); }

}  // namespace devae::detail
