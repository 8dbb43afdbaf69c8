#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "multitrans/errors.hpp"

namespace multitrans::io {

// Little-endian scalar encoding independent of host byte order.

template <typename U>
void write_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  }
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U read_le(std::istream& in, const std::string& what) {
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw DataError("truncated " + what);
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

inline void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }
inline void write_u64(std::ostream& out, std::uint64_t v) { write_le(out, v); }
inline void write_f32(std::ostream& out, float v) { write_le(out, std::bit_cast<std::uint32_t>(v)); }
inline void write_f64(std::ostream& out, double v) { write_le(out, std::bit_cast<std::uint64_t>(v)); }

inline std::uint32_t read_u32(std::istream& in, const std::string& what) {
  return read_le<std::uint32_t>(in, what);
}
inline std::uint64_t read_u64(std::istream& in, const std::string& what) {
  return read_le<std::uint64_t>(in, what);
}
inline float read_f32(std::istream& in, const std::string& what) {
  return std::bit_cast<float>(read_le<std::uint32_t>(in, what));
}
inline double read_f64(std::istream& in, const std::string& what) {
  return std::bit_cast<double>(read_le<std::uint64_t>(in, what));
}

}  // namespace multitrans::io
