#pragma once

// GDTF tensor files and 8-bit PGM import/export.
//
// GDTF layout, all integers little-endian:
//   "GDTF" | u32 version=1 | u8 ndim | u64 dims[ndim] | f64 payload[prod(dims)]

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gdiff/error.hpp"
#include "gdiff/field.hpp"

namespace gdiff {

inline constexpr std::array<char, 4> kGdtfMagic{'G', 'D', 'T', 'F'};
inline constexpr std::uint32_t kGdtfVersion = 1;

namespace detail {

template <class T>
void put_le(std::string& out, T value) {
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, double>) {
    bits = std::bit_cast<std::uint64_t>(value);
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <class T>
T get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  if constexpr (std::is_same_v<T, double>) {
    return std::bit_cast<double>(bits);
  } else {
    return static_cast<T>(bits);
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace detail

inline std::string encode_gdtf(const Field& f) {
  std::string out(kGdtfMagic.begin(), kGdtfMagic.end());
  detail::put_le<std::uint32_t>(out, kGdtfVersion);
  detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(f.dims().size()));
  for (auto d : f.dims()) detail::put_le<std::uint64_t>(out, d);
  for (double v : f.data()) detail::put_le<double>(out, v);
  return out;
}

inline Field decode_gdtf(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  require(n >= 4, ErrorKind::Truncated, "file shorter than magic");
  if (std::memcmp(p, kGdtfMagic.data(), 4) != 0) fail(ErrorKind::BadMagic, "expected \"GDTF\"");
  require(n >= 9, ErrorKind::Truncated, "header truncated");
  const auto version = detail::get_le<std::uint32_t>(p + 4);
  if (version != kGdtfVersion) fail(ErrorKind::VersionMismatch, "file version " + std::to_string(version));
  const auto ndim = detail::get_le<std::uint8_t>(p + 8);
  require(ndim >= 1 && ndim <= 2, ErrorKind::InvalidArgument, "unsupported ndim " + std::to_string(ndim));
  require(n >= 9 + 8u * ndim, ErrorKind::Truncated, "dims truncated");
  Shape dims(ndim);
  for (std::size_t i = 0; i < ndim; ++i) dims[i] = detail::get_le<std::uint64_t>(p + 9 + 8 * i);
  validate_shape(dims);
  const std::size_t count = shape_size(dims);
  const std::size_t offset = 9 + 8u * ndim;
  require(n - offset >= 8 * count, ErrorKind::Truncated,
          "payload has " + std::to_string((n - offset) / 8) + " of " + std::to_string(count) + " values");
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) data[i] = detail::get_le<double>(p + offset + 8 * i);
  return Field(std::move(dims), std::move(data));
}

inline void save_field(const Field& f, const std::filesystem::path& path) { detail::write_file(path, encode_gdtf(f)); }

inline Field load_field(const std::filesystem::path& path) { return decode_gdtf(detail::read_file(path)); }

/// Write a 2D field as binary P5 PGM; values in [lo, hi] map linearly onto 0..255.
inline void save_pgm(const Field& f, const std::filesystem::path& path, double lo = 0.0, double hi = 1.0) {
  require(f.dims().size() == 2, ErrorKind::InvalidArgument, "PGM export needs a 2D field");
  require(hi > lo, ErrorKind::InvalidArgument, "PGM range must be nonempty");
  std::string out = "P5\n" + std::to_string(f.dims()[1]) + " " + std::to_string(f.dims()[0]) + "\n255\n";
  for (double v : f.data()) {
    const double u = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(u * 255.0))));
  }
  detail::write_file(path, out);
}

/// Read a binary P5 PGM (maxval <= 255) into [0, 1].
inline Field load_pgm(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  std::istringstream in(bytes);
  std::string magic;
  in >> magic;
  if (magic != "P5") fail(ErrorKind::BadMagic, "expected P5 PGM");
  auto next_int = [&in]() {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string skip;
      std::getline(in, skip);
      in >> std::ws;
    }
    long v = -1;
    in >> v;
    return v;
  };
  const long width = next_int(), height = next_int(), maxval = next_int();
  require(width > 0 && height > 0 && maxval > 0 && maxval <= 255, ErrorKind::InvalidArgument, "bad PGM header");
  in.get();
  const auto offset = static_cast<std::size_t>(in.tellg());
  const auto count = static_cast<std::size_t>(width * height);
  require(bytes.size() >= offset + count, ErrorKind::Truncated, "PGM payload truncated");
  Field f(Shape{static_cast<std::size_t>(height), static_cast<std::size_t>(width)});
  for (std::size_t i = 0; i < count; ++i) {
    f[i] = static_cast<unsigned char>(bytes[offset + i]) / static_cast<double>(maxval);
  }
  return f;
}

}  // namespace gdiff
