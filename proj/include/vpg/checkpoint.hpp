#pragma once

#include "vpg/numcore.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace vpg {

// Checkpoint layout: a plain-text header
//
//   vpg-params 1
//   <entry count>
//   <name> <rows> <cols>      (one line per entry)
//
// followed by the flat parameter data as little-endian IEEE-754 doubles,
// column-major within each entry.

namespace detail {

inline std::uint64_t to_little_endian_bits(double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, sizeof(bits));
  if constexpr (std::endian::native == std::endian::big) {
    bits = __builtin_bswap64(bits);
  }
  return bits;
}

inline double from_little_endian_bits(std::uint64_t bits) {
  if constexpr (std::endian::native == std::endian::big) {
    bits = __builtin_bswap64(bits);
  }
  double x;
  std::memcpy(&x, &bits, sizeof(x));
  return x;
}

}  // namespace detail

inline void save_params(std::ostream& out, const ShapedParams& params) {
  out << "vpg-params 1\n" << params.entry_count() << "\n";
  for (const auto& e : params.manifest()) {
    out << e.name << " " << e.rows << " " << e.cols << "\n";
  }
  for (int i = 0; i < params.size(); ++i) {
    const std::uint64_t bits = detail::to_little_endian_bits(params.data()[i]);
    char buf[8];
    std::memcpy(buf, &bits, 8);
    out.write(buf, 8);
  }
}

inline ShapedParams load_params(std::istream& in) {
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "vpg-params" || version != 1) {
    throw std::runtime_error("checkpoint: bad header '" + magic + "'");
  }
  int n = 0;
  in >> n;
  if (!in || n < 0) throw std::runtime_error("checkpoint: bad entry count");
  std::vector<ParamEntry> manifest;
  manifest.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    ParamEntry e;
    in >> e.name >> e.rows >> e.cols;
    if (!in) throw std::runtime_error("checkpoint: truncated manifest");
    manifest.push_back(e);
  }
  in.get();  // newline before the binary block
  ShapedParams params(manifest);
  for (int i = 0; i < params.size(); ++i) {
    char buf[8];
    in.read(buf, 8);
    if (!in) throw std::runtime_error("checkpoint: truncated data block");
    std::uint64_t bits;
    std::memcpy(&bits, buf, 8);
    params.data()[i] = detail::from_little_endian_bits(bits);
  }
  return params;
}

// Write-temp-then-rename so an aborted run never leaves a torn file.
inline void save_params_file(const std::filesystem::path& path,
                             const ShapedParams& params) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) {
      throw std::runtime_error("checkpoint: cannot open " + tmp.string());
    }
    save_params(out, params);
  }
  std::filesystem::rename(tmp, path);
}

inline ShapedParams load_params_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("checkpoint: cannot open " + path.string());
  }
  return load_params(in);
}

}  // namespace vpg
