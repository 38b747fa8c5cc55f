#pragma once

#include <bit>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "uanet/rasterio.hpp"
#include "uanet/tensor.hpp"

namespace uanet {

// Tensor container: "UATN", u8 version, u8 dtype (0 = f32, 1 = f64),
// u8 rank, rank little-endian u32 dims, then the values little-endian
// in row-major order.

namespace detail {

inline void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

inline void put_le32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 24));
}

inline void put_le64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  put_le32(out, static_cast<std::uint32_t>(v));
  put_le32(out, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint8_t get_u8(const std::vector<std::uint8_t>& d, std::size_t& p, const char* what) {
  if (p >= d.size()) throw parse_error(std::string("uatn: truncated ") + what, p);
  return d[p++];
}

inline std::uint32_t get_le32(const std::vector<std::uint8_t>& d, std::size_t& p,
                              const char* what) {
  if (d.size() - p < 4) throw parse_error(std::string("uatn: truncated ") + what, p);
  std::uint32_t v = d[p] | (std::uint32_t(d[p + 1]) << 8) | (std::uint32_t(d[p + 2]) << 16) |
                    (std::uint32_t(d[p + 3]) << 24);
  p += 4;
  return v;
}

inline std::uint64_t get_le64(const std::vector<std::uint8_t>& d, std::size_t& p,
                              const char* what) {
  const std::uint64_t lo = get_le32(d, p, what);
  const std::uint64_t hi = get_le32(d, p, what);
  return lo | (hi << 32);
}

template <typename S>
constexpr std::uint8_t dtype_code() {
  return std::is_same_v<S, float> ? 0 : 1;
}

}  // namespace detail

template <typename S>
std::vector<std::uint8_t> tensor_bytes(const Tensor<S>& t) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'U', 'A', 'T', 'N'});
  detail::put_u8(out, 1);
  detail::put_u8(out, detail::dtype_code<S>());
  if (t.rank() > 255) throw contract_error("uatn: rank exceeds container limit");
  detail::put_u8(out, static_cast<std::uint8_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i)
    detail::put_le32(out, static_cast<std::uint32_t>(t.dim(i)));
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    if constexpr (std::is_same_v<S, float>)
      detail::put_le32(out, std::bit_cast<std::uint32_t>(t.val()[i]));
    else
      detail::put_le64(out, std::bit_cast<std::uint64_t>(t.val()[i]));
  }
  return out;
}

// Parses one container starting at p, advancing p past it. The stored
// dtype may differ from S; values are converted.
template <typename S>
Tensor<S> parse_tensor(const std::vector<std::uint8_t>& d, std::size_t& p) {
  if (d.size() - p < 4 || d[p] != 'U' || d[p + 1] != 'A' || d[p + 2] != 'T' || d[p + 3] != 'N')
    throw parse_error("uatn: missing magic", p);
  p += 4;
  const std::uint8_t version = detail::get_u8(d, p, "version");
  if (version != 1) throw parse_error("uatn: unsupported version " + std::to_string(version), p);
  const std::uint8_t dtype = detail::get_u8(d, p, "dtype");
  if (dtype > 1) throw parse_error("uatn: unknown dtype " + std::to_string(dtype), p);
  const std::uint8_t rank = detail::get_u8(d, p, "rank");
  if (rank == 0) throw parse_error("uatn: rank must be positive", p);
  Shape shape;
  for (int i = 0; i < rank; ++i) {
    const std::uint32_t dim = detail::get_le32(d, p, "dims");
    if (dim == 0 || dim > (1u << 30)) throw parse_error("uatn: bad dim", p);
    shape.push_back(static_cast<int>(dim));
  }
  Tensor<S> t = Tensor<S>::empty(shape);
  const std::int64_t n = t.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    if (dtype == 0)
      t.val()[i] = static_cast<S>(std::bit_cast<float>(detail::get_le32(d, p, "values")));
    else
      t.val()[i] = static_cast<S>(std::bit_cast<double>(detail::get_le64(d, p, "values")));
  }
  return t;
}

template <typename S>
void write_tensor(const std::string& path, const Tensor<S>& t) {
  const auto bytes = tensor_bytes(t);
  write_file(path, bytes.data(), bytes.size());
}

template <typename S>
Tensor<S> read_tensor(const std::string& path) {
  const auto d = slurp_file(path);
  std::size_t p = 0;
  Tensor<S> t = parse_tensor<S>(d, p);
  if (p != d.size()) throw parse_error("uatn: trailing bytes after container", p);
  return t;
}

// Weight archive: a text manifest indexing a run of containers.
//
//   UANETAR 1
//   count <n>
//   <name> <f32|f64> <container-bytes>   (n lines)
//   ---
//   <n concatenated containers in manifest order>

template <typename S>
void write_archive(const std::string& path,
                   const std::vector<std::pair<std::string, Tensor<S>>>& entries) {
  std::string manifest = "UANETAR 1\ncount " + std::to_string(entries.size()) + "\n";
  std::vector<std::uint8_t> blobs;
  for (const auto& [name, t] : entries) {
    if (name.empty() || name.find_first_of(" \t\n") != std::string::npos)
      throw contract_error("archive: bad entry name '" + name + "'");
    const auto bytes = tensor_bytes(t);
    manifest += name;
    manifest += detail::dtype_code<S>() == 0 ? " f32 " : " f64 ";
    manifest += std::to_string(bytes.size()) + "\n";
    blobs.insert(blobs.end(), bytes.begin(), bytes.end());
  }
  manifest += "---\n";
  std::vector<std::uint8_t> out(manifest.begin(), manifest.end());
  out.insert(out.end(), blobs.begin(), blobs.end());
  write_file(path, out.data(), out.size());
}

namespace detail {

inline std::string read_line(const std::vector<std::uint8_t>& d, std::size_t& p) {
  std::string line;
  while (p < d.size() && d[p] != '\n') line.push_back(static_cast<char>(d[p++]));
  if (p >= d.size()) throw parse_error("archive: truncated manifest", p);
  ++p;
  return line;
}

}  // namespace detail

template <typename S>
std::vector<std::pair<std::string, Tensor<S>>> read_archive(const std::string& path) {
  const auto d = slurp_file(path);
  std::size_t p = 0;
  if (detail::read_line(d, p) != "UANETAR 1") throw parse_error("archive: bad header", 0);
  const std::string count_line = detail::read_line(d, p);
  if (count_line.rfind("count ", 0) != 0) throw parse_error("archive: missing count", p);
  const long n = std::stol(count_line.substr(6));
  if (n < 0) throw parse_error("archive: negative count", p);
  struct Entry {
    std::string name;
    std::size_t bytes;
  };
  std::vector<Entry> index;
  for (long i = 0; i < n; ++i) {
    const std::string line = detail::read_line(d, p);
    const std::size_t s1 = line.find(' ');
    const std::size_t s2 = line.find(' ', s1 + 1);
    if (s1 == std::string::npos || s2 == std::string::npos)
      throw parse_error("archive: malformed index line '" + line + "'", p);
    const std::string dtype = line.substr(s1 + 1, s2 - s1 - 1);
    if (dtype != "f32" && dtype != "f64")
      throw parse_error("archive: unknown dtype '" + dtype + "'", p);
    index.push_back({line.substr(0, s1), static_cast<std::size_t>(std::stoul(line.substr(s2 + 1)))});
  }
  if (detail::read_line(d, p) != "---") throw parse_error("archive: missing separator", p);
  std::vector<std::pair<std::string, Tensor<S>>> out;
  for (const auto& e : index) {
    const std::size_t start = p;
    Tensor<S> t = parse_tensor<S>(d, p);
    if (p - start != e.bytes)
      throw parse_error("archive: size mismatch for '" + e.name + "'", start);
    out.emplace_back(e.name, std::move(t));
  }
  if (p != d.size()) throw parse_error("archive: trailing bytes", p);
  return out;
}

}  // namespace uanet
