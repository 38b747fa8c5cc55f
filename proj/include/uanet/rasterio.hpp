#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace uanet {

std::vector<std::uint8_t> slurp_file(const std::string& path);
void write_file(const std::string& path, const std::uint8_t* data, std::size_t size);

struct PgmImage {
  int w = 0, h = 0;
  std::vector<std::uint8_t> v;  // row-major, v[y*w + x]
};

// Binary PGM (P5), maxval 255.
PgmImage read_pgm(const std::string& path);
void write_pgm(const std::string& path, const PgmImage& img);

// 8-bit grayscale PNG, zlib-compressed, filter 0 scanlines.
void write_png_gray8(const std::string& path, int w, int h, const std::uint8_t* data);

}  // namespace uanet
