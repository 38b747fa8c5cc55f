#include "uanet/rasterio.hpp"

#include <zlib.h>

#include <cstdio>
#include <memory>

#include "uanet/common.hpp"

namespace uanet {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

bool is_ws(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

// PGM token separators: whitespace runs and '#' comments to end of line.
void skip_separators(const std::vector<std::uint8_t>& d, std::size_t& p) {
  while (p < d.size()) {
    if (is_ws(d[p])) {
      ++p;
    } else if (d[p] == '#') {
      while (p < d.size() && d[p] != '\n') ++p;
    } else {
      return;
    }
  }
}

int parse_int(const std::vector<std::uint8_t>& d, std::size_t& p, const char* what) {
  skip_separators(d, p);
  if (p >= d.size() || d[p] < '0' || d[p] > '9')
    throw parse_error(std::string("pgm: expected ") + what, p);
  long v = 0;
  while (p < d.size() && d[p] >= '0' && d[p] <= '9') {
    v = v * 10 + (d[p] - '0');
    if (v > 1 << 30) throw parse_error(std::string("pgm: ") + what + " out of range", p);
    ++p;
  }
  return static_cast<int>(v);
}

}  // namespace

std::vector<std::uint8_t> slurp_file(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw io_error("cannot open " + path);
  std::fseek(f.get(), 0, SEEK_END);
  const long size = std::ftell(f.get());
  if (size < 0) throw io_error("cannot stat " + path);
  std::fseek(f.get(), 0, SEEK_SET);
  std::vector<std::uint8_t> data(static_cast<std::size_t>(size));
  if (size > 0 && std::fread(data.data(), 1, data.size(), f.get()) != data.size())
    throw io_error("short read on " + path);
  return data;
}

void write_file(const std::string& path, const std::uint8_t* data, std::size_t size) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw io_error("cannot create " + path);
  if (size > 0 && std::fwrite(data, 1, size, f.get()) != size)
    throw io_error("short write on " + path);
  if (std::fflush(f.get()) != 0) throw io_error("flush failed on " + path);
}

PgmImage read_pgm(const std::string& path) {
  const auto d = slurp_file(path);
  std::size_t p = 0;
  if (d.size() < 2 || d[0] != 'P' || d[1] != '5') throw parse_error("pgm: missing P5 magic", 0);
  p = 2;
  PgmImage img;
  img.w = parse_int(d, p, "width");
  img.h = parse_int(d, p, "height");
  const int maxval = parse_int(d, p, "maxval");
  if (img.w <= 0 || img.h <= 0) throw parse_error("pgm: non-positive extent", p);
  if (maxval != 255) throw parse_error("pgm: maxval must be 255", p);
  if (p >= d.size() || !is_ws(d[p])) throw parse_error("pgm: expected separator after maxval", p);
  ++p;
  const std::size_t need = static_cast<std::size_t>(img.w) * static_cast<std::size_t>(img.h);
  if (d.size() - p < need)
    throw parse_error("pgm: truncated pixel data, need " + std::to_string(need) + " bytes", p);
  img.v.assign(d.begin() + static_cast<std::ptrdiff_t>(p),
               d.begin() + static_cast<std::ptrdiff_t>(p + need));
  return img;
}

void write_pgm(const std::string& path, const PgmImage& img) {
  if (img.w <= 0 || img.h <= 0 ||
      img.v.size() != static_cast<std::size_t>(img.w) * static_cast<std::size_t>(img.h))
    throw contract_error("write_pgm: inconsistent image");
  std::string header = "P5\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.v.begin(), img.v.end());
  write_file(path, out.data(), out.size());
}

namespace {

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
               const std::vector<std::uint8_t>& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t type_at = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc =
      crc32(0, out.data() + type_at, static_cast<uInt>(4 + data.size()));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

void write_png_gray8(const std::string& path, int w, int h, const std::uint8_t* data) {
  if (w <= 0 || h <= 0) throw contract_error("write_png_gray8: non-positive extent");
  static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  std::vector<std::uint8_t> out(sig, sig + 8);

  std::vector<std::uint8_t> ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(w));
  put_be32(ihdr, static_cast<std::uint32_t>(h));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // grayscale
  ihdr.push_back(0);  // deflate
  ihdr.push_back(0);  // adaptive filtering
  ihdr.push_back(0);  // no interlace
  put_chunk(out, "IHDR", ihdr);

  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(h) * (static_cast<std::size_t>(w) + 1));
  for (int y = 0; y < h; ++y) {
    raw.push_back(0);  // filter type none
    raw.insert(raw.end(), data + static_cast<std::size_t>(y) * w,
               data + static_cast<std::size_t>(y + 1) * w);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> idat(bound);
  if (compress2(idat.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw io_error("png: deflate failed for " + path);
  idat.resize(bound);
  put_chunk(out, "IDAT", idat);
  put_chunk(out, "IEND", {});
  write_file(path, out.data(), out.size());
}

}  // namespace uanet
