#pragma once

// Seeded synthetic building scenes: rotated-rectangle "buildings" on a noisy
// background, plus the two confusion sources the segmenter must learn to
// reject (dark shadow bands next to buildings, building-colored road stripes).
// Also the on-disk dataset layout: tensor containers + PGM masks + manifest.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "uanet/io.hpp"
#include "uanet/rasterio.hpp"
#include "uanet/tensor.hpp"

namespace uanet {

struct SceneSpec {
  int extent = 64;  // H = W, must be divisible by 16 (encoder precondition)
  int min_buildings = 2;
  int max_buildings = 5;
  double min_size = 8.0;  // rectangle side length in pixels
  double max_size = 24.0;
  bool rotate = true;
  double noise = 0.03;  // additive uniform amplitude
  double shadow_prob = 0.5;
  double distractor_prob = 0.7;

  void validate() const {
    if (extent <= 0 || extent % 16 != 0)
      throw param_error("scene: extent must be positive and divisible by 16, got " +
                        std::to_string(extent));
    if (min_buildings < 0 || max_buildings < min_buildings)
      throw param_error("scene: building count range [" + std::to_string(min_buildings) +
                        "," + std::to_string(max_buildings) + "] is empty");
    if (!(min_size > 0.0) || max_size < min_size)
      throw param_error("scene: size range is empty or non-positive");
    if (noise < 0.0) throw param_error("scene: noise amplitude must be >= 0");
    if (shadow_prob < 0.0 || shadow_prob > 1.0 || distractor_prob < 0.0 ||
        distractor_prob > 1.0)
      throw param_error("scene: probabilities must lie in [0,1]");
  }
};

// Rectangle with center (cx,cy), half extents (hw,hh), rotated by the angle
// whose cosine/sine are (ca,sa). Pixel ownership: the pixel center mapped to
// the rect frame must satisfy u in [-hw,hw) and v in [-hh,hh).
struct RotatedRect {
  double cx = 0, cy = 0;
  double hw = 0, hh = 0;
  double ca = 1, sa = 0;

  bool contains(double x, double y) const {
    const double dx = x - cx;
    const double dy = y - cy;
    const double u = dx * ca + dy * sa;
    const double v = -dx * sa + dy * ca;
    return u >= -hw && u < hw && v >= -hh && v < hh;
  }

  // Corner polygon in paint order (counterclockwise in the rect frame).
  std::array<std::pair<double, double>, 4> corners() const {
    std::array<std::pair<double, double>, 4> out;
    const double us[4] = {-hw, hw, hw, -hw};
    const double vs[4] = {-hh, -hh, hh, hh};
    for (int i = 0; i < 4; ++i) {
      out[static_cast<std::size_t>(i)] = {cx + us[i] * ca - vs[i] * sa,
                                          cy + us[i] * sa + vs[i] * ca};
    }
    return out;
  }
};

template <typename S>
struct Scene {
  Tensor<S> image;  // 3xHxW, values in [0,1]
  Tensor<S> mask;   // 1xHxW, strictly binary
  std::vector<RotatedRect> buildings;
};

namespace detail {

// All stochastic choices draw doubles from one stream in a fixed order, so a
// scene is a pure function of (spec, seed).
inline double unit(std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double in_range(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * unit(rng);
}

template <typename S>
void paint_rect(Tensor<S>& image, const RotatedRect& r, const double color[3],
                double blend) {
  const int h = image.dim(1);
  const int w = image.dim(2);
  ArrayX<S>& img = image.val();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!r.contains(x + 0.5, y + 0.5)) continue;
      for (int c = 0; c < 3; ++c) {
        const std::int64_t at = (static_cast<std::int64_t>(c) * h + y) * w + x;
        const double old = static_cast<double>(img[at]);
        img[at] = static_cast<S>(old * (1.0 - blend) + color[c] * blend);
      }
    }
  }
}

}  // namespace detail

template <typename S>
Scene<S> generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  const int n = spec.extent;
  std::mt19937_64 rng(seed);

  Scene<S> out;
  out.image = Tensor<S>::zeros({3, n, n});
  out.mask = Tensor<S>::zeros({1, n, n});

  // Background: flat muted color.
  double bg[3];
  for (double& c : bg) c = detail::in_range(rng, 0.25, 0.50);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < n * n; ++i)
      out.image.val()[static_cast<std::int64_t>(c) * n * n + i] = static_cast<S>(bg[c]);

  // Building geometry and colors are drawn before anything is painted so the
  // shadow pass (which paints underneath) can reference them.
  const int span = spec.max_buildings - spec.min_buildings + 1;
  const int count =
      spec.min_buildings +
      std::min(span - 1, static_cast<int>(detail::unit(rng) * span));
  std::vector<std::array<double, 3>> colors;
  for (int b = 0; b < count; ++b) {
    RotatedRect r;
    const double margin = spec.max_size * 0.5;
    r.cx = detail::in_range(rng, margin, n - margin);
    r.cy = detail::in_range(rng, margin, n - margin);
    r.hw = 0.5 * detail::in_range(rng, spec.min_size, spec.max_size);
    r.hh = 0.5 * detail::in_range(rng, spec.min_size, spec.max_size);
    const double ang = spec.rotate ? detail::in_range(rng, 0.0, 1.5707963267948966) : 0.0;
    r.ca = std::cos(ang);
    r.sa = std::sin(ang);
    out.buildings.push_back(r);
    std::array<double, 3> col;
    const double base = detail::in_range(rng, 0.60, 0.92);
    for (double& ch : col) ch = base + detail::in_range(rng, -0.08, 0.08);
    colors.push_back(col);
  }

  // Road-like stripe distractors: long thin rects in the building palette,
  // absent from the mask.
  if (detail::unit(rng) < spec.distractor_prob) {
    const int stripes = 1 + static_cast<int>(detail::unit(rng) * 2.0);
    for (int s = 0; s < stripes; ++s) {
      RotatedRect r;
      r.cx = detail::in_range(rng, 0.0, n);
      r.cy = detail::in_range(rng, 0.0, n);
      r.hw = 0.5 * detail::in_range(rng, 1.4 * n, 2.0 * n);
      r.hh = 0.5 * detail::in_range(rng, 2.0, 5.0);
      const double ang = detail::in_range(rng, 0.0, 3.141592653589793);
      r.ca = std::cos(ang);
      r.sa = std::sin(ang);
      double col[3];
      const double base = detail::in_range(rng, 0.60, 0.92);
      for (double& ch : col) ch = base + detail::in_range(rng, -0.08, 0.08);
      detail::paint_rect(out.image, r, col, 1.0);
    }
  }

  // Shadows: darkened band of the building's own footprint, offset toward the
  // lower right, painted before the building so the roof stays clean.
  for (int b = 0; b < count; ++b) {
    if (detail::unit(rng) >= spec.shadow_prob) continue;
    RotatedRect s = out.buildings[static_cast<std::size_t>(b)];
    const double off = 0.35 * (s.hw + s.hh);
    s.cx += off;
    s.cy += off;
    const double dark[3] = {0.08, 0.08, 0.10};
    detail::paint_rect(out.image, s, dark, 0.75);
  }

  // Buildings: paint roof color and set the mask with the same ownership rule.
  for (int b = 0; b < count; ++b) {
    const RotatedRect& r = out.buildings[static_cast<std::size_t>(b)];
    const std::array<double, 3>& col = colors[static_cast<std::size_t>(b)];
    detail::paint_rect(out.image, r, col.data(), 1.0);
    ArrayX<S>& m = out.mask.val();
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        if (r.contains(x + 0.5, y + 0.5)) m[static_cast<std::int64_t>(y) * n + x] = S(1);
  }

  // Texture noise, then clamp to [0,1].
  ArrayX<S>& img = out.image.val();
  for (std::int64_t i = 0; i < out.image.numel(); ++i) {
    const double v =
        static_cast<double>(img[i]) + detail::in_range(rng, -spec.noise, spec.noise);
    img[i] = static_cast<S>(std::min(1.0, std::max(0.0, v)));
  }
  return out;
}

inline std::uint64_t scene_seed(std::uint64_t base_seed, int index) {
  return named_seed(base_seed, "scene" + std::to_string(index));
}

// On-disk dataset: images/NNNN.uatn (3xHxW f32 container), masks/NNNN.pgm
// (255 = building), manifest.txt lines "<image> <mask> <seed>" with paths
// relative to the manifest's directory.
struct ManifestEntry {
  std::string image_path;
  std::string mask_path;
  std::uint64_t seed = 0;
};

// Scenes are pure functions of (spec, seed), so generation shards across
// `threads` workers by index with bit-identical results at any worker count.
// Files and the manifest are written sequentially in index order.
inline std::string write_dataset(const std::string& dir, const SceneSpec& spec, int count,
                                 std::uint64_t base_seed, int threads = 1) {
  if (count <= 0) throw param_error("dataset: count must be positive");
  if (threads < 1) throw param_error("dataset: threads must be >= 1");
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");

  std::vector<Scene<float>> scenes(static_cast<std::size_t>(count));
  auto shard = [&](int first) {
    for (int i = first; i < count; i += threads)
      scenes[static_cast<std::size_t>(i)] = generate_scene<float>(spec, scene_seed(base_seed, i));
  };
  if (threads == 1) {
    shard(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(shard, t);
    for (auto& th : pool) th.join();
  }

  std::string manifest;
  for (int i = 0; i < count; ++i) {
    const Scene<float>& sc = scenes[static_cast<std::size_t>(i)];
    char img_rel[64];
    char mask_rel[64];
    std::snprintf(img_rel, sizeof img_rel, "images/%04d.uatn", i);
    std::snprintf(mask_rel, sizeof mask_rel, "masks/%04d.pgm", i);
    write_tensor<float>((fs::path(dir) / img_rel).string(), sc.image);
    PgmImage pgm;
    pgm.w = spec.extent;
    pgm.h = spec.extent;
    pgm.v.resize(static_cast<std::size_t>(spec.extent) * spec.extent);
    for (std::size_t p = 0; p < pgm.v.size(); ++p)
      pgm.v[p] = sc.mask.val()[static_cast<Eigen::Index>(p)] >= 0.5f ? 255 : 0;
    write_pgm((fs::path(dir) / mask_rel).string(), pgm);
    manifest += std::string(img_rel) + " " + mask_rel + " " +
                std::to_string(scene_seed(base_seed, i)) + "\n";
  }
  const std::string manifest_path = (fs::path(dir) / "manifest.txt").string();
  write_file(manifest_path, reinterpret_cast<const std::uint8_t*>(manifest.data()),
             manifest.size());
  return manifest_path;
}

inline std::vector<ManifestEntry> read_manifest(const std::string& manifest_path) {
  const std::vector<std::uint8_t> raw = slurp_file(manifest_path);
  const std::string text(raw.begin(), raw.end());
  std::vector<ManifestEntry> out;
  std::size_t pos = 0;
  int lineno = 0;
  while (pos < text.size()) {
    const std::size_t line_start = pos;
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    ++lineno;
    if (line.empty()) continue;
    ManifestEntry e;
    char img[512];
    char mask[512];
    unsigned long long seed = 0;
    if (std::sscanf(line.c_str(), "%511s %511s %llu", img, mask, &seed) != 3)
      throw parse_error("manifest: line " + std::to_string(lineno) +
                            " is not '<image> <mask> <seed>'",
                        line_start);
    e.image_path = img;
    e.mask_path = mask;
    e.seed = seed;
    out.push_back(e);
  }
  return out;
}

template <typename S>
std::vector<Scene<S>> load_dataset(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  const fs::path root = fs::path(manifest_path).parent_path();
  std::vector<Scene<S>> out;
  for (const ManifestEntry& e : read_manifest(manifest_path)) {
    Scene<S> sc;
    sc.image = read_tensor<S>((root / e.image_path).string());
    if (sc.image.rank() != 3 || sc.image.dim(0) != 3)
      throw io_error("dataset: image " + e.image_path + " is not 3xHxW, got " +
                     shape_str(sc.image.shape()));
    const PgmImage pgm = read_pgm((root / e.mask_path).string());
    if (pgm.h != sc.image.dim(1) || pgm.w != sc.image.dim(2))
      throw io_error("dataset: mask " + e.mask_path + " extent mismatch with image");
    sc.mask = Tensor<S>::zeros({1, pgm.h, pgm.w});
    for (std::size_t p = 0; p < pgm.v.size(); ++p)
      sc.mask.val()[static_cast<Eigen::Index>(p)] = pgm.v[p] >= 128 ? S(1) : S(0);
    out.push_back(std::move(sc));
  }
  return out;
}

}  // namespace uanet
