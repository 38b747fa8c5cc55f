#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "uanet/baseline.hpp"
#include "uanet/ops.hpp"
#include "uanet/rasterio.hpp"

namespace uanet {

enum class FusionCase { Concat = 1, SigmoidWeight = 2, ForegroundOnly = 3, Full = 4 };

enum class UraFormula { Prose, Floor };

struct IntRaster {
  int h = 0, w = 0;
  std::vector<std::uint8_t> v;  // ranks 0..5, row-major
};

template <typename S>
struct UncertaintyPair {
  Tensor<S> u_f, u_b;  // plain value rasters, no gradient linkage
};

// U_f = sigmoid(M) - 0.5, U_b = -(U_f); exact negation keeps
// U_f + U_b == 0 bitwise.
template <typename S>
UncertaintyPair<S> uncertainty_maps(const Tensor<S>& m) {
  detail::check_rank("uncertainty_maps", m, 3);
  if (m.dim(0) != 1)
    throw shape_error("uncertainty_maps: expected 1-channel logits, got " +
                      shape_str(m.shape()));
  UncertaintyPair<S> u;
  u.u_f = Tensor<S>::empty(m.shape());
  u.u_b = Tensor<S>::empty(m.shape());
  for (std::int64_t i = 0; i < m.numel(); ++i) {
    const S uf = detail::stable_sigmoid(m.val()[i]) - S(0.5);
    u.u_f.val()[i] = uf;
    u.u_b.val()[i] = -uf;
  }
  return u;
}

// Discretizes uncertainty into ranks. Prose buckets: negatives rank 0,
// then [0,0.1)->5, [0.1,0.2)->4, [0.2,0.3)->3, [0.3,0.4)->2, [0.4,0.5]->1.
// Floor is the compatibility variant floor((0.5-U)/0.1), which disagrees
// with the buckets at U=0.05 (4 vs 5) and U=0.45 (0 vs 1).
template <typename S>
IntRaster ura(const Tensor<S>& u, UraFormula formula = UraFormula::Prose) {
  detail::check_rank("ura", u, 3);
  if (u.dim(0) != 1)
    throw shape_error("ura: expected a 1-channel raster, got " + shape_str(u.shape()));
  IntRaster r;
  r.h = u.dim(1);
  r.w = u.dim(2);
  r.v.resize(static_cast<std::size_t>(u.numel()));
  for (std::int64_t i = 0; i < u.numel(); ++i) {
    const double x = static_cast<double>(u.val()[i]);
    if (!(x >= -0.5 && x <= 0.5))
      throw contract_error("ura: value " + std::to_string(x) + " outside [-0.5, 0.5]");
    std::uint8_t rank;
    if (formula == UraFormula::Prose) {
      if (x < 0.0)
        rank = 0;
      else if (x < 0.1)
        rank = 5;
      else if (x < 0.2)
        rank = 4;
      else if (x < 0.3)
        rank = 3;
      else if (x < 0.4)
        rank = 2;
      else
        rank = 1;
    } else {
      rank = x < 0.0 ? 0 : static_cast<std::uint8_t>(std::floor((0.5 - x) / 0.1));
      if (rank > 5) rank = 5;
    }
    r.v[static_cast<std::size_t>(i)] = rank;
  }
  return r;
}

struct RankMaps {
  IntRaster r_f, r_b;
};

template <typename S>
RankMaps rank_maps(const Tensor<S>& m, UraFormula formula = UraFormula::Prose) {
  const auto u = uncertainty_maps(m);
  return {ura(u.u_f, formula), ura(u.u_b, formula)};
}

// Ranks as a multiplicative weight raster; a fresh leaf, so the bucketing
// is a constant in backward.
template <typename S>
Tensor<S> rank_weight(const IntRaster& r) {
  Tensor<S> t = Tensor<S>::empty({1, r.h, r.w});
  for (std::size_t i = 0; i < r.v.size(); ++i)
    t.val()[static_cast<std::int64_t>(i)] = static_cast<S>(r.v[i]);
  return t;
}

// Ranks 0..5 scaled by 51 for 8-bit viewing.
inline PgmImage rank_to_pgm(const IntRaster& r) {
  PgmImage img;
  img.w = r.w;
  img.h = r.h;
  img.v.resize(r.v.size());
  for (std::size_t i = 0; i < r.v.size(); ++i)
    img.v[i] = static_cast<std::uint8_t>(r.v[i] * 51);
  return img;
}

template <typename S>
struct UafmLevel {
  Conv2dLayer<S> g_mix, f_mix;  // 1x1 re-mixers; absent for the concat case
  Conv2dLayer<S> fuse;          // 3x3 on concat(up(Gu), Fu)
  Conv2dLayer<S> head;          // 3x3 to 1-channel logits
};

template <typename S>
UafmLevel<S> make_uafm_level(int cg, int cf, int cout, FusionCase fc, std::mt19937_64& rng) {
  UafmLevel<S> l;
  if (fc == FusionCase::Full) {
    l.g_mix = make_conv<S>(2 * cg, cg, 1, 0, 1, rng);
    l.f_mix = make_conv<S>(2 * cf, cf, 1, 0, 1, rng);
  } else if (fc == FusionCase::SigmoidWeight || fc == FusionCase::ForegroundOnly) {
    l.g_mix = make_conv<S>(cg, cg, 1, 0, 1, rng);
    l.f_mix = make_conv<S>(cf, cf, 1, 0, 1, rng);
  }
  l.fuse = make_conv<S>(cg + cf, cout, 3, 1, 1, rng);
  l.head = make_conv<S>(cout, 1, 3, 1, 1, rng);
  return l;
}

template <typename S>
struct UafmOutputs {
  Tensor<S> g, m;
};

// One fusion step: weight G_i and F_{i-1} by the uncertainty evidence of
// M_i (per the fusion case), then fuse across the 2x resolution gap.
// Rank weights are constants in backward; the sigmoid weighting of case 2
// keeps gradient flow into M_i.
template <typename S>
UafmOutputs<S> uafm_fuse(const Tensor<S>& g_i, const Tensor<S>& f_prev, const Tensor<S>& m_i,
                         FusionCase fc, UraFormula formula, const UafmLevel<S>& p) {
  detail::check_rank("uafm_fuse", g_i, 3);
  detail::check_rank("uafm_fuse", f_prev, 3);
  detail::check_rank("uafm_fuse", m_i, 3);
  if (m_i.dim(0) != 1 || m_i.dim(1) != g_i.dim(1) || m_i.dim(2) != g_i.dim(2))
    throw shape_error("uafm_fuse: logit map " + shape_str(m_i.shape()) +
                      " does not match feature " + shape_str(g_i.shape()));
  if (f_prev.dim(1) != 2 * g_i.dim(1) || f_prev.dim(2) != 2 * g_i.dim(2))
    throw shape_error("uafm_fuse: finer feature " + shape_str(f_prev.shape()) +
                      " must double the extent of " + shape_str(g_i.shape()));

  Tensor<S> gu, fu;
  switch (fc) {
    case FusionCase::Concat:
      gu = g_i;
      fu = f_prev;
      break;
    case FusionCase::SigmoidWeight: {
      Tensor<S> wmap = sigmoid(m_i);
      gu = p.g_mix(mul_spatial(g_i, wmap));
      fu = p.f_mix(mul_spatial(f_prev, upsample(wmap, 2, Interp::Nearest)));
      break;
    }
    case FusionCase::ForegroundOnly: {
      const RankMaps rm = rank_maps(m_i, formula);
      Tensor<S> rf = rank_weight<S>(rm.r_f);
      gu = p.g_mix(mul_spatial(g_i, rf));
      fu = p.f_mix(mul_spatial(f_prev, upsample(rf, 2, Interp::Nearest)));
      break;
    }
    case FusionCase::Full: {
      const RankMaps rm = rank_maps(m_i, formula);
      Tensor<S> rf = rank_weight<S>(rm.r_f);
      Tensor<S> rb = rank_weight<S>(rm.r_b);
      gu = p.g_mix(concat<S>({mul_spatial(g_i, rf), mul_spatial(g_i, rb)}, 0));
      fu = p.f_mix(concat<S>({mul_spatial(f_prev, upsample(rf, 2, Interp::Nearest)),
                              mul_spatial(f_prev, upsample(rb, 2, Interp::Nearest))},
                             0));
      break;
    }
  }
  UafmOutputs<S> out;
  out.g = p.fuse(concat<S>({upsample(gu, 2, Interp::Nearest), fu}, 0));
  out.m = p.head(out.g);
  return out;
}

template <typename S>
struct CascadeResult {
  std::array<Tensor<S>, 5> m;  // m[0] = M5 coarsest ... m[4] = M1 finest
  std::array<Tensor<S>, 4> g;  // g[0] = G4 ... g[3] = G1
};

template <typename S>
CascadeResult<S> cascade(const FeaturePyramid<S>& pyr, const Tensor<S>& g5, FusionCase fc,
                         UraFormula formula, const std::array<UafmLevel<S>, 4>& levels) {
  CascadeResult<S> r;
  r.m[0] = pyr.m5;
  Tensor<S> g = g5;
  for (int step = 0; step < 4; ++step) {
    const auto& f_prev = pyr.f[static_cast<std::size_t>(3 - step)];  // F4, F3, F2, F1
    auto out = uafm_fuse(g, f_prev, r.m[static_cast<std::size_t>(step)], fc, formula,
                         levels[static_cast<std::size_t>(step)]);
    g = out.g;
    r.g[static_cast<std::size_t>(step)] = out.g;
    r.m[static_cast<std::size_t>(step + 1)] = out.m;
  }
  return r;
}

}  // namespace uanet
