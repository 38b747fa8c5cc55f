#pragma once

// Full UANet assembly: baseline encoder/decoder, optional prior guide on the
// deepest stage, optional uncertainty-aware fusion cascade. Also owns the
// parameter registry used by the optimizer and by checkpoint archives.

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "uanet/baseline.hpp"
#include "uanet/io.hpp"
#include "uanet/pigm.hpp"
#include "uanet/uafm.hpp"

namespace uanet {

struct ModelConfig {
  EncoderConfig encoder;
  PigmMode pigm = PigmMode::SpatialChannel;
  bool uafm_enabled = true;
  FusionCase fusion = FusionCase::Full;
  UraFormula ura = UraFormula::Prose;

  void validate() const { encoder.validate(); }
};

// Forward products. `maps` runs coarse to fine: M5 first, M1 last when the
// cascade is enabled; just M5 when it is not.
template <typename S>
struct ModelForward {
  FeaturePyramid<S> pyramid;
  Tensor<S> g5;
  std::vector<Tensor<S>> maps;

  const Tensor<S>& finest() const { return maps.back(); }

  // level runs 5 (coarsest) down to 1 (finest).
  const Tensor<S>& map(int level) const {
    if (level < 1 || level > 5)
      throw param_error("map: level must be in [1,5], got " + std::to_string(level));
    const int idx = 5 - level;
    if (idx >= static_cast<int>(maps.size()))
      throw param_error("map: level " + std::to_string(level) +
                        " not produced (cascade disabled)");
    return maps[static_cast<std::size_t>(idx)];
  }
};

template <typename S>
class UanetModel {
 public:
  ModelConfig cfg;
  BaselineNet<S> base;
  PigmParams<S> pigm;
  std::array<UafmLevel<S>, 4> uafm{};

  // Weight initialization draws from a single stream in fixed order:
  // baseline first, then the fusion mixers. PIGM adds only zero-initialized
  // scalars, so enabling or disabling it never shifts the other weights.
  static UanetModel init(const ModelConfig& cfg, std::uint64_t init_seed) {
    cfg.validate();
    UanetModel m;
    m.cfg = cfg;
    std::mt19937_64 rng(named_seed(init_seed, "init"));
    m.base = BaselineNet<S>::init(cfg.encoder, rng);
    m.pigm = PigmParams<S>::init(cfg.pigm);
    if (cfg.uafm_enabled) {
      const int hc = cfg.encoder.head_channels;
      for (int i = 0; i < 4; ++i)
        m.uafm[static_cast<std::size_t>(i)] =
            make_uafm_level<S>(hc, hc, hc, cfg.fusion, rng);
    }
    return m;
  }

  ModelForward<S> forward(const Tensor<S>& image) const {
    ModelForward<S> out;
    out.pyramid = base.forward(image);
    out.g5 = pigm_forward(out.pyramid.f[4], out.pyramid.m5, pigm);
    if (cfg.uafm_enabled) {
      CascadeResult<S> casc = cascade(out.pyramid, out.g5, cfg.fusion, cfg.ura, uafm);
      out.maps.assign(casc.m.begin(), casc.m.end());
    } else {
      out.maps = {out.pyramid.m5};
    }
    return out;
  }

  // Registry order is the serialization order and the optimizer-slot order.
  // With the cascade disabled the supervised output is M5 alone, so only the
  // M5 path is registered; the finer FPN branches and the prior guide (whose
  // product G5 then feeds nothing) would never receive gradients.
  std::vector<std::pair<std::string, Tensor<S>>> parameters() const {
    std::vector<std::pair<std::string, Tensor<S>>> out;
    base.visit_params(
        [&out](const std::string& name, const Tensor<S>& t) {
          out.emplace_back(name, t);
        },
        !cfg.uafm_enabled);
    if (!cfg.uafm_enabled) return out;
    if (pigm.mode == PigmMode::SpatialOnly || pigm.mode == PigmMode::SpatialChannel)
      out.emplace_back("pigm.alpha", pigm.alpha);
    if (pigm.mode == PigmMode::ChannelOnly || pigm.mode == PigmMode::SpatialChannel)
      out.emplace_back("pigm.beta", pigm.beta);
    for (int i = 0; i < 4; ++i) {
      const UafmLevel<S>& lvl = uafm[static_cast<std::size_t>(i)];
      const std::string p = "uafm.lvl" + std::to_string(4 - i) + ".";
      if (lvl.g_mix.w.defined()) {
        out.emplace_back(p + "g_mix.w", lvl.g_mix.w);
        out.emplace_back(p + "g_mix.b", lvl.g_mix.b);
      }
      if (lvl.f_mix.w.defined()) {
        out.emplace_back(p + "f_mix.w", lvl.f_mix.w);
        out.emplace_back(p + "f_mix.b", lvl.f_mix.b);
      }
      out.emplace_back(p + "fuse.w", lvl.fuse.w);
      out.emplace_back(p + "fuse.b", lvl.fuse.b);
      out.emplace_back(p + "head.w", lvl.head.w);
      out.emplace_back(p + "head.b", lvl.head.b);
    }
    return out;
  }

  void zero_grads() const {
    for (auto& [name, t] : parameters()) {
      (void)name;
      t.zero_grad();
    }
  }

  void save(const std::string& path) const {
    std::vector<std::pair<std::string, Tensor<S>>> entries = parameters();
    write_archive<S>(path, entries);
  }

  // Strict load: the archive must carry exactly this model's parameter set,
  // same names, same order, same extents.
  void load(const std::string& path) {
    std::vector<std::pair<std::string, Tensor<S>>> stored = read_archive<S>(path);
    std::vector<std::pair<std::string, Tensor<S>>> params = parameters();
    if (stored.size() != params.size())
      throw io_error("load: archive has " + std::to_string(stored.size()) +
                     " entries, model expects " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (stored[i].first != params[i].first)
        throw io_error("load: entry " + std::to_string(i) + " is '" +
                       stored[i].first + "', expected '" + params[i].first + "'");
      if (stored[i].second.shape() != params[i].second.shape())
        throw io_error("load: '" + params[i].first + "' extent mismatch " +
                       shape_str(stored[i].second.shape()) + " vs " +
                       shape_str(params[i].second.shape()));
      params[i].second.val() = stored[i].second.val();
    }
  }
};

}  // namespace uanet
