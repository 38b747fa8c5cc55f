#pragma once

#include <array>
#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "uanet/ops.hpp"

namespace uanet {

struct EncoderConfig {
  std::array<int, 5> stage_channels{8, 16, 32, 64, 64};
  int convs_per_stage = 1;
  std::vector<int> dilation_rates{1, 2, 4};
  int head_channels = 8;

  void validate() const {
    for (int c : stage_channels)
      if (c <= 0) throw param_error("encoder: stage channels must be positive");
    if (convs_per_stage < 1) throw param_error("encoder: convs_per_stage must be >= 1");
    if (dilation_rates.empty()) throw param_error("encoder: dilation_rates must be non-empty");
    for (int r : dilation_rates)
      if (r < 1) throw param_error("encoder: dilation rates must be >= 1");
    if (head_channels <= 0) throw param_error("encoder: head_channels must be positive");
  }
};

template <typename S>
struct Conv2dLayer {
  Tensor<S> w, b;
  int stride = 1, padding = 0, dilation = 1;

  Tensor<S> operator()(const Tensor<S>& x) const {
    return conv2d(x, w, b, stride, padding, dilation);
  }
  int in_channels() const { return w.dim(1); }
  int out_channels() const { return w.dim(0); }
};

// Fan-in scaled uniform weights, zero biases.
template <typename S>
Conv2dLayer<S> make_conv(int cin, int cout, int k, int padding, int dilation,
                         std::mt19937_64& rng) {
  Conv2dLayer<S> l;
  const double bound = std::sqrt(6.0 / (static_cast<double>(cin) * k * k));
  l.w = Tensor<S>::uniform({cout, cin, k, k}, rng, -bound, bound);
  l.w.set_requires_grad(true);
  l.b = Tensor<S>::zeros({cout});
  l.b.set_requires_grad(true);
  l.padding = padding;
  l.dilation = dilation;
  return l;
}

// Parallel dilated 3x3 branches (padding = rate keeps extent), channel
// concat, 1x1 merge back to the input width, residual add.
template <typename S>
struct DilationBlock {
  std::vector<Conv2dLayer<S>> branches;
  Conv2dLayer<S> merge;

  Tensor<S> operator()(const Tensor<S>& x) const {
    std::vector<Tensor<S>> outs;
    outs.reserve(branches.size());
    for (const auto& br : branches) outs.push_back(br(x));
    return add(merge(concat(outs, 0)), x);
  }
};

// f[i] holds F_{i+1}; extents halve level by level, F1 at full resolution.
template <typename S>
struct FeaturePyramid {
  std::array<Tensor<S>, 5> f;
  Tensor<S> m5;  // 1-channel logits at F5's extent
};

template <typename S>
class BaselineNet {
 public:
  EncoderConfig cfg;
  std::array<std::vector<Conv2dLayer<S>>, 5> stages;
  std::array<DilationBlock<S>, 4> blocks;  // enhance E2..E5
  std::array<Conv2dLayer<S>, 5> lateral;
  std::array<Conv2dLayer<S>, 5> smooth;
  Conv2dLayer<S> m5_head;

  static BaselineNet init(const EncoderConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    BaselineNet net;
    net.cfg = cfg;
    for (int s = 0; s < 5; ++s) {
      int cin = s == 0 ? 3 : cfg.stage_channels[static_cast<std::size_t>(s - 1)];
      const int cout = cfg.stage_channels[static_cast<std::size_t>(s)];
      for (int k = 0; k < cfg.convs_per_stage; ++k) {
        net.stages[static_cast<std::size_t>(s)].push_back(
            make_conv<S>(k == 0 ? cin : cout, cout, 3, 1, 1, rng));
      }
    }
    for (int i = 0; i < 4; ++i) {
      const int c = cfg.stage_channels[static_cast<std::size_t>(i + 1)];
      auto& blk = net.blocks[static_cast<std::size_t>(i)];
      for (int rate : cfg.dilation_rates)
        blk.branches.push_back(make_conv<S>(c, c, 3, rate, rate, rng));
      blk.merge =
          make_conv<S>(c * static_cast<int>(cfg.dilation_rates.size()), c, 1, 0, 1, rng);
    }
    for (int i = 0; i < 5; ++i) {
      net.lateral[static_cast<std::size_t>(i)] = make_conv<S>(
          cfg.stage_channels[static_cast<std::size_t>(i)], cfg.head_channels, 1, 0, 1, rng);
      net.smooth[static_cast<std::size_t>(i)] =
          make_conv<S>(cfg.head_channels, cfg.head_channels, 3, 1, 1, rng);
    }
    net.m5_head = make_conv<S>(cfg.head_channels, 1, 3, 1, 1, rng);
    return net;
  }

  // Five stages of (conv3x3 + relu) x convs_per_stage; stages 2..5 begin
  // with a 2x2 max pool, so E_i sits at H/2^(i-1).
  std::array<Tensor<S>, 5> encode(const Tensor<S>& image) const {
    detail::check_rank("encode", image, 3);
    if (image.dim(0) != 3)
      throw shape_error("encode: expected a 3-channel image, got " + shape_str(image.shape()));
    if (image.dim(1) % 16 != 0 || image.dim(2) % 16 != 0)
      throw shape_error("encode: extents of " + shape_str(image.shape()) +
                        " must be divisible by 16");
    std::array<Tensor<S>, 5> e;
    Tensor<S> x = image;
    for (int s = 0; s < 5; ++s) {
      if (s > 0) x = maxpool2d(x, 2);
      for (const auto& conv : stages[static_cast<std::size_t>(s)]) x = relu(conv(x));
      e[static_cast<std::size_t>(s)] = x;
    }
    return e;
  }

  std::array<Tensor<S>, 5> enhance(std::array<Tensor<S>, 5> e) const {
    for (int i = 1; i < 5; ++i)
      e[static_cast<std::size_t>(i)] =
          blocks[static_cast<std::size_t>(i - 1)](e[static_cast<std::size_t>(i)]);
    return e;
  }

  // Lateral 1x1 to head width, additive top-down merge via nearest x2
  // upsampling, 3x3 smoothing per level; M5 from a 3x3 head on F5.
  FeaturePyramid<S> fpn_decode(const std::array<Tensor<S>, 5>& e) const {
    std::array<Tensor<S>, 5> td;
    td[4] = lateral[4](e[4]);
    for (int i = 3; i >= 0; --i)
      td[static_cast<std::size_t>(i)] =
          add(lateral[static_cast<std::size_t>(i)](e[static_cast<std::size_t>(i)]),
              upsample(td[static_cast<std::size_t>(i + 1)], 2, Interp::Nearest));
    FeaturePyramid<S> p;
    for (int i = 0; i < 5; ++i)
      p.f[static_cast<std::size_t>(i)] =
          smooth[static_cast<std::size_t>(i)](td[static_cast<std::size_t>(i)]);
    p.m5 = m5_head(p.f[4]);
    return p;
  }

  FeaturePyramid<S> forward(const Tensor<S>& image) const {
    return fpn_decode(enhance(encode(image)));
  }

  // With m5_path_only, visits just the parameters M5 depends on: all stages,
  // the E5 dilation block, and the level-5 FPN convs. The blocks enhancing
  // E2..E4 and the lateral/smooth convs of levels 1..4 only feed F1..F4,
  // which are dead ends when nothing consumes the finer pyramid levels.
  template <typename Fn>
  void visit_params(Fn&& fn, bool m5_path_only = false) const {
    for (int s = 0; s < 5; ++s) {
      const auto& convs = stages[static_cast<std::size_t>(s)];
      for (std::size_t k = 0; k < convs.size(); ++k) {
        const std::string base =
            "enc.stage" + std::to_string(s + 1) + ".conv" + std::to_string(k);
        fn(base + ".w", convs[k].w);
        fn(base + ".b", convs[k].b);
      }
    }
    for (int i = m5_path_only ? 3 : 0; i < 4; ++i) {
      const auto& blk = blocks[static_cast<std::size_t>(i)];
      const std::string base = "enc.block" + std::to_string(i + 2);
      for (std::size_t r = 0; r < blk.branches.size(); ++r) {
        fn(base + ".branch" + std::to_string(r) + ".w", blk.branches[r].w);
        fn(base + ".branch" + std::to_string(r) + ".b", blk.branches[r].b);
      }
      fn(base + ".merge.w", blk.merge.w);
      fn(base + ".merge.b", blk.merge.b);
    }
    for (int i = m5_path_only ? 4 : 0; i < 5; ++i) {
      const std::string lv = std::to_string(i + 1);
      fn("fpn.lateral" + lv + ".w", lateral[static_cast<std::size_t>(i)].w);
      fn("fpn.lateral" + lv + ".b", lateral[static_cast<std::size_t>(i)].b);
      fn("fpn.smooth" + lv + ".w", smooth[static_cast<std::size_t>(i)].w);
      fn("fpn.smooth" + lv + ".b", smooth[static_cast<std::size_t>(i)].b);
    }
    fn("fpn.m5_head.w", m5_head.w);
    fn("fpn.m5_head.b", m5_head.b);
  }
};

}  // namespace uanet
