#pragma once

// Central-difference oracle suite: every differentiable op, the PIGM and
// UAFM composites, and a full toy network checked in 64-bit. Shared by the
// `gradcheck` command and the acceptance gate so both run the same cases.

#include <chrono>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "uanet/gradcheck.hpp"
#include "uanet/model.hpp"
#include "uanet/training.hpp"

namespace uanet {

struct GradSuiteEntry {
  std::string name;
  bool ok = false;
  double max_rel_err = 0.0;
  double seconds = 0.0;
  std::string detail;
};

struct GradSuiteResult {
  double tol = 0.0;
  double h = 0.0;
  double total_seconds = 0.0;
  std::vector<GradSuiteEntry> entries;

  bool all_ok() const {
    for (const auto& e : entries)
      if (!e.ok) return false;
    return true;
  }
};

namespace detail {

// Scalarizes a multi-output op with fixed random cotangents so every output
// coordinate feeds the check with a distinct weight.
template <typename F>
auto weigh(F f, std::mt19937_64& rng) {
  Shape out_shape;
  {
    autodiff::NoGradGuard ng;
    out_shape = f().shape();
  }
  Tensor<double> w = Tensor<double>::uniform(out_shape, rng, -1.0, 1.0);
  return [f = std::move(f), w] { return sum(mul(f(), w)); };
}

}  // namespace detail

// Runs every case; never throws on a failed check (the report carries it).
inline GradSuiteResult run_gradcheck_suite(double tol = 1e-4, double h = 1e-5) {
  using Clock = std::chrono::steady_clock;
  using T = Tensor<double>;
  GradSuiteResult res;
  res.tol = tol;
  res.h = h;
  const auto t_suite = Clock::now();

  std::mt19937_64 rng(named_seed(2024, "gradsuite"));
  auto uni = [&rng](Shape s, double lo = -1.0, double hi = 1.0) {
    return T::uniform(std::move(s), rng, lo, hi);
  };

  auto fd_case = [&](const std::string& name, auto f, std::vector<T> inputs) {
    const auto t0 = Clock::now();
    GradSuiteEntry e;
    e.name = name;
    GradCheckReport rep = finite_diff_check<double>(detail::weigh(std::move(f), rng),
                                                    std::move(inputs), h);
    e.ok = rep.ok(tol);
    e.max_rel_err = rep.max_rel_err;
    e.detail = rep.describe();
    e.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    res.entries.push_back(std::move(e));
  };

  // Elementwise and structural ops.
  {
    T a = uni({3, 4}), b = uni({3, 4});
    fd_case("add", [=] { return add(a, b); }, {a, b});
    fd_case("sub", [=] { return sub(a, b); }, {a, b});
    fd_case("mul", [=] { return mul(a, b); }, {a, b});
    fd_case("scale", [=] { return scale(a, 1.7); }, {a});
    T s = uni({1});
    fd_case("mul_scalar", [=] { return mul_scalar(a, s); }, {a, s});
  }
  {
    T x = uni({3, 4, 5});
    T cs = uni({3});
    T sp = uni({1, 4, 5});
    fd_case("mul_channelwise", [=] { return mul_channelwise(x, cs); }, {x, cs});
    fd_case("mul_spatial", [=] { return mul_spatial(x, sp); }, {x, sp});
  }
  {
    T a = uni({3, 4}), b = uni({4, 5});
    fd_case("matmul", [=] { return matmul(a, b); }, {a, b});
    fd_case("transpose2d", [=] { return transpose2d(a); }, {a});
  }
  {
    // Kink at zero: keep probes a safe margin away.
    T x = uni({3, 6});
    for (Eigen::Index i = 0; i < x.numel(); ++i)
      if (std::abs(x.val()[i]) < 0.05) x.val()[i] = x.val()[i] < 0 ? -0.05 : 0.05;
    fd_case("relu", [=] { return relu(x); }, {x});
  }
  {
    T x = uni({3, 5}, -3.0, 3.0);
    fd_case("sigmoid", [=] { return sigmoid(x); }, {x});
    fd_case("softmax axis 0", [=] { return softmax(x, 0); }, {x});
    fd_case("softmax axis 1", [=] { return softmax(x, 1); }, {x});
  }
  {
    T x = uni({2, 3, 4});
    fd_case("reshape", [=] { return reshape(x, {4, 6}); }, {x});
    T a = uni({2, 3, 4}), b = uni({3, 3, 4}), c = uni({2, 2, 4});
    fd_case("concat axis 0", [=] { return concat<double>({a, b}, 0); }, {a, b});
    fd_case("concat axis 1", [=] { return concat<double>({a, c}, 1); }, {a, c});
    fd_case("sum", [=] { return sum(x); }, {x});
    fd_case("mean", [=] { return mean(x); }, {x});
  }
  {
    T x = uni({2, 6, 6});
    T w = uni({3, 2, 3, 3}, -0.5, 0.5);
    T b = uni({3});
    fd_case("conv2d 3x3 pad 1", [=] { return conv2d(x, w, b, 1, 1, 1); }, {x, w, b});
    fd_case("conv2d stride 2", [=] { return conv2d(x, w, b, 2, 1, 1); }, {x, w, b});
    fd_case("conv2d dilation 2", [=] { return conv2d(x, w, b, 1, 2, 2); }, {x, w, b});
    T w1 = uni({4, 2, 1, 1}, -0.5, 0.5);
    T b1 = uni({4});
    fd_case("conv2d 1x1", [=] { return conv2d(x, w1, b1, 1, 0, 1); }, {x, w1, b1});
  }
  {
    // Max ties would flip under the probe; spread values far apart.
    T x = uni({2, 4, 4});
    for (Eigen::Index i = 0; i < x.numel(); ++i)
      x.val()[i] += 0.01 * static_cast<double>(i);
    fd_case("maxpool2d", [=] { return maxpool2d(x, 2); }, {x});
    fd_case("upsample nearest", [=] { return upsample(x, 2, Interp::Nearest); }, {x});
    fd_case("upsample bilinear", [=] { return upsample(x, 2, Interp::Bilinear); }, {x});
  }
  {
    T logits = uni({1, 4, 4}, -2.0, 2.0);
    T hard = T::zeros({1, 4, 4});
    for (Eigen::Index i = 0; i < hard.numel(); ++i) hard.val()[i] = (i % 3 == 0) ? 1.0 : 0.0;
    fd_case("bce_with_logits", [=] { return bce_with_logits(logits, hard); }, {logits});
  }
  {
    // stop_gradient has no finite-difference counterpart; its contract is
    // that the blocked branch contributes exactly nothing. With a live sum
    // alongside, any leak would push the gradient past the exact 1.0.
    const auto t0 = Clock::now();
    GradSuiteEntry e;
    e.name = "stop_gradient blocks flow";
    T x = uni({3, 3});
    x.set_requires_grad(true);
    backward(add(sum(stop_gradient(x)), sum(x)));
    e.ok = x.has_grad() && (x.grad() == 1.0).all();
    e.detail = e.ok ? "blocked branch contributed nothing" : "gradient leaked through";
    e.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    res.entries.push_back(std::move(e));
  }

  // PIGM composite, both stages active with non-trivial scalars.
  {
    T f5 = uni({4, 6, 6});
    T m5 = uni({1, 6, 6}, -2.0, 2.0);
    PigmParams<double> p = PigmParams<double>::init(PigmMode::SpatialChannel);
    p.alpha.val()[0] = 0.37;
    p.beta.val()[0] = -0.21;
    fd_case("pigm spatial+channel", [=] { return pigm_forward(f5, m5, p); },
            {f5, m5, p.alpha, p.beta});
  }

  // UAFM fuse, all four formulations. Rank weights are constants by design,
  // so every case except the sigmoid weighting must leave the prior map
  // without any gradient.
  {
    std::mt19937_64 wrng(named_seed(2024, "gradsuite.uafm"));
    for (int c = 1; c <= 4; ++c) {
      const auto fc = static_cast<FusionCase>(c);
      UafmLevel<double> lvl = make_uafm_level<double>(4, 4, 4, fc, wrng);
      T g = uni({4, 4, 4});
      T f = uni({4, 8, 8});
      T m = uni({1, 4, 4}, -2.0, 2.0);
      std::vector<T> inputs{g, f};
      const bool m_gets_grad = fc == FusionCase::SigmoidWeight;
      if (m_gets_grad) inputs.push_back(m);
      if (lvl.g_mix.w.defined()) {
        inputs.push_back(lvl.g_mix.w);
        inputs.push_back(lvl.g_mix.b);
        inputs.push_back(lvl.f_mix.w);
        inputs.push_back(lvl.f_mix.b);
      }
      inputs.push_back(lvl.fuse.w);
      inputs.push_back(lvl.fuse.b);
      inputs.push_back(lvl.head.w);
      inputs.push_back(lvl.head.b);
      fd_case("uafm fuse case " + std::to_string(c),
              [=] { return uafm_fuse(g, f, m, fc, UraFormula::Prose, lvl).m; }, inputs);
      if (!m_gets_grad) {
        GradSuiteEntry e;
        e.name = "uafm case " + std::to_string(c) + " prior map stays constant";
        e.ok = !m.has_grad();
        e.detail = e.ok ? "no gradient reached the prior map" : "gradient leaked into ranks";
        res.entries.push_back(std::move(e));
      }
    }
  }

  // Full toy network: every parameter probed through the training loss.
  {
    ModelConfig cfg;
    cfg.encoder.stage_channels = {4, 4, 6, 6, 8};
    cfg.encoder.convs_per_stage = 1;
    cfg.encoder.dilation_rates = {1, 2};
    cfg.encoder.head_channels = 4;
    cfg.pigm = PigmMode::SpatialChannel;
    cfg.uafm_enabled = true;
    cfg.fusion = FusionCase::Full;
    cfg.ura = UraFormula::Prose;
    auto model = UanetModel<double>::init(cfg, 99);
    T img = uni({3, 32, 32}, 0.0, 1.0);
    T gt = T::zeros({1, 32, 32});
    std::mt19937_64 grng(named_seed(2024, "gradsuite.gt"));
    for (Eigen::Index i = 0; i < gt.numel(); ++i)
      gt.val()[i] = (grng() & 1u) ? 1.0 : 0.0;
    std::vector<T> inputs;
    for (auto& [name, t] : model.parameters()) {
      (void)name;
      inputs.push_back(t);
    }
    const auto t0 = Clock::now();
    GradSuiteEntry e;
    e.name = "full toy network, all parameters";
    GradCheckReport rep = finite_diff_check<double>(
        [&] { return deep_supervision_loss(model.forward(img).maps, gt).total; }, inputs, h);
    e.ok = rep.ok(tol);
    e.max_rel_err = rep.max_rel_err;
    e.detail = rep.describe();
    e.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    res.entries.push_back(std::move(e));
  }

  res.total_seconds = std::chrono::duration<double>(Clock::now() - t_suite).count();
  return res;
}

inline std::string grad_suite_text(const GradSuiteResult& r) {
  std::string s;
  char buf[256];
  for (const auto& e : r.entries) {
    std::snprintf(buf, sizeof(buf), "%-42s %s  max_rel_err=%.3e  (%.2fs)\n", e.name.c_str(),
                  e.ok ? "ok  " : "FAIL", e.max_rel_err, e.seconds);
    s += buf;
    if (!e.ok) s += "    " + e.detail + "\n";
  }
  std::snprintf(buf, sizeof(buf), "%zu checks, tol %.1e, h %.1e, %.2fs total: %s\n",
                r.entries.size(), r.tol, r.h, r.total_seconds,
                r.all_ok() ? "all ok" : "FAILURES PRESENT");
  s += buf;
  return s;
}

}  // namespace uanet
