#pragma once

// Deep-supervision loss, AdamW with a cosine learning-rate schedule, and the
// seeded training loop.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "uanet/metrics.hpp"
#include "uanet/model.hpp"
#include "uanet/ops.hpp"
#include "uanet/scene.hpp"

namespace uanet {

// Sum of BCE-with-logits over all prediction maps, each bilinearly upsampled
// to the ground-truth extent first. Terms are unweighted.
template <typename S>
struct SupervisedLoss {
  Tensor<S> total;
  std::vector<double> per_level;  // aligned with `maps` (coarse to fine)
};

template <typename S>
SupervisedLoss<S> deep_supervision_loss(const std::vector<Tensor<S>>& maps,
                                        const Tensor<S>& gt) {
  if (maps.empty()) throw contract_error("loss: no prediction maps");
  if (gt.rank() != 3 || gt.dim(0) != 1)
    throw shape_error("loss: ground truth must be 1xHxW, got " + shape_str(gt.shape()));
  SupervisedLoss<S> out;
  Tensor<S> total;
  for (const Tensor<S>& m : maps) {
    if (m.rank() != 3 || m.dim(0) != 1)
      throw shape_error("loss: prediction must be 1xHxW, got " + shape_str(m.shape()));
    const int fh = gt.dim(1) / m.dim(1);
    const int fw = gt.dim(2) / m.dim(2);
    if (fh < 1 || fw < 1 || fh != fw || m.dim(1) * fh != gt.dim(1) ||
        m.dim(2) * fw != gt.dim(2))
      throw shape_error("loss: prediction extent " + shape_str(m.shape()) +
                        " does not upsample to ground truth " + shape_str(gt.shape()));
    const Tensor<S> up = fh == 1 ? m : upsample(m, fh, Interp::Bilinear);
    Tensor<S> term = bce_with_logits(up, gt);
    out.per_level.push_back(static_cast<double>(term.item()));
    total = total.defined() ? add(total, term) : term;
  }
  out.total = total;
  return out;
}

struct OptimConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long steps = 500;
  int batch_size = 4;

  void validate() const {
    if (!(lr > 0.0)) throw param_error("optim: lr must be positive");
    if (weight_decay < 0.0) throw param_error("optim: weight_decay must be >= 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
      throw param_error("optim: betas must lie in [0,1)");
    if (!(eps > 0.0)) throw param_error("optim: eps must be positive");
    if (steps <= 0) throw param_error("optim: steps must be positive");
    if (batch_size <= 0) throw param_error("optim: batch_size must be positive");
  }
};

// AdamW: bias-corrected moments, decoupled weight decay, cosine-scaled lr.
template <typename S>
class AdamW {
 public:
  AdamW(OptimConfig cfg, long total_steps) : cfg_(cfg), total_(total_steps) {
    cfg_.validate();
    if (total_ <= 0) throw param_error("adamw: total_steps must be positive");
  }

  // 1.0 at step 0, 0.0 at total_steps.
  double cosine_factor(long step) const {
    const double r =
        std::min(1.0, static_cast<double>(step) / static_cast<double>(total_));
    return 0.5 * (1.0 + std::cos(std::numbers::pi * r));
  }

  double lr_at(long step) const { return cfg_.lr * cosine_factor(step); }
  long step_count() const { return t_; }

  void step(const std::vector<std::pair<std::string, Tensor<S>>>& params) {
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = ArrayX<S>::Zero(params[i].second.numel());
        v_[i] = ArrayX<S>::Zero(params[i].second.numel());
      }
    }
    if (m_.size() != params.size())
      throw contract_error("adamw: parameter set changed between steps");
    const double lr_now = lr_at(t_);
    ++t_;
    const S bc1 = static_cast<S>(1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
    const S bc2 = static_cast<S>(1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
    const S b1 = static_cast<S>(cfg_.beta1);
    const S b2 = static_cast<S>(cfg_.beta2);
    const S eps = static_cast<S>(cfg_.eps);
    const S lr = static_cast<S>(lr_now);
    const S decay = static_cast<S>(lr_now * cfg_.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<S> p = params[i].second;  // shared handle, cheap copy
      if (!p.has_grad())
        throw contract_error("adamw: parameter '" + params[i].first +
                             "' has no gradient; run backward first");
      const ArrayX<S>& g = p.node().grad;
      if (m_[i].size() != g.size())
        throw contract_error("adamw: moment extent mismatch for '" + params[i].first + "'");
      m_[i] = b1 * m_[i] + (S(1) - b1) * g;
      v_[i] = b2 * v_[i] + (S(1) - b2) * g * g;
      ArrayX<S>& w = p.val();
      w -= lr * ((m_[i] / bc1) / ((v_[i] / bc2).sqrt() + eps)) + decay * w;
    }
  }

 private:
  OptimConfig cfg_;
  long total_ = 0;
  long t_ = 0;
  std::vector<ArrayX<S>> m_;
  std::vector<ArrayX<S>> v_;
};

// Raised when the loss stops being finite. Carries the failing step and the
// last checkpoint written before the poison appeared (empty if none).
class train_abort : public std::runtime_error {
 public:
  train_abort(long step, std::string last_good, const std::string& what)
      : std::runtime_error(what), step(step), last_good_checkpoint(std::move(last_good)) {}
  long step;
  std::string last_good_checkpoint;
};

struct TrainOptions {
  OptimConfig optim;
  bool augment_flips = true;
  std::string out_dir;         // when set: loss.csv + checkpoint.uatn.ar are written
  long checkpoint_every = 0;   // 0: checkpoint only after the final step
};

struct TrainLogRow {
  long step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::vector<double> per_level;  // coarse to fine
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  std::string checkpoint_path;  // empty when out_dir was empty
  std::string loss_csv_path;
};

namespace detail {

inline std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf);
}

inline std::string loss_csv_text(const std::vector<TrainLogRow>& log, std::size_t levels) {
  std::string out = "step,lr,loss";
  for (std::size_t i = 0; i < levels; ++i) out += ",bce_m" + std::to_string(5 - i);
  out += "\n";
  for (const TrainLogRow& r : log) {
    out += std::to_string(r.step) + "," + g17(r.lr) + "," + g17(r.loss);
    for (double v : r.per_level) out += "," + g17(v);
    out += "\n";
  }
  return out;
}

}  // namespace detail

// Seeded loop: sample batch -> optional flips -> forward -> loss -> backward
// -> AdamW. Gradients average over the batch. Single-threaded and
// deterministic: batch order and flip draws depend only on (seed, step).
// `after_step` runs after each optimizer step (test hook; may mutate weights).
template <typename S>
TrainResult train(UanetModel<S>& model, const std::vector<Scene<S>>& scenes,
                  const TrainOptions& opts, std::uint64_t seed,
                  const std::function<void(long, UanetModel<S>&)>& after_step = {}) {
  if (scenes.empty()) throw param_error("train: dataset is empty");
  opts.optim.validate();
  namespace fs = std::filesystem;

  const std::vector<std::pair<std::string, Tensor<S>>> params = model.parameters();
  AdamW<S> opt(opts.optim, opts.optim.steps);
  std::mt19937_64 rng_batch(named_seed(seed, "batch"));
  std::mt19937_64 rng_aug(named_seed(seed, "augment"));
  // Scan op outputs for NaN during training so a poisoned step aborts at the
  // op that produced it instead of tripping a downstream input check.
  autodiff::NanCheckGuard nan_guard(true);

  TrainResult res;
  const std::size_t levels = model.cfg.uafm_enabled ? 5 : 1;
  std::string checkpoint;
  if (!opts.out_dir.empty()) {
    fs::create_directories(opts.out_dir);
    checkpoint = (fs::path(opts.out_dir) / "checkpoint.uatn.ar").string();
  }
  // A checkpoint already present in out_dir (a previous run) counts as the
  // last-good fallback until this run writes its own.
  std::string last_good =
      (!checkpoint.empty() && fs::exists(checkpoint)) ? checkpoint : std::string();

  for (long step = 0; step < opts.optim.steps; ++step) {
    for (const auto& [name, t] : params) {
      (void)name;
      Tensor<S>(t).zero_grad();  // shared handle, cheap copy
    }
    TrainLogRow row;
    row.step = step;
    row.lr = opt.lr_at(step);
    row.per_level.assign(levels, 0.0);
    bool poisoned = false;

    for (int b = 0; b < opts.optim.batch_size; ++b) {
      const std::size_t pick = static_cast<std::size_t>(
          std::uniform_int_distribution<std::uint64_t>(0, scenes.size() - 1)(rng_batch));
      Tensor<S> img = scenes[pick].image;
      Tensor<S> gt = scenes[pick].mask;
      if (opts.augment_flips) {
        const bool fh = detail::unit(rng_aug) < 0.5;
        const bool fv = detail::unit(rng_aug) < 0.5;
        if (fh || fv) {
          img = flip_hv(img, fh, fv);
          gt = flip_hv(gt, fh, fv);
        }
      }
      try {
        ModelForward<S> fwd = model.forward(img);
        SupervisedLoss<S> loss = deep_supervision_loss(fwd.maps, gt);
        const double lv = static_cast<double>(loss.total.item());
        if (!std::isfinite(lv)) {
          poisoned = true;
          break;
        }
        row.loss += lv / opts.optim.batch_size;
        for (std::size_t L = 0; L < levels; ++L)
          row.per_level[L] += loss.per_level[L] / opts.optim.batch_size;
        backward(scale(loss.total, S(1) / static_cast<S>(opts.optim.batch_size)));
      } catch (const numeric_error&) {
        poisoned = true;
        break;
      }
    }

    if (poisoned || !std::isfinite(row.loss)) {
      if (!res.log.empty() && !opts.out_dir.empty()) {
        const std::string csv = detail::loss_csv_text(res.log, levels);
        res.loss_csv_path = (fs::path(opts.out_dir) / "loss.csv").string();
        write_file(res.loss_csv_path, reinterpret_cast<const std::uint8_t*>(csv.data()),
                   csv.size());
      }
      throw train_abort(step, last_good,
                        "train: non-finite loss at step " + std::to_string(step) +
                            (last_good.empty() ? " (no checkpoint written yet)"
                                               : "; last good checkpoint: " + last_good));
    }

    opt.step(params);
    res.log.push_back(std::move(row));

    if (!checkpoint.empty() && opts.checkpoint_every > 0 &&
        (step + 1) % opts.checkpoint_every == 0) {
      model.save(checkpoint);
      last_good = checkpoint;
    }
    if (after_step) after_step(step, model);
  }

  if (!opts.out_dir.empty()) {
    model.save(checkpoint);
    res.checkpoint_path = checkpoint;
    const std::string csv = detail::loss_csv_text(res.log, levels);
    res.loss_csv_path = (fs::path(opts.out_dir) / "loss.csv").string();
    write_file(res.loss_csv_path, reinterpret_cast<const std::uint8_t*>(csv.data()),
               csv.size());
  }
  return res;
}

// Dataset evaluation. Confusions pool pixels across the whole scene set at
// ground-truth resolution (predictions bilinearly upsampled, same convention
// as the loss). Uncertainty means are taken at each map's native resolution.
struct EvalReport {
  std::vector<Confusion> conf;    // per map, coarse to fine (M5 first)
  std::vector<double> mean_u;     // per map, averaged over scenes
  int levels() const { return static_cast<int>(conf.size()); }

  // level runs 5 (coarsest) down to 1 (finest).
  const Confusion& conf_at(int level) const { return conf.at(static_cast<std::size_t>(5 - level)); }
  double mean_u_at(int level) const { return mean_u.at(static_cast<std::size_t>(5 - level)); }
};

template <typename S>
EvalReport evaluate(const UanetModel<S>& model, const std::vector<Scene<S>>& scenes) {
  if (scenes.empty()) throw param_error("evaluate: dataset is empty");
  autodiff::NoGradGuard ng;
  EvalReport rep;
  for (const Scene<S>& sc : scenes) {
    const ModelForward<S> fwd = model.forward(sc.image);
    if (rep.conf.empty()) {
      rep.conf.resize(fwd.maps.size());
      rep.mean_u.assign(fwd.maps.size(), 0.0);
    }
    for (std::size_t i = 0; i < fwd.maps.size(); ++i) {
      const Tensor<S>& m = fwd.maps[i];
      const int f = sc.mask.dim(1) / m.dim(1);
      const Tensor<S> up = f == 1 ? m : upsample(m, f, Interp::Bilinear);
      rep.conf[i] += confusion(up, sc.mask);
      rep.mean_u[i] += uncertainty_visual(m).mean / static_cast<double>(scenes.size());
    }
  }
  return rep;
}

}  // namespace uanet
