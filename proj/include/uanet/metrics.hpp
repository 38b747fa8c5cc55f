#pragma once

// Pixelwise confusion counting, IoU / F1 / Precision / Recall, and the
// uncertainty visualization 0.5 - |0.5 - sigma|.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "uanet/ops.hpp"
#include "uanet/tensor.hpp"

namespace uanet {

struct Confusion {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  std::int64_t total() const { return tp + fp + fn + tn; }
};

// Decision rule: predicted positive iff logit >= 0, i.e. sigma >= 0.5 with the
// tie counted positive. Ground truth positive iff gt >= 0.5.
template <typename S>
Confusion confusion(const Tensor<S>& pred_logits, const Tensor<S>& gt) {
  if (pred_logits.shape() != gt.shape())
    throw shape_error("confusion: extent mismatch " + shape_str(pred_logits.shape()) +
                      " vs " + shape_str(gt.shape()));
  Confusion c;
  const ArrayX<S>& p = pred_logits.val();
  const ArrayX<S>& t = gt.val();
  const Eigen::Index n = p.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool pred = p[i] >= S(0);
    const bool pos = t[i] >= S(0.5);
    if (pred && pos)
      ++c.tp;
    else if (pred && !pos)
      ++c.fp;
    else if (!pred && pos)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

// Degenerate-denominator convention: a metric whose denominator is zero
// returns 1 when prediction and truth agree on emptiness, 0 otherwise.
inline double iou(const Confusion& c) {
  const std::int64_t denom = c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;
  return static_cast<double>(c.tp) / static_cast<double>(denom);
}

inline double precision(const Confusion& c) {
  if (c.tp + c.fp == 0) return c.fn == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

inline double recall(const Confusion& c) {
  if (c.tp + c.fn == 0) return c.fp == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

inline double f1(const Confusion& c) {
  const double p = precision(c);
  const double r = recall(c);
  if (p + r == 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

struct MetricSet {
  double iou = 0.0;
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

inline MetricSet metric_set(const Confusion& c) {
  return MetricSet{iou(c), f1(c), precision(c), recall(c)};
}

// u = 0.5 - |0.5 - sigma(logit)|, elementwise; equals min(sigma, 1 - sigma).
template <typename S>
struct UncertaintyRaster {
  Tensor<S> u;
  double mean = 0.0;
};

template <typename S>
UncertaintyRaster<S> uncertainty_visual(const Tensor<S>& logits) {
  UncertaintyRaster<S> out;
  out.u = Tensor<S>::zeros(logits.shape());
  ArrayX<S>& u = out.u.val();
  const ArrayX<S>& x = logits.val();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double sig = detail::stable_sigmoid(static_cast<double>(x[i]));
    const double v = 0.5 - std::abs(0.5 - sig);
    u[i] = static_cast<S>(v);
    acc += v;
  }
  out.mean = x.size() == 0 ? 0.0 : acc / static_cast<double>(x.size());
  return out;
}

// Report row: label + metric set. Percentages, two decimals, the four-column
// layout IoU | F1 | Pre | Recall.
struct MetricRow {
  std::string label;
  MetricSet m;
};

namespace detail {

inline std::string pct2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v * 100.0);
  return std::string(buf);
}

}  // namespace detail

inline std::string metric_table(const std::vector<MetricRow>& rows) {
  std::size_t lw = std::string("Method").size();
  for (const MetricRow& r : rows) lw = std::max(lw, r.label.size());
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-*s  %8s  %8s  %8s  %8s\n",
                static_cast<int>(lw), "Method", "IoU", "F1", "Pre", "Recall");
  out += line;
  for (const MetricRow& r : rows) {
    std::snprintf(line, sizeof line, "%-*s  %8s  %8s  %8s  %8s\n",
                  static_cast<int>(lw), r.label.c_str(), detail::pct2(r.m.iou).c_str(),
                  detail::pct2(r.m.f1).c_str(), detail::pct2(r.m.precision).c_str(),
                  detail::pct2(r.m.recall).c_str());
    out += line;
  }
  return out;
}

inline std::string metric_csv(const std::vector<MetricRow>& rows) {
  std::string out = "method,iou,f1,precision,recall\n";
  char line[256];
  for (const MetricRow& r : rows) {
    std::snprintf(line, sizeof line, "%s,%.17g,%.17g,%.17g,%.17g\n", r.label.c_str(),
                  r.m.iou, r.m.f1, r.m.precision, r.m.recall);
    out += line;
  }
  return out;
}

}  // namespace uanet
