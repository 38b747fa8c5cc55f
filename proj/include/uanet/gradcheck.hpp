#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "uanet/tensor.hpp"

namespace uanet {

struct GradCheckReport {
  double max_rel_err = 0.0;
  int worst_input = -1;
  std::int64_t worst_coord = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool nan_seen = false;
  std::string nan_where;

  bool ok(double tol) const { return !nan_seen && max_rel_err <= tol; }

  std::string describe() const {
    if (nan_seen) return "non-finite probe at " + nan_where;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "max_rel_err=%.3e at input %d coord %lld (analytic=%.9g numeric=%.9g)",
                  max_rel_err, worst_input, static_cast<long long>(worst_coord),
                  worst_analytic, worst_numeric);
    return buf;
  }
};

// Central-difference probe of a scalar-valued graph builder against one
// reverse sweep. Relative error uses max(1, |numeric|) in the denominator.
// f must rebuild its graph from the current input values on every call.
template <typename S, typename F>
GradCheckReport finite_diff_check(F&& f, std::vector<Tensor<S>> inputs, double h) {
  if (h <= 0) throw param_error("finite_diff_check: h must be positive");
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor<S> out = f();
  if (out.numel() != 1)
    throw contract_error("finite_diff_check: f must produce a scalar, got " +
                         shape_str(out.shape()));
  backward(out);
  std::vector<ArrayX<double>> analytic;
  analytic.reserve(inputs.size());
  for (const auto& t : inputs) {
    if (t.has_grad())
      analytic.push_back(t.grad().template cast<double>());
    else
      analytic.push_back(ArrayX<double>::Zero(t.numel()));
  }

  autodiff::NoGradGuard ng;
  GradCheckReport rep;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto& v = inputs[i].val();
    for (std::int64_t c = 0; c < v.size(); ++c) {
      const S x0 = v[c];
      v[c] = static_cast<S>(static_cast<double>(x0) + h);
      const double fp = static_cast<double>(f().item());
      v[c] = static_cast<S>(static_cast<double>(x0) - h);
      const double fm = static_cast<double>(f().item());
      v[c] = x0;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        rep.nan_seen = true;
        rep.nan_where = "input " + std::to_string(i) + " coord " + std::to_string(c);
        continue;
      }
      const double num = (fp - fm) / (2.0 * h);
      const double ana = analytic[i][c];
      const double err = std::abs(ana - num) / std::max(1.0, std::abs(num));
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.worst_input = static_cast<int>(i);
        rep.worst_coord = c;
        rep.worst_analytic = ana;
        rep.worst_numeric = num;
      }
    }
  }
  return rep;
}

}  // namespace uanet
