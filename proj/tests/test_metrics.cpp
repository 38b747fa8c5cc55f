#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <random>
#include <string>

#include "uanet/metrics.hpp"

using uanet::Confusion;
using uanet::Tensor;

namespace {

// Naive per-pixel loop, kept deliberately separate from the library's
// counting code.
Confusion oracle_confusion(const Tensor<double>& logits, const Tensor<double>& gt) {
  Confusion c;
  for (Eigen::Index i = 0; i < logits.numel(); ++i) {
    const double sig = 1.0 / (1.0 + std::exp(-logits.val()[i]));
    const bool pred = sig >= 0.5;
    const bool pos = gt.val()[i] >= 0.5;
    c.tp += pred && pos;
    c.fp += pred && !pos;
    c.fn += !pred && pos;
    c.tn += !pred && !pos;
  }
  return c;
}

}  // namespace

TEST_CASE("confusion equals the per-pixel oracle on 100 random rasters") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    auto logits = Tensor<double>::uniform({1, 16, 16}, rng, -4.0, 4.0);
    Tensor<double> gt = Tensor<double>::zeros({1, 16, 16});
    for (Eigen::Index i = 0; i < gt.numel(); ++i)
      gt.val()[i] = std::uniform_real_distribution<double>(0, 1)(rng) < 0.4 ? 1.0 : 0.0;

    const Confusion a = uanet::confusion(logits, gt);
    const Confusion b = oracle_confusion(logits, gt);
    CHECK(a.tp == b.tp);
    CHECK(a.fp == b.fp);
    CHECK(a.fn == b.fn);
    CHECK(a.tn == b.tn);
    CHECK(a.total() == 256);
  }
}

TEST_CASE("confusion corner cases") {
  auto zeros = Tensor<double>::zeros({1, 2, 2});
  auto pos_logits = Tensor<double>::full({1, 2, 2}, 3.0);
  auto neg_logits = Tensor<double>::full({1, 2, 2}, -3.0);
  auto ones = Tensor<double>::full({1, 2, 2}, 1.0);

  // pred == gt everywhere.
  Confusion agree = uanet::confusion(pos_logits, ones);
  CHECK(agree.fp == 0);
  CHECK(agree.fn == 0);
  CHECK(agree.tp == 4);

  // all-positive prediction, all-negative truth.
  Confusion wrong = uanet::confusion(pos_logits, zeros);
  CHECK(wrong.tp == 0);
  CHECK(wrong.fp == 4);

  // logit exactly 0 counts as a positive prediction.
  Confusion tie = uanet::confusion(zeros, ones);
  CHECK(tie.tp == 4);

  CHECK(uanet::confusion(neg_logits, zeros).tn == 4);
  CHECK_THROWS_AS(uanet::confusion(pos_logits, Tensor<double>::zeros({1, 2, 3})),
                  uanet::shape_error);
}

TEST_CASE("metric formulas on known counts") {
  Confusion c;
  c.tp = 60;
  c.fp = 20;
  c.fn = 20;
  c.tn = 100;
  CHECK(uanet::iou(c) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(uanet::precision(c) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(uanet::recall(c) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(uanet::f1(c) == doctest::Approx(0.75).epsilon(1e-15));

  Confusion perfect;
  perfect.tp = 1;
  CHECK(uanet::iou(perfect) == 1.0);
  CHECK(uanet::f1(perfect) == 1.0);
}

TEST_CASE("degenerate denominators follow the documented convention") {
  Confusion empty;  // nothing positive anywhere
  empty.tn = 10;
  CHECK(uanet::iou(empty) == 1.0);
  CHECK(uanet::precision(empty) == 1.0);
  CHECK(uanet::recall(empty) == 1.0);
  CHECK(uanet::f1(empty) == 1.0);

  Confusion missed;  // truth has positives, prediction has none
  missed.fn = 3;
  missed.tn = 5;
  CHECK(uanet::iou(missed) == 0.0);
  CHECK(uanet::precision(missed) == 0.0);
  CHECK(uanet::recall(missed) == 0.0);
  CHECK(uanet::f1(missed) == 0.0);

  Confusion phantom;  // prediction has positives, truth has none
  phantom.fp = 3;
  CHECK(uanet::iou(phantom) == 0.0);
  CHECK(uanet::precision(phantom) == 0.0);
  CHECK(uanet::recall(phantom) == 0.0);
  CHECK(uanet::f1(phantom) == 0.0);
}

TEST_CASE("Dice-Jaccard identity and IoU <= F1 on random counts") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> d(0, 500);
  for (int trial = 0; trial < 200; ++trial) {
    Confusion c;
    c.tp = d(rng);
    c.fp = d(rng);
    c.fn = d(rng);
    c.tn = d(rng);
    if (c.tp + c.fp + c.fn == 0) continue;
    const double i = uanet::iou(c);
    const double f = uanet::f1(c);
    CHECK(std::abs(f - 2.0 * i / (1.0 + i)) <= 1e-12);
    CHECK(i <= f + 1e-15);
    for (double v : {i, f, uanet::precision(c), uanet::recall(c)}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("uncertainty visualization") {
  auto logits = Tensor<double>::from({1, 1, 3}, {0.0, 20.0, -20.0});
  auto u = uanet::uncertainty_visual(logits);
  CHECK(u.u.val()[0] == 0.5);
  CHECK(u.u.val()[1] < 1e-8);
  CHECK(u.u.val()[2] < 1e-8);
  CHECK(u.mean == doctest::Approx(0.5 / 3.0).epsilon(1e-8));

  // u == min(sigma, 1-sigma) elementwise, and u(x) == u(-x).
  std::mt19937_64 rng(43);
  auto x = Tensor<double>::uniform({1, 4, 4}, rng, -6.0, 6.0);
  auto ux = uanet::uncertainty_visual(x);
  Tensor<double> nx = Tensor<double>::zeros({1, 4, 4});
  nx.val() = -x.val();
  auto unx = uanet::uncertainty_visual(nx);
  for (Eigen::Index i = 0; i < x.numel(); ++i) {
    const double sig = 1.0 / (1.0 + std::exp(-x.val()[i]));
    CHECK(ux.u.val()[i] == doctest::Approx(std::min(sig, 1.0 - sig)).epsilon(1e-12));
    CHECK(ux.u.val()[i] == doctest::Approx(unx.u.val()[i]).epsilon(1e-12));
    CHECK(ux.u.val()[i] >= 0.0);
    CHECK(ux.u.val()[i] <= 0.5);
  }
}

TEST_CASE("metric table and CSV formatting") {
  uanet::MetricRow row;
  row.label = "baseline";
  row.m = uanet::MetricSet{0.6, 0.75, 0.75, 0.75};
  const std::string table = uanet::metric_table({row});
  CHECK(table.find("Method") != std::string::npos);
  CHECK(table.find("IoU") != std::string::npos);
  CHECK(table.find("60.00") != std::string::npos);
  CHECK(table.find("75.00") != std::string::npos);

  const std::string csv = uanet::metric_csv({row});
  CHECK(csv.find("method,iou,f1,precision,recall\n") == 0);
  // The numeric fields are %.17g, so check the IoU round-trips exactly.
  const std::size_t at = csv.find("baseline,");
  REQUIRE(at != std::string::npos);
  CHECK(std::strtod(csv.c_str() + at + 9, nullptr) == 0.6);
}
