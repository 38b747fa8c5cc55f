#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "uanet/gradcheck.hpp"
#include "uanet/pigm.hpp"

using uanet::PigmMode;
using uanet::PigmParams;
using uanet::Shape;
using uanet::Tensor;

namespace {

constexpr double kTol = 1e-4;
constexpr double kH = 1e-5;

}  // namespace

// ---------------------------------------------------------------------------
// spatial cross-attention
// ---------------------------------------------------------------------------

TEST_CASE("alpha = 0 leaves F5 untouched bit for bit") {
  std::mt19937_64 rng(101);
  auto f5 = Tensor<double>::uniform({4, 4, 4}, rng, -2.0, 2.0);
  auto m5 = Tensor<double>::uniform({1, 4, 4}, rng, -3.0, 3.0);
  auto alpha = Tensor<double>::zeros({1});
  auto r5 = uanet::spatial_cross_attention(f5, m5, alpha);
  REQUIRE(r5.shape() == f5.shape());
  for (Eigen::Index i = 0; i < f5.numel(); ++i) CHECK(r5.val()[i] == f5.val()[i]);
}

TEST_CASE("constant prior map attends to the channel spatial mean") {
  // With k constant every attention row is uniform, so each attended position
  // is the channel mean; checked against an independently computed mean.
  std::mt19937_64 rng(102);
  auto f5 = Tensor<double>::uniform({3, 2, 2}, rng, -1.5, 1.5);
  auto m5 = Tensor<double>::full({1, 2, 2}, 0.7);

  auto att = uanet::prior_cross_attention(f5, m5);
  for (int c = 0; c < 3; ++c) {
    double mean = 0;
    for (int j = 0; j < 4; ++j) mean += f5.val()[c * 4 + j] / 4.0;
    for (int j = 0; j < 4; ++j)
      CHECK(att.val()[c * 4 + j] == doctest::Approx(mean).epsilon(1e-12));
  }

  // R5 = alpha * mean-map + F5.
  auto alpha = Tensor<double>::full({1}, 0.25);
  auto r5 = uanet::spatial_cross_attention(f5, m5, alpha);
  for (int c = 0; c < 3; ++c) {
    double mean = 0;
    for (int j = 0; j < 4; ++j) mean += f5.val()[c * 4 + j] / 4.0;
    for (int j = 0; j < 4; ++j)
      CHECK(r5.val()[c * 4 + j] ==
            doctest::Approx(0.25 * mean + f5.val()[c * 4 + j]).epsilon(1e-12));
  }
}

TEST_CASE("attention rows are probability vectors") {
  std::mt19937_64 rng(103);
  auto f5 = Tensor<double>::uniform({3, 4, 4}, rng, -2.0, 2.0);
  auto m5 = Tensor<double>::uniform({1, 4, 4}, rng, -2.0, 2.0);
  for (int c = 0; c < 3; ++c) {
    auto t = uanet::attention_rows(f5, m5, c);
    REQUIRE(t.rows() == 16);
    REQUIRE(t.cols() == 16);
    for (Eigen::Index q = 0; q < t.rows(); ++q) {
      CHECK(t.row(q).minCoeff() >= 0.0);
      CHECK(std::abs(t.row(q).sum() - 1.0) <= 1e-12);
    }
  }
  CHECK_THROWS_AS(uanet::attention_rows(f5, m5, 3), uanet::param_error);
}

TEST_CASE("fused attention matches the explicit rows-times-values product") {
  std::mt19937_64 rng(104);
  auto f5 = Tensor<double>::uniform({2, 3, 3}, rng, -1.0, 1.0);
  auto m5 = Tensor<double>::uniform({1, 3, 3}, rng, -1.0, 1.0);
  auto att = uanet::prior_cross_attention(f5, m5);
  for (int c = 0; c < 2; ++c) {
    auto t = uanet::attention_rows(f5, m5, c);
    Eigen::Matrix<double, 1, Eigen::Dynamic> v(9);
    for (int i = 0; i < 9; ++i) v(i) = f5.val()[c * 9 + i];
    Eigen::Matrix<double, 1, Eigen::Dynamic> o = v * t;
    for (int j = 0; j < 9; ++j)
      CHECK(att.val()[c * 9 + j] == doctest::Approx(o(j)).epsilon(1e-12));
  }
}

TEST_CASE("extent mismatch is rejected") {
  auto f5 = Tensor<double>::zeros({2, 4, 4});
  CHECK_THROWS_AS(uanet::prior_cross_attention(f5, Tensor<double>::zeros({1, 2, 4})),
                  uanet::shape_error);
  CHECK_THROWS_AS(uanet::prior_cross_attention(f5, Tensor<double>::zeros({2, 4, 4})),
                  uanet::shape_error);
}

// ---------------------------------------------------------------------------
// channel gate
// ---------------------------------------------------------------------------

TEST_CASE("beta = 0 leaves R5 untouched bit for bit") {
  std::mt19937_64 rng(111);
  auto r5 = Tensor<double>::uniform({4, 4, 4}, rng, -2.0, 2.0);
  auto m5 = Tensor<double>::uniform({1, 4, 4}, rng, -2.0, 2.0);
  auto beta = Tensor<double>::zeros({1});
  auto g5 = uanet::channel_gate(r5, m5, beta);
  for (Eigen::Index i = 0; i < r5.numel(); ++i) CHECK(g5.val()[i] == r5.val()[i]);
}

TEST_CASE("zero prior map gates every channel by one half") {
  std::mt19937_64 rng(112);
  auto r5 = Tensor<double>::uniform({3, 4, 4}, rng, -2.0, 2.0);
  auto m5 = Tensor<double>::zeros({1, 4, 4});
  auto beta = Tensor<double>::full({1}, 0.8);
  auto g5 = uanet::channel_gate(r5, m5, beta);
  const double k = 1.0 + 0.5 * 0.8;
  for (Eigen::Index i = 0; i < r5.numel(); ++i)
    CHECK(g5.val()[i] == doctest::Approx(k * r5.val()[i]).epsilon(1e-14));
}

TEST_CASE("gate activations stay strictly inside (0,1)") {
  std::mt19937_64 rng(113);
  auto r5 = Tensor<double>::uniform({5, 4, 4}, rng, -2.0, 2.0);
  auto m5 = Tensor<double>::uniform({1, 4, 4}, rng, -2.0, 2.0);
  auto q = uanet::reshape(m5, {16, 1});
  auto keys = uanet::reshape(r5, {5, 16});
  auto s = uanet::sigmoid(uanet::matmul(keys, q));
  for (Eigen::Index i = 0; i < s.numel(); ++i) {
    CHECK(s.val()[i] > 0.0);
    CHECK(s.val()[i] < 1.0);
  }
}

// ---------------------------------------------------------------------------
// pigm_forward
// ---------------------------------------------------------------------------

TEST_CASE("mode OFF returns F5 itself") {
  std::mt19937_64 rng(121);
  auto f5 = Tensor<double>::uniform({3, 4, 4}, rng, -1.0, 1.0);
  auto m5 = Tensor<double>::uniform({1, 4, 4}, rng, -1.0, 1.0);
  auto p = PigmParams<double>::init(PigmMode::Off);
  auto g5 = uanet::pigm_forward(f5, m5, p);
  CHECK(g5.node_ptr() == f5.node_ptr());
}

TEST_CASE("freshly initialized SC_CC is an exact identity in 64-bit") {
  std::mt19937_64 rng(122);
  auto f5 = Tensor<double>::uniform({4, 4, 4}, rng, -2.0, 2.0);
  auto m5 = Tensor<double>::uniform({1, 4, 4}, rng, -2.0, 2.0);
  auto p = PigmParams<double>::init(PigmMode::SpatialChannel);
  auto g5 = uanet::pigm_forward(f5, m5, p);
  REQUIRE(g5.shape() == f5.shape());
  for (Eigen::Index i = 0; i < f5.numel(); ++i) CHECK(g5.val()[i] == f5.val()[i]);
}

TEST_CASE("every mode preserves the F5 shape") {
  std::mt19937_64 rng(123);
  auto f5 = Tensor<double>::uniform({6, 4, 4}, rng, -1.0, 1.0);
  auto m5 = Tensor<double>::uniform({1, 4, 4}, rng, -1.0, 1.0);
  for (PigmMode mode : {PigmMode::Off, PigmMode::SpatialOnly, PigmMode::ChannelOnly,
                        PigmMode::SpatialChannel}) {
    auto p = PigmParams<double>::init(mode);
    p.alpha.val()[0] = 0.3;
    p.beta.val()[0] = -0.2;
    CHECK(uanet::pigm_forward(f5, m5, p).shape() == f5.shape());
  }
}

TEST_CASE("pigm gradcheck reaches F5, M5, alpha, and beta") {
  for (int seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed) * 5167);
    auto f5 = Tensor<double>::uniform({3, 4, 4}, rng, -1.0, 1.0);
    auto m5 = Tensor<double>::uniform({1, 4, 4}, rng, -1.0, 1.0);
    auto p = PigmParams<double>::init(PigmMode::SpatialChannel);
    p.alpha.val()[0] = 0.37;
    p.beta.val()[0] = -0.21;

    std::vector<Tensor<double>> inputs{f5, m5, p.alpha, p.beta};
    auto f = [&]() { return uanet::mean(uanet::pigm_forward(f5, m5, p)); };
    const auto rep = uanet::finite_diff_check<double>(f, inputs, kH);
    INFO("seed " << seed << ": " << rep.describe());
    CHECK(rep.ok(kTol));

    // All four gradients must be alive on generic data; finite_diff_check
    // leaves the analytic gradients populated.
    CHECK(f5.grad().abs().maxCoeff() > 0.0);
    CHECK(m5.grad().abs().maxCoeff() > 0.0);
    CHECK(p.alpha.grad().abs().maxCoeff() > 0.0);
    CHECK(p.beta.grad().abs().maxCoeff() > 0.0);
  }
}
