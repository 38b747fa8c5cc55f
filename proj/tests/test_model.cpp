#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "uanet/model.hpp"

using uanet::EncoderConfig;
using uanet::FusionCase;
using uanet::ModelConfig;
using uanet::PigmMode;
using uanet::Shape;
using uanet::Tensor;
using uanet::UanetModel;

namespace {

namespace fs = std::filesystem;

ModelConfig toy_cfg() {
  ModelConfig cfg;
  cfg.encoder.stage_channels = {2, 3, 3, 4, 4};
  cfg.encoder.convs_per_stage = 1;
  cfg.encoder.dilation_rates = {1, 2};
  cfg.encoder.head_channels = 3;
  return cfg;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::path("tmp_tests") / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& leaf) const { return (path / leaf).string(); }
};

bool message_contains(const std::exception& e, const char* part) {
  return std::string(e.what()).find(part) != std::string::npos;
}

}  // namespace

TEST_CASE("forward produces the five-map ladder") {
  auto model = UanetModel<float>::init(toy_cfg(), 9001);
  std::mt19937_64 rng(1);
  auto img = Tensor<float>::uniform({3, 32, 32}, rng, 0.0, 1.0);
  auto fwd = model.forward(img);
  REQUIRE(fwd.maps.size() == 5);
  CHECK(fwd.map(5).shape() == Shape{1, 2, 2});
  CHECK(fwd.map(4).shape() == Shape{1, 4, 4});
  CHECK(fwd.map(3).shape() == Shape{1, 8, 8});
  CHECK(fwd.map(2).shape() == Shape{1, 16, 16});
  CHECK(fwd.map(1).shape() == Shape{1, 32, 32});
  CHECK(fwd.finest().shape() == Shape{1, 32, 32});
  CHECK(fwd.g5.shape() == Shape{3, 2, 2});
  CHECK_THROWS_AS(fwd.map(0), uanet::param_error);
  CHECK_THROWS_AS(fwd.map(6), uanet::param_error);
}

TEST_CASE("cascade disabled leaves only the coarse map") {
  ModelConfig cfg = toy_cfg();
  cfg.uafm_enabled = false;
  cfg.pigm = PigmMode::Off;
  auto model = UanetModel<float>::init(cfg, 9002);
  std::mt19937_64 rng(2);
  auto img = Tensor<float>::uniform({3, 32, 32}, rng, 0.0, 1.0);
  auto fwd = model.forward(img);
  REQUIRE(fwd.maps.size() == 1);
  CHECK(fwd.map(5).shape() == Shape{1, 2, 2});
  CHECK_THROWS_AS(fwd.map(1), uanet::param_error);
  // With the prior guide off, G5 is F5 itself.
  CHECK(fwd.g5.node_ptr() == fwd.pyramid.f[4].node_ptr());
}

TEST_CASE("parameter registry matches the configuration") {
  auto full = UanetModel<float>::init(toy_cfg(), 9003);
  auto names = [](const UanetModel<float>& m) {
    std::vector<std::string> out;
    for (const auto& [n, t] : m.parameters()) out.push_back(n);
    return out;
  };
  // Baseline: (5 stage convs + 4 blocks x 3 convs + 11 fpn convs) x {w,b}.
  const std::size_t base_count = 2 * (5 + 4 * 3 + 11);
  auto full_names = names(full);
  CHECK(full_names.size() == base_count + 2 + 4 * 8);
  CHECK(std::find(full_names.begin(), full_names.end(), "pigm.alpha") != full_names.end());
  CHECK(std::find(full_names.begin(), full_names.end(), "uafm.lvl4.g_mix.w") != full_names.end());
  CHECK(std::find(full_names.begin(), full_names.end(), "uafm.lvl1.head.b") != full_names.end());

  ModelConfig cfg = toy_cfg();
  cfg.fusion = FusionCase::Concat;
  auto concat_names = names(UanetModel<float>::init(cfg, 9003));
  CHECK(concat_names.size() == base_count + 2 + 4 * 4);

  cfg = toy_cfg();
  cfg.pigm = PigmMode::SpatialOnly;
  auto sc_names = names(UanetModel<float>::init(cfg, 9003));
  CHECK(std::find(sc_names.begin(), sc_names.end(), "pigm.alpha") != sc_names.end());
  CHECK(std::find(sc_names.begin(), sc_names.end(), "pigm.beta") == sc_names.end());

  // Cascade off: only the M5 path remains (5 stage convs + the E5 block's
  // 3 convs + lateral5/smooth5/m5_head), and the prior guide's scalars drop
  // out too since G5 would feed nothing.
  cfg = toy_cfg();
  cfg.uafm_enabled = false;
  auto m5_names = names(UanetModel<float>::init(cfg, 9003));
  CHECK(m5_names.size() == 2 * (5 + 3 + 3));
  CHECK(std::find(m5_names.begin(), m5_names.end(), "enc.block5.merge.w") != m5_names.end());
  CHECK(std::find(m5_names.begin(), m5_names.end(), "fpn.m5_head.b") != m5_names.end());
  CHECK(std::find(m5_names.begin(), m5_names.end(), "enc.block2.branch0.w") == m5_names.end());
  CHECK(std::find(m5_names.begin(), m5_names.end(), "fpn.lateral1.w") == m5_names.end());
  CHECK(std::find(m5_names.begin(), m5_names.end(), "pigm.alpha") == m5_names.end());
}

TEST_CASE("pigm mode does not disturb the other weights") {
  ModelConfig on = toy_cfg();
  ModelConfig off = toy_cfg();
  off.pigm = PigmMode::Off;
  auto a = UanetModel<float>::init(on, 42);
  auto b = UanetModel<float>::init(off, 42);

  auto pa = a.parameters();
  auto pb = b.parameters();
  // Same baseline + uafm weights; the pigm scalars are extra entries in `a`.
  REQUIRE(pa.size() == pb.size() + 2);
  std::size_t ia = 0;
  for (const auto& [name, t] : pb) {
    while (pa[ia].first == "pigm.alpha" || pa[ia].first == "pigm.beta") ++ia;
    REQUIRE(pa[ia].first == name);
    for (Eigen::Index j = 0; j < t.numel(); ++j) CHECK(pa[ia].second.val()[j] == t.val()[j]);
    ++ia;
  }
}

TEST_CASE("fresh pigm and fusion keep the coarse map independent of mode") {
  // alpha = beta = 0 makes PIGM an identity, so M5 must agree bitwise
  // between modes at initialization.
  std::mt19937_64 rng(3);
  auto img = Tensor<float>::uniform({3, 32, 32}, rng, 0.0, 1.0);
  ModelConfig cfg_on = toy_cfg();
  ModelConfig cfg_off = toy_cfg();
  cfg_off.pigm = PigmMode::Off;
  auto m_on = UanetModel<float>::init(cfg_on, 77);
  auto m_off = UanetModel<float>::init(cfg_off, 77);
  auto f_on = m_on.forward(img);
  auto f_off = m_off.forward(img);
  for (Eigen::Index i = 0; i < f_on.map(5).numel(); ++i)
    CHECK(f_on.map(5).val()[i] == f_off.map(5).val()[i]);
}

TEST_CASE("save and load round trip bit for bit") {
  TempDir dir("model_roundtrip");
  auto a = UanetModel<float>::init(toy_cfg(), 123);
  a.save(dir.file("w.uatn.ar"));

  auto b = UanetModel<float>::init(toy_cfg(), 456);
  b.load(dir.file("w.uatn.ar"));
  auto pa = a.parameters();
  auto pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (Eigen::Index j = 0; j < pa[i].second.numel(); ++j)
      CHECK(pa[i].second.val()[j] == pb[i].second.val()[j]);

  std::mt19937_64 rng(4);
  auto img = Tensor<float>::uniform({3, 32, 32}, rng, 0.0, 1.0);
  auto fa = a.forward(img);
  auto fb = b.forward(img);
  for (Eigen::Index i = 0; i < fa.map(1).numel(); ++i)
    CHECK(fa.map(1).val()[i] == fb.map(1).val()[i]);
}

TEST_CASE("load rejects a mismatched architecture by name") {
  TempDir dir("model_mismatch");
  auto a = UanetModel<float>::init(toy_cfg(), 9);
  a.save(dir.file("w.uatn.ar"));

  ModelConfig other = toy_cfg();
  other.fusion = FusionCase::Concat;
  auto b = UanetModel<float>::init(other, 9);
  try {
    b.load(dir.file("w.uatn.ar"));
    FAIL("expected io_error");
  } catch (const uanet::io_error& e) {
    CHECK(message_contains(e, "entries"));
  }
}

TEST_CASE("cross-width load casts stored values") {
  TempDir dir("model_crosswidth");
  auto a = UanetModel<float>::init(toy_cfg(), 31);
  a.save(dir.file("w.uatn.ar"));
  auto b = UanetModel<double>::init(toy_cfg(), 32);
  b.load(dir.file("w.uatn.ar"));
  auto pa = a.parameters();
  auto pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (Eigen::Index j = 0; j < pa[i].second.numel(); ++j)
      CHECK(pb[i].second.val()[j] == static_cast<double>(pa[i].second.val()[j]));
}
