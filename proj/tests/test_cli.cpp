#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include "uanet/io.hpp"
#include "uanet/rasterio.hpp"
#include "uanet/scene.hpp"

// UANET_BIN_PATH is injected by the build so the suite drives the real
// binary end to end.

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int code = -1;
  std::string out;
};

CmdResult run_cli(const std::string& args) {
  static int counter = 0;
  fs::create_directories("tmp_tests/cli");
  const std::string capture = "tmp_tests/cli/out" + std::to_string(counter++) + ".txt";
  const std::string cmd = std::string(UANET_BIN_PATH) + " " + args + " > " + capture + " 2>&1";
  const int rc = std::system(cmd.c_str());
  CmdResult r;
  r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  const auto raw = uanet::slurp_file(capture);
  r.out.assign(raw.begin(), raw.end());
  return r;
}

std::string slurp_text(const std::string& path) {
  const auto raw = uanet::slurp_file(path);
  return std::string(raw.begin(), raw.end());
}

void write_text(const std::string& path, const std::string& text) {
  uanet::write_file(path, reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
}

const char* kConfig =
    "seed = 11\n"
    "bits = 32\n"
    "encoder.widths = 4,6,6,6,6\n"
    "encoder.head_channels = 4\n"
    "encoder.dilation_rates = 1,2\n"
    "data.extent = 32\n"
    "data.count = 6\n"
    "data.min_size = 6\n"
    "data.max_size = 12\n"
    "optim.steps = 6\n"
    "optim.batch = 2\n";

// Shared across cases: the dataset and one trained run are built once.
const std::string& base_dir() {
  static std::string dir = [] {
    fs::remove_all("tmp_tests/cli");
    fs::create_directories("tmp_tests/cli");
    write_text("tmp_tests/cli/cfg.txt", kConfig);
    return std::string("tmp_tests/cli");
  }();
  return dir;
}

std::string dataset() {
  const std::string& d = base_dir();
  if (!fs::exists(d + "/ds/manifest.txt")) {
    const auto r = run_cli("gen-data --config " + d + "/cfg.txt --out " + d + "/ds");
    REQUIRE(r.code == 0);
  }
  return d + "/ds/manifest.txt";
}

std::string checkpoint() {
  const std::string& d = base_dir();
  if (!fs::exists(d + "/run/checkpoint.uatn.ar")) {
    const auto r = run_cli("train --config " + d + "/cfg.txt --manifest " + dataset() +
                           " --out " + d + "/run");
    REQUIRE(r.code == 0);
  }
  return d + "/run/checkpoint.uatn.ar";
}

}  // namespace

TEST_CASE("gen-data writes a complete reloadable dataset") {
  const std::string manifest = dataset();
  const auto entries = uanet::read_manifest(manifest);
  REQUIRE(entries.size() == 6);
  CHECK(entries[0].image_path == "images/0000.uatn");
  CHECK(entries[0].mask_path == "masks/0000.pgm");
  for (const auto& e : entries) {
    CHECK(fs::exists(fs::path(base_dir()) / "ds" / e.image_path));
    CHECK(fs::exists(fs::path(base_dir()) / "ds" / e.mask_path));
  }
  CHECK(fs::exists(fs::path(base_dir()) / "ds" / "run_config.txt"));
}

TEST_CASE("gen-data is byte-identical across reruns and worker counts") {
  const std::string manifest = dataset();
  const std::string img0 = base_dir() + "/ds/images/0000.uatn";

  auto r1 = run_cli("gen-data --config " + base_dir() + "/cfg.txt --out " + base_dir() + "/ds2");
  REQUIRE(r1.code == 0);
  CHECK(slurp_text(base_dir() + "/ds2/manifest.txt") == slurp_text(manifest));
  CHECK(uanet::slurp_file(base_dir() + "/ds2/images/0000.uatn") == uanet::slurp_file(img0));

  const std::string threaded = "UANET_THREADS=3 " + std::string(UANET_BIN_PATH) +
                               " gen-data --config " + base_dir() + "/cfg.txt --out " +
                               base_dir() + "/ds3 > /dev/null 2>&1";
  REQUIRE(std::system(threaded.c_str()) == 0);
  CHECK(slurp_text(base_dir() + "/ds3/manifest.txt") == slurp_text(manifest));
  CHECK(uanet::slurp_file(base_dir() + "/ds3/images/0000.uatn") == uanet::slurp_file(img0));
  fs::remove_all(base_dir() + "/ds2");
  fs::remove_all(base_dir() + "/ds3");
}

TEST_CASE("train writes checkpoint, loss log and config echo") {
  const std::string ckpt = checkpoint();
  CHECK(fs::exists(ckpt));
  const std::string csv = slurp_text(base_dir() + "/run/loss.csv");
  CHECK(csv.rfind("step,lr,loss", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);  // header + 6 steps
  const std::string echo = slurp_text(base_dir() + "/run/run_config.txt");
  CHECK(echo.find("seed = 11\n") != std::string::npos);
  CHECK(echo.find("uafm.case = 4\n") != std::string::npos);
}

TEST_CASE("identical config and seed reproduce identical artifacts") {
  const std::string ckpt = checkpoint();
  const auto r = run_cli("train --config " + base_dir() + "/cfg.txt --manifest " + dataset() +
                         " --out " + base_dir() + "/run_b");
  REQUIRE(r.code == 0);
  CHECK(uanet::slurp_file(base_dir() + "/run_b/checkpoint.uatn.ar") == uanet::slurp_file(ckpt));
  CHECK(slurp_text(base_dir() + "/run_b/loss.csv") == slurp_text(base_dir() + "/run/loss.csv"));
  fs::remove_all(base_dir() + "/run_b");
}

TEST_CASE("eval prints one metric row per level") {
  const auto r = run_cli("eval --config " + base_dir() + "/cfg.txt --manifest " + dataset() +
                         " --checkpoint " + checkpoint() + " --out " + base_dir() + "/ev");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("Method") != std::string::npos);
  for (const char* row : {"M5", "M4", "M3", "M2", "M1"})
    CHECK(r.out.find(row) != std::string::npos);
  CHECK(r.out.find("mean uncertainty M1") != std::string::npos);
  const std::string csv = slurp_text(base_dir() + "/ev/eval.csv");
  CHECK(csv.rfind("method,iou,f1,precision,recall\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);

  const auto single = run_cli("eval --config " + base_dir() + "/cfg.txt --manifest " + dataset() +
                              " --checkpoint " + checkpoint() + " --level 3");
  REQUIRE(single.code == 0);
  CHECK(single.out.find("M3") != std::string::npos);
  CHECK(single.out.find("M5") == std::string::npos);
}

TEST_CASE("infer writes logits and a thresholded mask") {
  const auto r = run_cli("infer --config " + base_dir() + "/cfg.txt --checkpoint " +
                         checkpoint() + " --input " + base_dir() + "/ds/images/0001.uatn" +
                         " --out " + base_dir() + "/inf");
  REQUIRE(r.code == 0);
  const auto logits = uanet::read_tensor<float>(base_dir() + "/inf/m1_logits.uatn");
  REQUIRE(logits.rank() == 3);
  CHECK(logits.dim(0) == 1);
  CHECK(logits.dim(1) == 32);
  CHECK(logits.dim(2) == 32);
  const uanet::PgmImage mask = uanet::read_pgm(base_dir() + "/inf/mask.pgm");
  REQUIRE(mask.w == 32);
  REQUIRE(mask.h == 32);
  for (std::size_t i = 0; i < mask.v.size(); ++i) {
    const bool on = logits.val()[static_cast<Eigen::Index>(i)] >= 0.0f;
    CHECK(mask.v[i] == (on ? 255 : 0));
  }
  const auto png = uanet::slurp_file(base_dir() + "/inf/mask.png");
  REQUIRE(png.size() > 8);
  CHECK(png[0] == 0x89);
  CHECK(png[1] == 'P');
  CHECK(png[2] == 'N');
  CHECK(png[3] == 'G');
}

TEST_CASE("uncertainty exports rasters and rank maps per level") {
  const auto r = run_cli("uncertainty --config " + base_dir() + "/cfg.txt --checkpoint " +
                         checkpoint() + " --input " + base_dir() + "/ds/images/0001.uatn" +
                         " --out " + base_dir() + "/unc");
  REQUIRE(r.code == 0);
  for (int l = 1; l <= 5; ++l) {
    const std::string tag = "m" + std::to_string(l);
    CHECK(fs::exists(base_dir() + "/unc/u_" + tag + ".uatn"));
    CHECK(fs::exists(base_dir() + "/unc/u_" + tag + ".pgm"));
    CHECK(fs::exists(base_dir() + "/unc/rank_f_" + tag + ".pgm"));
    CHECK(fs::exists(base_dir() + "/unc/rank_b_" + tag + ".pgm"));
  }
  // Finest level matches the input extent; u values live in [0, 0.5].
  const auto u1 = uanet::read_tensor<float>(base_dir() + "/unc/u_m1.uatn");
  CHECK(u1.dim(1) == 32);
  CHECK(u1.val().minCoeff() >= 0.0f);
  CHECK(u1.val().maxCoeff() <= 0.5f);
  // Rank PGMs hold only the six scaled rank levels.
  const uanet::PgmImage rf = uanet::read_pgm(base_dir() + "/unc/rank_f_m1.pgm");
  for (std::uint8_t v : rf.v) CHECK(v % 51 == 0);

  const auto single = run_cli("uncertainty --config " + base_dir() + "/cfg.txt --checkpoint " +
                              checkpoint() + " --input " + base_dir() + "/ds/images/0001.uatn" +
                              " --out " + base_dir() + "/unc2 --level 2");
  REQUIRE(single.code == 0);
  CHECK(fs::exists(base_dir() + "/unc2/u_m2.uatn"));
  CHECK_FALSE(fs::exists(base_dir() + "/unc2/u_m1.uatn"));
}

TEST_CASE("gradcheck passes in 64-bit and rejects 32-bit") {
  const auto r = run_cli("gradcheck --bits 64");
  CHECK(r.code == 0);
  CHECK(r.out.find("all ok") != std::string::npos);

  const auto r32 = run_cli("gradcheck --bits 32");
  CHECK(r32.code == 2);
  CHECK(r32.out.find("64-bit") != std::string::npos);
}

TEST_CASE("ablate emits the labeled eight-row grid") {
  write_text(base_dir() + "/ab.txt", std::string(kConfig) + "optim.steps = 2\n");
  const auto r = run_cli("ablate --config " + base_dir() + "/ab.txt --manifest " + dataset() +
                         " --out " + base_dir() + "/abl");
  REQUIRE(r.code == 0);
  const std::string csv = slurp_text(base_dir() + "/abl/ablate.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 9);  // header + 8 rows
  for (const char* label : {"case1,", "case2,", "case3,", "case4,", "pigm_off,", "pigm_sc,",
                            "pigm_cc,", "pigm_sc_cc,"})
    CHECK(csv.find(label) != std::string::npos);
}

TEST_CASE("bad flags and bad config keys are usage errors") {
  const auto bad_flag = run_cli("train --definitely-not-a-flag");
  CHECK(bad_flag.code != 0);

  write_text(base_dir() + "/bad.txt", "bogus.key = 1\n");
  const auto bad_key = run_cli("train --config " + base_dir() + "/bad.txt");
  CHECK(bad_key.code == 2);
  CHECK(bad_key.out.find("bogus.key") != std::string::npos);

  const auto bad_value = run_cli("train --seed banana");
  CHECK(bad_value.code == 2);
  CHECK(bad_value.out.find("seed") != std::string::npos);

  const auto no_sub = run_cli("");
  CHECK(no_sub.code != 0);
}
