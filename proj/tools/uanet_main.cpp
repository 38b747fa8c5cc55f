// Command-line entry point: data generation, training, evaluation,
// inference, uncertainty export, gradient checking, and the ablation grid.
// All randomness flows from the config seed through named sub-streams, and
// every command writes byte-identical outputs for identical config + seed.

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "uanet/config.hpp"
#include "uanet/gradsuite.hpp"
#include "uanet/metrics.hpp"
#include "uanet/model.hpp"
#include "uanet/scene.hpp"
#include "uanet/training.hpp"

namespace fs = std::filesystem;

namespace {

// Shared flags: --config loads the file, the rest are key overrides applied
// on top in flag order, so flags always win over the file.
struct CommonFlags {
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;
};

void add_common_flags(CLI::App* cmd, CommonFlags& cf) {
  cmd->add_option("--config", cf.config_path, "run configuration file (key = value lines)");
  auto push = [&cf](const char* key) {
    return [&cf, key](const std::string& v) { cf.overrides.emplace_back(key, v); };
  };
  cmd->add_option_function<std::string>("--seed", push("seed"), "run seed");
  cmd->add_option_function<std::string>("--out", push("out"), "output directory");
  cmd->add_option_function<std::string>("--bits", push("bits"), "float width: 32 or 64");
  cmd->add_option_function<std::string>("--ura", push("ura.formula"),
                                        "rank formula: prose or floor");
  cmd->add_option_function<std::string>("--case", push("uafm.case"), "fusion case: 1..4");
  cmd->add_option_function<std::string>("--pigm", push("pigm.mode"),
                                        "prior guide mode: off, sc, cc or sc_cc");
  cmd->add_option_function<std::string>("--manifest", push("data.manifest"),
                                        "dataset manifest path");
}

uanet::RunConfig make_config(const CommonFlags& cf) {
  uanet::RunConfig cfg;
  if (!cf.config_path.empty()) cfg = uanet::RunConfig::load(cf.config_path);
  for (const auto& [key, value] : cf.overrides) cfg.apply(key, value);
  cfg.validate();
  return cfg;
}

int env_threads() {
  const char* v = std::getenv("UANET_THREADS");
  if (v == nullptr || *v == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (end == v || *end != '\0' || n < 1)
    throw uanet::param_error("UANET_THREADS must be a positive integer, got '" +
                             std::string(v) + "'");
  return static_cast<int>(n);
}

void write_text(const std::string& path, const std::string& text) {
  uanet::write_file(path, reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
}

std::string require_out(const uanet::RunConfig& cfg, const char* cmd) {
  if (cfg.out.empty())
    throw uanet::param_error(std::string(cmd) + ": config key 'out' (or --out) is required");
  fs::create_directories(cfg.out);
  return cfg.out;
}

std::string require_manifest(const uanet::RunConfig& cfg, const char* cmd) {
  if (cfg.manifest.empty())
    throw uanet::param_error(std::string(cmd) + ": config key 'data.manifest' is required");
  return cfg.manifest;
}

// Even manifest indices train, odd validate: a reproducible split that
// needs no extra bookkeeping files.
enum class Split { Train, Val, All };

Split parse_split(const std::string& v) {
  if (v == "train") return Split::Train;
  if (v == "val") return Split::Val;
  if (v == "all") return Split::All;
  throw uanet::param_error("split '" + v + "' is not train/val/all");
}

template <typename S>
std::vector<uanet::Scene<S>> pick_split(const std::vector<uanet::Scene<S>>& all, Split which) {
  if (which == Split::All) return all;
  std::vector<uanet::Scene<S>> out;
  for (std::size_t i = (which == Split::Train) ? 0 : 1; i < all.size(); i += 2)
    out.push_back(all[i]);
  return out;
}

template <typename S>
uanet::UanetModel<S> load_model(const uanet::RunConfig& cfg, const std::string& checkpoint) {
  auto model = uanet::UanetModel<S>::init(cfg.model_config(), cfg.seed);
  model.load(checkpoint);
  return model;
}

template <typename S>
uanet::PgmImage unit_to_pgm(const uanet::Tensor<S>& u, double scale) {
  uanet::PgmImage img;
  img.h = u.dim(1);
  img.w = u.dim(2);
  img.v.resize(static_cast<std::size_t>(img.w) * img.h);
  for (std::size_t i = 0; i < img.v.size(); ++i) {
    const double b = static_cast<double>(u.val()[static_cast<Eigen::Index>(i)]) * scale;
    img.v[i] = static_cast<std::uint8_t>(std::min(255.0, std::max(0.0, std::round(b))));
  }
  return img;
}

// --------------------------------------------------------------------------
// commands
// --------------------------------------------------------------------------

int cmd_gen_data(const uanet::RunConfig& cfg) {
  const std::string dir = require_out(cfg, "gen-data");
  const int threads = env_threads();
  const std::string manifest =
      uanet::write_dataset(dir, cfg.scene, static_cast<int>(cfg.data_count),
                           uanet::named_seed(cfg.seed, "data"), threads);
  write_text((fs::path(dir) / "run_config.txt").string(), cfg.to_text());
  std::printf("wrote %ld scenes (%dx%d) to %s\n", cfg.data_count, cfg.scene.extent,
              cfg.scene.extent, dir.c_str());
  std::printf("manifest: %s\n", manifest.c_str());
  return 0;
}

template <typename S>
int cmd_train(const uanet::RunConfig& cfg) {
  const std::string out = require_out(cfg, "train");
  const std::string manifest = require_manifest(cfg, "train");
  const auto all = uanet::load_dataset<S>(manifest);
  const auto scenes = pick_split(all, Split::Train);
  if (scenes.empty()) throw uanet::param_error("train: the train split selects no scenes");

  auto model = uanet::UanetModel<S>::init(cfg.model_config(), cfg.seed);
  const uanet::TrainResult res = uanet::train(model, scenes, cfg.train_options(), cfg.seed);
  write_text((fs::path(out) / "run_config.txt").string(), cfg.to_text());

  const long every = std::max<long>(1, cfg.optim.steps / 10);
  for (const auto& row : res.log)
    if (row.step % every == 0 || row.step + 1 == cfg.optim.steps)
      std::printf("step %5ld  lr %.6f  loss %.6f\n", row.step, row.lr, row.loss);
  std::printf("trained %ld steps on %zu scenes\n", cfg.optim.steps, scenes.size());
  std::printf("checkpoint: %s\n", res.checkpoint_path.c_str());
  std::printf("loss log:   %s\n", res.loss_csv_path.c_str());
  return 0;
}

template <typename S>
int cmd_eval(const uanet::RunConfig& cfg, const std::string& checkpoint, int level,
             const std::string& split) {
  const std::string manifest = require_manifest(cfg, "eval");
  const auto all = uanet::load_dataset<S>(manifest);
  const auto scenes = pick_split(all, parse_split(split));
  if (scenes.empty())
    throw uanet::param_error("eval: split '" + split + "' selects no scenes");

  const auto model = load_model<S>(cfg, checkpoint);
  const uanet::EvalReport rep = uanet::evaluate(model, scenes);

  std::vector<int> levels;
  if (level != 0) {
    if (level < 6 - rep.levels())
      throw uanet::param_error("eval: level " + std::to_string(level) +
                               " was not produced by this model");
    levels.push_back(level);
  } else {
    for (int l = 5; l > 5 - rep.levels(); --l) levels.push_back(l);
  }
  std::vector<uanet::MetricRow> rows;
  for (int l : levels)
    rows.push_back({"M" + std::to_string(l), uanet::metric_set(rep.conf_at(l))});
  std::printf("%zu scenes, split %s\n", scenes.size(), split.c_str());
  std::printf("%s", uanet::metric_table(rows).c_str());
  for (int l : levels)
    std::printf("mean uncertainty M%d: %.6f\n", l, rep.mean_u_at(l));
  if (!cfg.out.empty()) {
    fs::create_directories(cfg.out);
    const std::string csv_path = (fs::path(cfg.out) / "eval.csv").string();
    write_text(csv_path, uanet::metric_csv(rows));
    std::printf("csv: %s\n", csv_path.c_str());
  }
  return 0;
}

template <typename S>
int cmd_infer(const uanet::RunConfig& cfg, const std::string& checkpoint,
              const std::string& input) {
  const std::string out = require_out(cfg, "infer");
  const auto model = load_model<S>(cfg, checkpoint);
  const uanet::Tensor<S> image = uanet::read_tensor<S>(input);
  uanet::autodiff::NoGradGuard ng;
  const uanet::Tensor<S> m1 = model.forward(image).finest();

  const std::string logits_path = (fs::path(out) / "m1_logits.uatn").string();
  uanet::write_tensor<S>(logits_path, m1);

  uanet::PgmImage mask;
  mask.h = m1.dim(1);
  mask.w = m1.dim(2);
  mask.v.resize(static_cast<std::size_t>(mask.w) * mask.h);
  std::int64_t positive = 0;
  for (std::size_t i = 0; i < mask.v.size(); ++i) {
    const bool on = m1.val()[static_cast<Eigen::Index>(i)] >= S(0);
    mask.v[i] = on ? 255 : 0;
    positive += on;
  }
  const std::string pgm_path = (fs::path(out) / "mask.pgm").string();
  const std::string png_path = (fs::path(out) / "mask.png").string();
  uanet::write_pgm(pgm_path, mask);
  uanet::write_png_gray8(png_path, mask.w, mask.h, mask.v.data());

  std::printf("%lld of %zu pixels predicted building\n", static_cast<long long>(positive),
              mask.v.size());
  std::printf("logits: %s\n", logits_path.c_str());
  std::printf("mask:   %s, %s\n", pgm_path.c_str(), png_path.c_str());
  return 0;
}

template <typename S>
int cmd_uncertainty(const uanet::RunConfig& cfg, const std::string& checkpoint,
                    const std::string& input, int level) {
  const std::string out = require_out(cfg, "uncertainty");
  const auto model = load_model<S>(cfg, checkpoint);
  const uanet::Tensor<S> image = uanet::read_tensor<S>(input);
  uanet::autodiff::NoGradGuard ng;
  const auto fwd = model.forward(image);

  std::vector<int> levels;
  if (level != 0) {
    levels.push_back(level);
  } else {
    for (int l = 5; l > 5 - static_cast<int>(fwd.maps.size()); --l) levels.push_back(l);
  }
  for (int l : levels) {
    const uanet::Tensor<S> m = fwd.map(l);
    const auto u = uanet::uncertainty_visual(m);
    const std::string tag = "m" + std::to_string(l);
    uanet::write_tensor((fs::path(out) / ("u_" + tag + ".uatn")).string(), u.u);
    // u is in [0, 0.5]; 510 maps the top of the range to byte 255.
    uanet::write_pgm((fs::path(out) / ("u_" + tag + ".pgm")).string(), unit_to_pgm(u.u, 510.0));
    const uanet::RankMaps ranks = uanet::rank_maps(m, cfg.ura);
    uanet::write_pgm((fs::path(out) / ("rank_f_" + tag + ".pgm")).string(),
                     uanet::rank_to_pgm(ranks.r_f));
    uanet::write_pgm((fs::path(out) / ("rank_b_" + tag + ".pgm")).string(),
                     uanet::rank_to_pgm(ranks.r_b));
    std::printf("M%d: mean uncertainty %.6f (%dx%d)\n", l, u.mean, m.dim(1), m.dim(2));
  }
  std::printf("wrote %zu levels to %s\n", levels.size(), out.c_str());
  return 0;
}

int cmd_gradcheck(const CommonFlags& cf) {
  // The suite is defined in 64-bit: finite differences at h = 1e-5 drown in
  // single-precision rounding, so a 32-bit request cannot be honored.
  for (const auto& [key, value] : cf.overrides)
    if (key == "bits" && value != "64")
      throw uanet::param_error("gradcheck: the oracle suite runs in 64-bit; pass --bits 64");
  const uanet::GradSuiteResult res = uanet::run_gradcheck_suite(1e-4, 1e-5);
  std::printf("%s", uanet::grad_suite_text(res).c_str());
  return res.all_ok() ? 0 : 1;
}

template <typename S>
int cmd_ablate(const uanet::RunConfig& cfg) {
  const std::string out = require_out(cfg, "ablate");
  const std::string manifest = require_manifest(cfg, "ablate");
  const auto all = uanet::load_dataset<S>(manifest);
  const auto train_scenes = pick_split(all, Split::Train);
  const auto val_scenes = pick_split(all, Split::Val);
  if (train_scenes.empty() || val_scenes.empty())
    throw uanet::param_error("ablate: both splits must be non-empty");

  struct Variant {
    std::string label;
    uanet::FusionCase fusion;
    uanet::PigmMode pigm;
  };
  std::vector<Variant> grid;
  for (int c = 1; c <= 4; ++c)
    grid.push_back({"case" + std::to_string(c), static_cast<uanet::FusionCase>(c),
                    uanet::PigmMode::SpatialChannel});
  for (const auto mode : {uanet::PigmMode::Off, uanet::PigmMode::SpatialOnly,
                          uanet::PigmMode::ChannelOnly, uanet::PigmMode::SpatialChannel})
    grid.push_back({"pigm_" + uanet::pigm_mode_name(mode), uanet::FusionCase::Full, mode});

  std::vector<uanet::MetricRow> rows;
  for (const auto& v : grid) {
    uanet::RunConfig run = cfg;
    run.fusion = v.fusion;
    run.pigm = v.pigm;
    auto model = uanet::UanetModel<S>::init(run.model_config(), run.seed);
    uanet::TrainOptions opts = run.train_options();
    opts.out_dir.clear();  // the grid keeps only the combined CSV
    uanet::train(model, train_scenes, opts, run.seed);
    const uanet::EvalReport rep = uanet::evaluate(model, val_scenes);
    rows.push_back({v.label, uanet::metric_set(rep.conf_at(1))});
    std::printf("%-12s IoU %.4f\n", v.label.c_str(), rows.back().m.iou);
  }
  const std::string csv_path = (fs::path(out) / "ablate.csv").string();
  write_text(csv_path, uanet::metric_csv(rows));
  write_text((fs::path(out) / "run_config.txt").string(), cfg.to_text());
  std::printf("%s", uanet::metric_table(rows).c_str());
  std::printf("csv: %s\n", csv_path.c_str());
  return 0;
}

template <typename Fn>
int with_bits(int bits, Fn&& fn) {
  if (bits == 64) return fn(double{});
  return fn(float{});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uncertainty-aware building footprint segmentation kit"};
  app.require_subcommand(1);

  CommonFlags cf;
  std::string checkpoint, input, split = "val";
  int level = 0;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic scene dataset");
  add_common_flags(gen, cf);

  CLI::App* train = app.add_subcommand("train", "train on the even manifest split");
  add_common_flags(train, cf);

  CLI::App* eval = app.add_subcommand("eval", "print metrics per prediction level");
  add_common_flags(eval, cf);
  eval->add_option("--checkpoint", checkpoint, "weight archive")->required();
  eval->add_option("--level", level, "restrict to one level")->check(CLI::Range(1, 5));
  eval->add_option("--split", split, "train, val or all");

  CLI::App* infer = app.add_subcommand("infer", "write final logits and mask for one image");
  add_common_flags(infer, cf);
  infer->add_option("--checkpoint", checkpoint, "weight archive")->required();
  infer->add_option("--input", input, "image container (.uatn)")->required();

  CLI::App* unc = app.add_subcommand("uncertainty", "export uncertainty and rank rasters");
  add_common_flags(unc, cf);
  unc->add_option("--checkpoint", checkpoint, "weight archive")->required();
  unc->add_option("--input", input, "image container (.uatn)")->required();
  unc->add_option("--level", level, "restrict to one level")->check(CLI::Range(1, 5));

  CLI::App* grad = app.add_subcommand("gradcheck", "run the finite-difference oracle suite");
  add_common_flags(grad, cf);

  CLI::App* ablate = app.add_subcommand("ablate", "train and score the fusion/guide grid");
  add_common_flags(ablate, cf);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const uanet::RunConfig cfg = make_config(cf);
    if (*gen) return cmd_gen_data(cfg);
    if (*train)
      return with_bits(cfg.bits, [&](auto tag) { return cmd_train<decltype(tag)>(cfg); });
    if (*eval)
      return with_bits(cfg.bits, [&](auto tag) {
        return cmd_eval<decltype(tag)>(cfg, checkpoint, level, split);
      });
    if (*infer)
      return with_bits(cfg.bits,
                       [&](auto tag) { return cmd_infer<decltype(tag)>(cfg, checkpoint, input); });
    if (*unc)
      return with_bits(cfg.bits, [&](auto tag) {
        return cmd_uncertainty<decltype(tag)>(cfg, checkpoint, input, level);
      });
    if (*grad) return cmd_gradcheck(cf);
    if (*ablate)
      return with_bits(cfg.bits, [&](auto tag) { return cmd_ablate<decltype(tag)>(cfg); });
  } catch (const uanet::param_error& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
