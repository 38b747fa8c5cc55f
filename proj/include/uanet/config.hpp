#pragma once

// Run configuration: one plain-text file drives every command. Lines are
// `key = value`, `#` starts a comment, unknown keys are errors. The same
// key/value strings double as CLI flag overrides, applied after the file so
// flags win. to_text() echoes the resolved config in a fixed key order, so
// identical runs leave byte-identical config records behind.

#include <cstdlib>
#include <string>
#include <vector>

#include "uanet/io.hpp"
#include "uanet/model.hpp"
#include "uanet/scene.hpp"
#include "uanet/training.hpp"

namespace uanet {

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline long cfg_long(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const long x = std::strtol(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0')
    throw param_error("config: key '" + key + "': '" + v + "' is not an integer");
  return x;
}

inline double cfg_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0')
    throw param_error("config: key '" + key + "': '" + v + "' is not a number");
  return x;
}

inline bool cfg_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw param_error("config: key '" + key + "': '" + v + "' is not on/off");
}

inline std::vector<int> cfg_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos <= v.size()) {
    std::size_t comma = v.find(',', pos);
    if (comma == std::string::npos) comma = v.size();
    out.push_back(static_cast<int>(cfg_long(key, trim(v.substr(pos, comma - pos)))));
    pos = comma + 1;
  }
  return out;
}

}  // namespace detail

inline PigmMode parse_pigm_mode(const std::string& v) {
  if (v == "off") return PigmMode::Off;
  if (v == "sc") return PigmMode::SpatialOnly;
  if (v == "cc") return PigmMode::ChannelOnly;
  if (v == "sc_cc") return PigmMode::SpatialChannel;
  throw param_error("config: pigm mode '" + v + "' is not off/sc/cc/sc_cc");
}

inline std::string pigm_mode_name(PigmMode m) {
  switch (m) {
    case PigmMode::Off: return "off";
    case PigmMode::SpatialOnly: return "sc";
    case PigmMode::ChannelOnly: return "cc";
    case PigmMode::SpatialChannel: return "sc_cc";
  }
  throw param_error("config: bad pigm mode value");
}

inline UraFormula parse_ura_formula(const std::string& v) {
  if (v == "prose") return UraFormula::Prose;
  if (v == "floor") return UraFormula::Floor;
  throw param_error("config: ura formula '" + v + "' is not prose/floor");
}

inline FusionCase parse_fusion_case(const std::string& v) {
  const long c = detail::cfg_long("uafm.case", v);
  if (c < 1 || c > 4) throw param_error("config: uafm case must be 1..4, got " + v);
  return static_cast<FusionCase>(c);
}

struct RunConfig {
  int bits = 32;
  std::uint64_t seed = 1;
  std::string out;

  EncoderConfig encoder;
  PigmMode pigm = PigmMode::SpatialChannel;
  bool uafm_enabled = true;
  FusionCase fusion = FusionCase::Full;
  UraFormula ura = UraFormula::Prose;

  OptimConfig optim;

  SceneSpec scene;
  long data_count = 96;
  std::string manifest;

  bool augment = true;
  long checkpoint_every = 0;

  // Applies one key/value pair. Shared by the file parser and flag overrides.
  void apply(const std::string& key, const std::string& value) {
    using detail::cfg_bool;
    using detail::cfg_double;
    using detail::cfg_int_list;
    using detail::cfg_long;
    if (key == "bits") {
      const long b = cfg_long(key, value);
      if (b != 32 && b != 64) throw param_error("config: bits must be 32 or 64");
      bits = static_cast<int>(b);
    } else if (key == "seed") {
      seed = static_cast<std::uint64_t>(cfg_long(key, value));
    } else if (key == "out") {
      out = value;
    } else if (key == "encoder.widths") {
      const std::vector<int> w = cfg_int_list(key, value);
      if (w.size() != 5) throw param_error("config: encoder.widths needs 5 entries");
      for (int i = 0; i < 5; ++i) encoder.stage_channels[static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(i)];
    } else if (key == "encoder.convs_per_stage") {
      encoder.convs_per_stage = static_cast<int>(cfg_long(key, value));
    } else if (key == "encoder.dilation_rates") {
      encoder.dilation_rates = cfg_int_list(key, value);
    } else if (key == "encoder.head_channels") {
      encoder.head_channels = static_cast<int>(cfg_long(key, value));
    } else if (key == "pigm.mode") {
      pigm = parse_pigm_mode(value);
    } else if (key == "uafm.enabled") {
      uafm_enabled = cfg_bool(key, value);
    } else if (key == "uafm.case") {
      fusion = parse_fusion_case(value);
    } else if (key == "ura.formula") {
      ura = parse_ura_formula(value);
    } else if (key == "optim.lr") {
      optim.lr = cfg_double(key, value);
    } else if (key == "optim.weight_decay") {
      optim.weight_decay = cfg_double(key, value);
    } else if (key == "optim.beta1") {
      optim.beta1 = cfg_double(key, value);
    } else if (key == "optim.beta2") {
      optim.beta2 = cfg_double(key, value);
    } else if (key == "optim.eps") {
      optim.eps = cfg_double(key, value);
    } else if (key == "optim.steps") {
      optim.steps = cfg_long(key, value);
    } else if (key == "optim.batch") {
      optim.batch_size = static_cast<int>(cfg_long(key, value));
    } else if (key == "data.extent") {
      scene.extent = static_cast<int>(cfg_long(key, value));
    } else if (key == "data.count") {
      data_count = cfg_long(key, value);
    } else if (key == "data.min_buildings") {
      scene.min_buildings = static_cast<int>(cfg_long(key, value));
    } else if (key == "data.max_buildings") {
      scene.max_buildings = static_cast<int>(cfg_long(key, value));
    } else if (key == "data.min_size") {
      scene.min_size = cfg_double(key, value);
    } else if (key == "data.max_size") {
      scene.max_size = cfg_double(key, value);
    } else if (key == "data.rotate") {
      scene.rotate = cfg_bool(key, value);
    } else if (key == "data.noise") {
      scene.noise = cfg_double(key, value);
    } else if (key == "data.shadow_prob") {
      scene.shadow_prob = cfg_double(key, value);
    } else if (key == "data.distractor_prob") {
      scene.distractor_prob = cfg_double(key, value);
    } else if (key == "data.manifest") {
      manifest = value;
    } else if (key == "train.augment") {
      augment = cfg_bool(key, value);
    } else if (key == "train.checkpoint_every") {
      checkpoint_every = cfg_long(key, value);
    } else {
      throw param_error("config: unknown key '" + key + "'");
    }
  }

  static RunConfig parse_text(const std::string& text) {
    RunConfig cfg;
    std::size_t pos = 0;
    int lineno = 0;
    while (pos < text.size()) {
      std::size_t end = text.find('\n', pos);
      if (end == std::string::npos) end = text.size();
      std::string line = text.substr(pos, end - pos);
      pos = end + 1;
      ++lineno;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos)
        throw param_error("config: line " + std::to_string(lineno) +
                          " is not 'key = value': '" + line + "'");
      cfg.apply(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    return cfg;
  }

  static RunConfig load(const std::string& path) {
    const std::vector<std::uint8_t> raw = slurp_file(path);
    return parse_text(std::string(raw.begin(), raw.end()));
  }

  void validate() const {
    if (bits != 32 && bits != 64) throw param_error("config: bits must be 32 or 64");
    encoder.validate();
    optim.validate();
    scene.validate();
    if (data_count < 1) throw param_error("config: data.count must be >= 1");
    if (checkpoint_every < 0) throw param_error("config: train.checkpoint_every must be >= 0");
  }

  ModelConfig model_config() const {
    ModelConfig m;
    m.encoder = encoder;
    m.pigm = pigm;
    m.uafm_enabled = uafm_enabled;
    m.fusion = fusion;
    m.ura = ura;
    return m;
  }

  TrainOptions train_options() const {
    TrainOptions t;
    t.optim = optim;
    t.augment_flips = augment;
    t.out_dir = out;
    t.checkpoint_every = checkpoint_every;
    return t;
  }

  // Fixed key order, %.17g floats: identical configs echo identical bytes.
  std::string to_text() const {
    std::string s;
    auto kv = [&s](const std::string& k, const std::string& v) { s += k + " = " + v + "\n"; };
    auto num = [&kv](const std::string& k, double v) { kv(k, detail::g17(v)); };
    kv("bits", std::to_string(bits));
    kv("seed", std::to_string(seed));
    kv("out", out);
    std::string widths;
    for (int i = 0; i < 5; ++i)
      widths += (i ? "," : "") + std::to_string(encoder.stage_channels[static_cast<std::size_t>(i)]);
    kv("encoder.widths", widths);
    kv("encoder.convs_per_stage", std::to_string(encoder.convs_per_stage));
    std::string rates;
    for (std::size_t i = 0; i < encoder.dilation_rates.size(); ++i)
      rates += (i ? "," : "") + std::to_string(encoder.dilation_rates[i]);
    kv("encoder.dilation_rates", rates);
    kv("encoder.head_channels", std::to_string(encoder.head_channels));
    kv("pigm.mode", pigm_mode_name(pigm));
    kv("uafm.enabled", uafm_enabled ? "on" : "off");
    kv("uafm.case", std::to_string(static_cast<int>(fusion)));
    kv("ura.formula", ura == UraFormula::Prose ? "prose" : "floor");
    num("optim.lr", optim.lr);
    num("optim.weight_decay", optim.weight_decay);
    num("optim.beta1", optim.beta1);
    num("optim.beta2", optim.beta2);
    num("optim.eps", optim.eps);
    kv("optim.steps", std::to_string(optim.steps));
    kv("optim.batch", std::to_string(optim.batch_size));
    kv("data.extent", std::to_string(scene.extent));
    kv("data.count", std::to_string(data_count));
    kv("data.min_buildings", std::to_string(scene.min_buildings));
    kv("data.max_buildings", std::to_string(scene.max_buildings));
    num("data.min_size", scene.min_size);
    num("data.max_size", scene.max_size);
    kv("data.rotate", scene.rotate ? "on" : "off");
    num("data.noise", scene.noise);
    num("data.shadow_prob", scene.shadow_prob);
    num("data.distractor_prob", scene.distractor_prob);
    kv("data.manifest", manifest);
    kv("train.augment", augment ? "on" : "off");
    kv("train.checkpoint_every", std::to_string(checkpoint_every));
    return s;
  }
};

}  // namespace uanet
