#pragma once

// Run configuration as `key = value` text. Every key has a default; unknown keys are rejected.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mgcap/dataset.hpp"
#include "mgcap/error.hpp"
#include "mgcap/model.hpp"
#include "mgcap/optim.hpp"

namespace mgcap {

struct RunConfig {
  std::uint64_t seed = 1;

  // model
  std::size_t feature_channels = 32;
  std::size_t transforms = 12;
  std::vector<double> granularity_ratios{1.0, 0.75, 0.5};
  NormalizationMode normalization = NormalizationMode::SqrtE;
  double lambda = 1e-4;
  bool use_gaussian = true;
  MeanConvention mean_convention = MeanConvention::Mean;
  double eps_lo = 1e-5;
  double eps_hi = 1e5;
  double degeneracy_tol = kDefaultDegeneracyTol;
  std::size_t crop_size = 56;
  std::size_t input_size = 32;
  bool head_bias = true;

  // optimisation
  std::size_t batch_size = 12;
  int epochs_stage1 = 10;
  int epochs_stage2 = 20;
  double lr_stage1 = 0.1;
  double lr_stage2 = 1e-3;
  double lr_decay_stage1 = 0.15;
  int lr_step_stage1 = 30;
  double lr_decay_stage2 = 0.5;
  int lr_step_stage2 = 10;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool hflip = true;

  // data: an empty manifest means the synthetic set generated in memory
  std::string manifest;
  double train_ratio = 0.5;
  std::uint64_t split_seed = 0;  // 0: use `seed`
  std::size_t synth_classes = 8;
  std::size_t synth_samples = 200;
  std::size_t synth_size = 64;
  double synth_noise = 0.05;
  std::uint64_t synth_seed = 1;

  std::uint64_t effective_split_seed() const { return split_seed == 0 ? seed : split_seed; }

  ModelConfig model(std::size_t num_classes, std::size_t image_channels) const {
    ModelConfig m;
    m.num_classes = num_classes;
    m.image_channels = image_channels;
    m.feature_channels = feature_channels;
    m.transforms = transforms;
    m.granularity_ratios = granularity_ratios;
    m.normalization = normalization;
    m.sop = SopConfig{lambda, use_gaussian, mean_convention};
    m.eps_lo = eps_lo;
    m.eps_hi = eps_hi;
    m.degeneracy_tol = degeneracy_tol;
    m.crop_size = crop_size;
    m.input_size = input_size;
    m.head_bias = head_bias;
    return m;
  }

  LrSchedule schedule(int stage) const {
    return stage == 1 ? LrSchedule{lr_stage1, lr_decay_stage1, lr_step_stage1}
                      : LrSchedule{lr_stage2, lr_decay_stage2, lr_step_stage2};
  }

  SyntheticSpec synthetic() const {
    SyntheticSpec s;
    s.num_classes = synth_classes;
    s.samples_per_class = synth_samples;
    s.image_size = synth_size;
    s.noise_sigma = synth_noise;
    s.seed = synth_seed;
    return s;
  }

  void set(const std::string& key, const std::string& value);
  std::string to_text() const;
  void validate() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Keys are accepted with either dashes or underscores.
inline std::string canonical_key(std::string k) {
  std::replace(k.begin(), k.end(), '-', '_');
  return k;
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end || v.empty())
    throw Error(ErrorKind::ConfigError, "bad value '" + v + "' for key '" + key + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorKind::ConfigError, "bad boolean '" + v + "' for key '" + key + "'");
}

inline std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<double>(key, trim(item)));
  if (out.empty()) throw Error(ErrorKind::ConfigError, "empty list for key '" + key + "'");
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

inline void RunConfig::set(const std::string& raw_key, const std::string& raw_value) {
  using namespace detail;
  const std::string key = canonical_key(trim(raw_key));
  const std::string v = trim(raw_value);
  auto sz = [&] { return parse_number<std::size_t>(key, v); };
  auto u64 = [&] { return parse_number<std::uint64_t>(key, v); };
  auto i32 = [&] { return parse_number<int>(key, v); };
  auto dbl = [&] { return parse_number<double>(key, v); };
  auto wrap = [&](auto fn) {
    try {
      fn();
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::ConfigError) throw;
      throw Error(ErrorKind::ConfigError, "key '" + key + "': " + e.detail());
    }
  };

  if (key == "seed") seed = u64();
  else if (key == "feature_channels") feature_channels = sz();
  else if (key == "transforms") transforms = sz();
  else if (key == "granularity") granularity_ratios = parse_list(key, v);
  else if (key == "normalization") wrap([&] { normalization = parse_normalization(v); });
  else if (key == "lambda") lambda = dbl();
  else if (key == "use_gaussian") use_gaussian = parse_bool(key, v);
  else if (key == "mean_convention") wrap([&] { mean_convention = parse_mean_convention(v); });
  else if (key == "eps_lo") eps_lo = dbl();
  else if (key == "eps_hi") eps_hi = dbl();
  else if (key == "degeneracy_tol") degeneracy_tol = dbl();
  else if (key == "crop_size") crop_size = sz();
  else if (key == "input_size") input_size = sz();
  else if (key == "head_bias") head_bias = parse_bool(key, v);
  else if (key == "batch_size") batch_size = sz();
  else if (key == "epochs_stage1") epochs_stage1 = i32();
  else if (key == "epochs_stage2") epochs_stage2 = i32();
  else if (key == "lr_stage1") lr_stage1 = dbl();
  else if (key == "lr_stage2") lr_stage2 = dbl();
  else if (key == "lr_decay_stage1") lr_decay_stage1 = dbl();
  else if (key == "lr_step_stage1") lr_step_stage1 = i32();
  else if (key == "lr_decay_stage2") lr_decay_stage2 = dbl();
  else if (key == "lr_step_stage2") lr_step_stage2 = i32();
  else if (key == "momentum") momentum = dbl();
  else if (key == "weight_decay") weight_decay = dbl();
  else if (key == "hflip") hflip = parse_bool(key, v);
  else if (key == "manifest") manifest = v;
  else if (key == "train_ratio") train_ratio = dbl();
  else if (key == "split_seed") split_seed = u64();
  else if (key == "synth_classes") synth_classes = sz();
  else if (key == "synth_samples") synth_samples = sz();
  else if (key == "synth_size") synth_size = sz();
  else if (key == "synth_noise") synth_noise = dbl();
  else if (key == "synth_seed") synth_seed = u64();
  else throw Error(ErrorKind::ConfigError, "unknown key '" + key + "'");
}

inline std::string RunConfig::to_text() const {
  using detail::format_double;
  std::string ratios;
  for (std::size_t k = 0; k < granularity_ratios.size(); ++k)
    ratios += (k ? "," : "") + format_double(granularity_ratios[k]);
  std::ostringstream o;
  o << "seed = " << seed << "\n"
    << "feature_channels = " << feature_channels << "\n"
    << "transforms = " << transforms << "\n"
    << "granularity = " << ratios << "\n"
    << "normalization = " << to_string(normalization) << "\n"
    << "lambda = " << format_double(lambda) << "\n"
    << "use_gaussian = " << (use_gaussian ? "true" : "false") << "\n"
    << "mean_convention = " << to_string(mean_convention) << "\n"
    << "eps_lo = " << format_double(eps_lo) << "\n"
    << "eps_hi = " << format_double(eps_hi) << "\n"
    << "degeneracy_tol = " << format_double(degeneracy_tol) << "\n"
    << "crop_size = " << crop_size << "\n"
    << "input_size = " << input_size << "\n"
    << "head_bias = " << (head_bias ? "true" : "false") << "\n"
    << "batch_size = " << batch_size << "\n"
    << "epochs_stage1 = " << epochs_stage1 << "\n"
    << "epochs_stage2 = " << epochs_stage2 << "\n"
    << "lr_stage1 = " << format_double(lr_stage1) << "\n"
    << "lr_stage2 = " << format_double(lr_stage2) << "\n"
    << "lr_decay_stage1 = " << format_double(lr_decay_stage1) << "\n"
    << "lr_step_stage1 = " << lr_step_stage1 << "\n"
    << "lr_decay_stage2 = " << format_double(lr_decay_stage2) << "\n"
    << "lr_step_stage2 = " << lr_step_stage2 << "\n"
    << "momentum = " << format_double(momentum) << "\n"
    << "weight_decay = " << format_double(weight_decay) << "\n"
    << "hflip = " << (hflip ? "true" : "false") << "\n"
    << "manifest = " << manifest << "\n"
    << "train_ratio = " << format_double(train_ratio) << "\n"
    << "split_seed = " << split_seed << "\n"
    << "synth_classes = " << synth_classes << "\n"
    << "synth_samples = " << synth_samples << "\n"
    << "synth_size = " << synth_size << "\n"
    << "synth_noise = " << format_double(synth_noise) << "\n"
    << "synth_seed = " << synth_seed << "\n";
  return o.str();
}

inline void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::ConfigError, m); };
  if (feature_channels == 0) fail("feature_channels must be >= 1");
  if (transforms == 0) fail("transforms must be >= 1");
  if (lambda < 0.0) fail("lambda must be >= 0");
  if (!(eps_lo > 0.0 && eps_hi > eps_lo)) fail("need 0 < eps_lo < eps_hi");
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (epochs_stage1 < 0 || epochs_stage2 < 0) fail("epoch counts must be >= 0");
  if (input_size == 0 || input_size % 4 != 0) fail("input_size must be a positive multiple of 4");
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) fail("train_ratio must lie in (0, 1)");
  try {
    GranularitySpec(granularity_ratios).validate();
  } catch (const Error& e) {
    fail(e.detail());
  }
}

/// Applies `key = value` lines; `#` starts a comment.
inline void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "config") {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::ConfigError, origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    try {
      cfg.set(line.substr(0, eq), line.substr(eq + 1));
    } catch (const Error& e) {
      throw Error(ErrorKind::ConfigError, origin + ":" + std::to_string(lineno) + ": " + e.detail());
    }
  }
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::ConfigError, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg;
  apply_config_text(cfg, ss.str(), path.string());
  return cfg;
}

/// Applies `--key=value` style overrides (leading dashes already stripped or not).
inline void apply_overrides(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& kv) {
  for (const auto& [k, v] : kv) cfg.set(k, v);
}

}  // namespace mgcap
