#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hcl/augment.hpp"
#include "hcl/models.hpp"
#include "hcl/serial.hpp"

namespace hcl::pipeline {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Every run parameter, addressable through flat `key = value` lines.
// Unknown keys are rejected.
struct Config {
  std::uint64_t seed = 1;

  std::string data_source = "synthetic";  // synthetic | corpus
  int data_synthetic_n = 2048;
  int data_image_size = 64;
  std::string data_corpus_path;
  double data_holdout_fraction = 0.0;

  models::ModelConfig model;

  augment::AugConfig aug;  // out_size follows model.input_size

  double lr0 = 0.05;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  int batch_size = 32;
  int stage1_epochs = 20;
  int stage2_epochs = 20;
  Index queue_capacity = 1024;
  double temperature = 0.2;
  double key_momentum = 0.999;

  Index eval_gallery_capacity = 512;
  int eval_iou_bins = 10;
  std::vector<int> eval_sweep_dims = {8, 16, 32};
  bool eval_renormalize = true;
  int eval_passes = 2;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  T v{};
  std::string rest;
  if (value.empty() || !(is >> v) || (is >> rest))
    throw ConfigError("config: cannot parse value '" + value + "' for key '" + key + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config: boolean key '" + key + "' expects true/false, got '" + value + "'");
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::istringstream is(value);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError("config: empty element in list for key '" + key + "'");
    out.push_back(parse_number<int>(key, item));
  }
  if (out.empty()) throw ConfigError("config: empty list for key '" + key + "'");
  return out;
}

template <class T, std::size_t N>
std::array<T, N> parse_fixed_list(const std::string& key, const std::string& value) {
  auto list = parse_int_list(key, value);
  if (list.size() != N)
    throw ConfigError("config: key '" + key + "' expects " + std::to_string(N) + " values");
  std::array<T, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = T(list[i]);
  return out;
}

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::string fmt_int_list(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

template <std::size_t N>
std::string fmt_int_array(const std::array<int, N>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < N; ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

}  // namespace detail

// Applies one key/value pair; throws ConfigError for unknown keys or
// malformed values.
inline void apply_config_kv(Config& c, const std::string& key, const std::string& value) {
  using namespace detail;
  if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "data.source") {
    if (value != "synthetic" && value != "corpus")
      throw ConfigError("config: data.source must be synthetic or corpus");
    c.data_source = value;
  } else if (key == "data.synthetic_n") c.data_synthetic_n = parse_number<int>(key, value);
  else if (key == "data.image_size") c.data_image_size = parse_number<int>(key, value);
  else if (key == "data.corpus_path") c.data_corpus_path = value;
  else if (key == "data.holdout_fraction") c.data_holdout_fraction = parse_number<double>(key, value);
  else if (key == "model.input_size") c.model.backbone.input_size = parse_number<int>(key, value);
  else if (key == "model.stage_channels")
    c.model.backbone.stage_channels = parse_fixed_list<int, 4>(key, value);
  else if (key == "model.blocks_per_stage")
    c.model.backbone.blocks_per_stage = parse_fixed_list<int, 4>(key, value);
  else if (key == "model.gn_groups") c.model.backbone.group_norm_groups = parse_number<int>(key, value);
  else if (key == "model.d_sem") c.model.head.d_sem = parse_number<int>(key, value);
  else if (key == "model.hidden_sem") c.model.head.hidden_sem = parse_number<int>(key, value);
  else if (key == "model.fpn_channels") c.model.head.fpn_channels = parse_number<int>(key, value);
  else if (key == "model.spatial_res") c.model.head.spatial_res = parse_number<int>(key, value);
  else if (key == "model.gn_eps") c.model.gn_eps = parse_number<double>(key, value);
  else if (key == "aug.area_min") c.aug.area_min = parse_number<double>(key, value);
  else if (key == "aug.area_max") c.aug.area_max = parse_number<double>(key, value);
  else if (key == "aug.aspect_min") c.aug.aspect_min = parse_number<double>(key, value);
  else if (key == "aug.aspect_max") c.aug.aspect_max = parse_number<double>(key, value);
  else if (key == "aug.flip_enabled") c.aug.flip_enabled = parse_bool(key, value);
  else if (key == "aug.jitter_brightness") c.aug.jitter_brightness = parse_number<double>(key, value);
  else if (key == "aug.jitter_contrast") c.aug.jitter_contrast = parse_number<double>(key, value);
  else if (key == "aug.jitter_saturation") c.aug.jitter_saturation = parse_number<double>(key, value);
  else if (key == "train.lr0") c.lr0 = parse_number<double>(key, value);
  else if (key == "train.sgd_momentum") c.sgd_momentum = parse_number<double>(key, value);
  else if (key == "train.weight_decay") c.weight_decay = parse_number<double>(key, value);
  else if (key == "train.batch_size") c.batch_size = parse_number<int>(key, value);
  else if (key == "train.stage1_epochs") c.stage1_epochs = parse_number<int>(key, value);
  else if (key == "train.stage2_epochs") c.stage2_epochs = parse_number<int>(key, value);
  else if (key == "train.queue_capacity") c.queue_capacity = parse_number<Index>(key, value);
  else if (key == "train.temperature") c.temperature = parse_number<double>(key, value);
  else if (key == "train.key_momentum") c.key_momentum = parse_number<double>(key, value);
  else if (key == "eval.gallery_capacity") c.eval_gallery_capacity = parse_number<Index>(key, value);
  else if (key == "eval.iou_bins") c.eval_iou_bins = parse_number<int>(key, value);
  else if (key == "eval.sweep_dims") c.eval_sweep_dims = parse_int_list(key, value);
  else if (key == "eval.renormalize") c.eval_renormalize = parse_bool(key, value);
  else if (key == "eval.passes") c.eval_passes = parse_number<int>(key, value);
  else throw ConfigError("config: unknown key '" + key + "'");
}

// `key = value` per line; blank lines and lines starting with '#' skipped.
inline Config parse_config_text(const std::string& text, Config base = {}) {
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(line_no) + " is not 'key = value'");
    apply_config_kv(base, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
  }
  return base;
}

inline Config load_config_file(const std::string& path, Config base = {}) {
  std::ifstream in(path);
  if (!in) throw serial::IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), std::move(base));
}

// "key=value" command-line overrides
inline void apply_overrides(Config& c, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + s + "'");
    apply_config_kv(c, detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)));
  }
}

// Cross-field validation; also ties the augmentation output size to the
// model input size.
inline void finalize_config(Config& c) {
  c.aug.out_size = c.model.backbone.input_size;
  models::validate_model_config(c.model);
  augment::validate_aug_config(c.aug);
  if (c.data_image_size < 32 || c.data_image_size % 32 != 0)
    throw ConfigError("config: data.image_size must be a positive multiple of 32");
  if (c.data_synthetic_n < 1) throw ConfigError("config: data.synthetic_n must be >= 1");
  if (c.data_holdout_fraction < 0.0 || c.data_holdout_fraction >= 1.0)
    throw ConfigError("config: data.holdout_fraction must lie in [0, 1)");
  if (!(c.lr0 > 0.0)) throw ConfigError("config: train.lr0 must be > 0");
  if (c.batch_size < 2) throw ConfigError("config: train.batch_size must be >= 2");
  if (c.stage1_epochs < 0 || c.stage2_epochs < 0)
    throw ConfigError("config: epoch counts must be >= 0");
  if (c.queue_capacity < 1) throw ConfigError("config: train.queue_capacity must be >= 1");
  if (c.queue_capacity < c.batch_size)
    throw ConfigError("config: train.queue_capacity must be >= train.batch_size");
  if (!(c.temperature > 0.0)) throw ConfigError("config: train.temperature must be > 0");
  if (c.key_momentum < 0.0 || c.key_momentum > 1.0)
    throw ConfigError("config: train.key_momentum must lie in [0, 1]");
  if (c.sgd_momentum < 0.0 || c.sgd_momentum >= 1.0)
    throw ConfigError("config: train.sgd_momentum must lie in [0, 1)");
  if (c.weight_decay < 0.0) throw ConfigError("config: train.weight_decay must be >= 0");
  if (c.eval_gallery_capacity < 1)
    throw ConfigError("config: eval.gallery_capacity must be >= 1");
  if (c.eval_iou_bins < 2) throw ConfigError("config: eval.iou_bins must be >= 2");
  if (c.eval_passes < 1) throw ConfigError("config: eval.passes must be >= 1");
  if (c.data_source == "corpus" && c.data_corpus_path.empty())
    throw ConfigError("config: data.corpus_path required when data.source = corpus");
}

// Canonical key -> printed value map, used for config echoes in reports and
// for writing config files.
inline std::vector<std::pair<std::string, std::string>> config_echo(const Config& c) {
  using namespace detail;
  return {
      {"seed", std::to_string(c.seed)},
      {"data.source", c.data_source},
      {"data.synthetic_n", std::to_string(c.data_synthetic_n)},
      {"data.image_size", std::to_string(c.data_image_size)},
      {"data.corpus_path", c.data_corpus_path},
      {"data.holdout_fraction", fmt_double(c.data_holdout_fraction)},
      {"model.input_size", std::to_string(c.model.backbone.input_size)},
      {"model.stage_channels", fmt_int_array(c.model.backbone.stage_channels)},
      {"model.blocks_per_stage", fmt_int_array(c.model.backbone.blocks_per_stage)},
      {"model.gn_groups", std::to_string(c.model.backbone.group_norm_groups)},
      {"model.d_sem", std::to_string(c.model.head.d_sem)},
      {"model.hidden_sem", std::to_string(c.model.head.hidden_sem)},
      {"model.fpn_channels", std::to_string(c.model.head.fpn_channels)},
      {"model.spatial_res", std::to_string(c.model.head.spatial_res)},
      {"model.gn_eps", fmt_double(c.model.gn_eps)},
      {"aug.area_min", fmt_double(c.aug.area_min)},
      {"aug.area_max", fmt_double(c.aug.area_max)},
      {"aug.aspect_min", fmt_double(c.aug.aspect_min)},
      {"aug.aspect_max", fmt_double(c.aug.aspect_max)},
      {"aug.flip_enabled", c.aug.flip_enabled ? "true" : "false"},
      {"aug.jitter_brightness", fmt_double(c.aug.jitter_brightness)},
      {"aug.jitter_contrast", fmt_double(c.aug.jitter_contrast)},
      {"aug.jitter_saturation", fmt_double(c.aug.jitter_saturation)},
      {"train.lr0", fmt_double(c.lr0)},
      {"train.sgd_momentum", fmt_double(c.sgd_momentum)},
      {"train.weight_decay", fmt_double(c.weight_decay)},
      {"train.batch_size", std::to_string(c.batch_size)},
      {"train.stage1_epochs", std::to_string(c.stage1_epochs)},
      {"train.stage2_epochs", std::to_string(c.stage2_epochs)},
      {"train.queue_capacity", std::to_string(c.queue_capacity)},
      {"train.temperature", fmt_double(c.temperature)},
      {"train.key_momentum", fmt_double(c.key_momentum)},
      {"eval.gallery_capacity", std::to_string(c.eval_gallery_capacity)},
      {"eval.iou_bins", std::to_string(c.eval_iou_bins)},
      {"eval.sweep_dims", fmt_int_list(c.eval_sweep_dims)},
      {"eval.renormalize", c.eval_renormalize ? "true" : "false"},
      {"eval.passes", std::to_string(c.eval_passes)},
  };
}

inline std::string config_to_text(const Config& c) {
  std::ostringstream os;
  for (const auto& [k, v] : config_echo(c)) os << k << " = " << v << "\n";
  return os.str();
}

}  // namespace hcl::pipeline
