#pragma once

// Resolved settings of a training run. Serialized as flat UTF-8
// `key=value` lines; `#` starts a comment line.

#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "darc/model.hpp"
#include "darc/training.hpp"

namespace darc {

struct RunConfig {
  std::string data;
  std::string out;
  std::string prototypes;
  std::string task = "hate";
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  double val_fraction = 0.1;

  std::uint32_t d_map = 1024;
  std::uint32_t blocks = 2;
  std::uint32_t heads = 8;
  std::uint32_t ratio = 4;
  double lambda_init = 0.05;
  double sigma = 30.0;
  bool use_acar = true;
  bool use_dfa = true;
  bool use_sai = true;
  bool use_lp = true;

  std::uint32_t epochs = 15;
  std::uint32_t batch_size = 32;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  std::uint32_t repeats = 3;
  bool class_weighting = false;

  bool operator==(const RunConfig&) const = default;

  ModelConfig model_config(std::uint32_t d_in_img, std::uint32_t d_in_txt, std::uint32_t n_classes) const {
    ModelConfig c;
    c.d_in_img = d_in_img;
    c.d_in_txt = d_in_txt;
    c.d_map = d_map;
    c.n_blocks = blocks;
    c.n_heads = heads;
    c.bottleneck_ratio = ratio;
    c.lambda_init = lambda_init;
    c.sigma_scale = sigma;
    c.n_classes = n_classes;
    c.use_acar = use_acar;
    c.use_dfa = use_dfa;
    c.use_sai = use_sai;
    c.use_lp = use_lp;
    return c;
  }

  TrainConfig train_config(std::size_t task_index) const {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.learning_rate = lr;
    t.weight_decay = weight_decay;
    t.seed = seed;
    t.n_repeats = repeats;
    t.class_weighting = class_weighting;
    t.task_index = task_index;
    return t;
  }
};

namespace detail {

inline std::string to_text(const std::string& v) { return v; }
inline std::string to_text(bool v) { return v ? "true" : "false"; }
inline std::string to_text(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
template <class T>
  requires std::is_unsigned_v<T>
std::string to_text(T v) {
  return std::to_string(v);
}

inline void from_text(const std::string& key, const std::string& s, std::string& v) {
  (void)key;
  v = s;
}
inline void from_text(const std::string& key, const std::string& s, bool& v) {
  if (s == "true" || s == "1") v = true;
  else if (s == "false" || s == "0") v = false;
  else throw ConfigError("config key " + key + ": expected true/false, got \"" + s + "\"");
}
inline void from_text(const std::string& key, const std::string& s, double& v) {
  std::size_t used = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw ConfigError("config key " + key + ": expected a number, got \"" + s + "\"");
}
template <class T>
  requires std::is_unsigned_v<T>
void from_text(const std::string& key, const std::string& s, T& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    if (!s.empty() && s[0] != '-') x = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || x > std::numeric_limits<T>::max()) {
    throw ConfigError("config key " + key + ": expected a non-negative integer, got \"" + s + "\"");
  }
  v = static_cast<T>(x);
}

}  // namespace detail

struct ConfigField {
  std::string key;
  bool is_bool = false;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline const std::vector<ConfigField>& run_config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    auto add = [&f](std::string key, auto member) {
      using T = std::remove_reference_t<decltype(RunConfig{}.*member)>;
      f.push_back({key, std::is_same_v<T, bool>, [member](const RunConfig& c) { return detail::to_text(c.*member); },
                   [member, key](RunConfig& c, const std::string& s) { detail::from_text(key, s, c.*member); }});
    };
    add("data", &RunConfig::data);
    add("out", &RunConfig::out);
    add("prototypes", &RunConfig::prototypes);
    add("task", &RunConfig::task);
    add("seed", &RunConfig::seed);
    add("split_seed", &RunConfig::split_seed);
    add("val_fraction", &RunConfig::val_fraction);
    add("d_map", &RunConfig::d_map);
    add("blocks", &RunConfig::blocks);
    add("heads", &RunConfig::heads);
    add("ratio", &RunConfig::ratio);
    add("lambda_init", &RunConfig::lambda_init);
    add("sigma", &RunConfig::sigma);
    add("use_acar", &RunConfig::use_acar);
    add("use_dfa", &RunConfig::use_dfa);
    add("use_sai", &RunConfig::use_sai);
    add("use_lp", &RunConfig::use_lp);
    add("epochs", &RunConfig::epochs);
    add("batch_size", &RunConfig::batch_size);
    add("lr", &RunConfig::lr);
    add("weight_decay", &RunConfig::weight_decay);
    add("repeats", &RunConfig::repeats);
    add("class_weighting", &RunConfig::class_weighting);
    return f;
  }();
  return fields;
}

inline const ConfigField& find_config_field(const std::string& key) {
  for (const auto& f : run_config_fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key \"" + key + "\"");
}

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  find_config_field(key).set(c, value);
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Applies `key=value` lines on top of `base`.
inline RunConfig parse_run_config(const std::string& text, RunConfig base = {}) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    set_config_value(base, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return base;
}

inline std::string format_run_config(const RunConfig& c) {
  std::string out;
  for (const auto& f : run_config_fields()) out += f.key + "=" + f.get(c) + "\n";
  return out;
}

}  // namespace darc
