#pragma once

// Declarative experiment configuration: a flat, typed key=value file with
// one section per module. Unknown sections or keys are rejected with a
// line-pointing message; command-line flags override file values.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dcn/energy.hpp"
#include "dcn/ga.hpp"
#include "dcn/trainer.hpp"

namespace dcn {

struct RunConfig {
  // [model]
  std::vector<int> channels = {8, 16, 16, 32, 32, 64};
  int dense_hidden = 32;
  // [exits]
  std::vector<int> placement = {2};
  int bottleneck = 16;
  // [beatset]
  int per_class = 200;
  double noise_sigma = 0.05;
  std::array<double, 3> split_ratios = {0.7, 0.15, 0.15};
  // [train]
  TrainConfig train;
  // [sweep]
  double threshold_lo = 0.0;
  double threshold_hi = 1.0;
  double threshold_step = 0.01;
  // [ga]
  GAConfig ga;
  ObjectiveWeights weights;
  // [power]
  PowerProfile power;
  double fraction_scale = 1.0;
  // [link]
  LinkModel link;
  // [run]
  std::uint64_t seed = 1;
};

namespace detail {

inline InvalidInput config_error(const std::filesystem::path& path, int line,
                                 const std::string& what) {
  return InvalidInput(path.string() + ":" + std::to_string(line) + ": " + what);
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

}  // namespace detail

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  for (const auto& item : detail::split_list(s)) {
    std::size_t used = 0;
    const int v = std::stoi(item, &used);
    if (used != item.size()) throw InvalidInput("bad integer: " + item);
    out.push_back(v);
  }
  return out;
}

inline std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : detail::split_list(s)) {
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    if (used != item.size()) throw InvalidInput("bad number: " + item);
    out.push_back(v);
  }
  return out;
}

// "lo:hi:step" threshold range, e.g. "0:1:0.01".
inline std::array<double, 3> parse_threshold_range(const std::string& s) {
  std::array<double, 3> out{};
  std::string cur;
  std::size_t idx = 0;
  for (char c : s + ":") {
    if (c == ':') {
      if (idx >= 3) throw InvalidInput("bad threshold range: " + s);
      std::size_t used = 0;
      out[idx++] = std::stod(cur, &used);
      if (used != cur.size()) throw InvalidInput("bad threshold range: " + s);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (idx != 3) throw InvalidInput("bad threshold range: " + s);
  return out;
}

// Applies a config file on top of the given config. Sections and keys
// outside the known set are errors.
inline void apply_config_file(RunConfig& cfg,
                              const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw InvalidInput("cannot open config: " + path.string());

  using Setter = std::function<void(RunConfig&, const std::string&)>;
  static const std::map<std::string, std::map<std::string, Setter>> known = {
      {"model",
       {{"channels",
         [](RunConfig& c, const std::string& v) {
           c.channels = parse_int_list(v);
         }},
        {"dense_hidden",
         [](RunConfig& c, const std::string& v) { c.dense_hidden = std::stoi(v); }}}},
      {"exits",
       {{"placement",
         [](RunConfig& c, const std::string& v) {
           c.placement = parse_int_list(v);
         }},
        {"bottleneck",
         [](RunConfig& c, const std::string& v) { c.bottleneck = std::stoi(v); }}}},
      {"beatset",
       {{"per_class",
         [](RunConfig& c, const std::string& v) { c.per_class = std::stoi(v); }},
        {"noise_sigma",
         [](RunConfig& c, const std::string& v) { c.noise_sigma = std::stod(v); }},
        {"ratios",
         [](RunConfig& c, const std::string& v) {
           const auto r = parse_double_list(v);
           if (r.size() != 3) throw InvalidInput("ratios: need three values");
           c.split_ratios = {r[0], r[1], r[2]};
         }}}},
      {"train",
       {{"epochs",
         [](RunConfig& c, const std::string& v) { c.train.epochs = std::stoi(v); }},
        {"batch_size",
         [](RunConfig& c, const std::string& v) {
           c.train.batch_size = std::stoi(v);
         }},
        {"learning_rate",
         [](RunConfig& c, const std::string& v) {
           c.train.learning_rate = std::stod(v);
         }},
        {"loss_weights",
         [](RunConfig& c, const std::string& v) {
           c.train.exit_loss_weights = parse_double_list(v);
         }}}},
      {"sweep",
       {{"thresholds", [](RunConfig& c, const std::string& v) {
          const auto r = parse_threshold_range(v);
          c.threshold_lo = r[0];
          c.threshold_hi = r[1];
          c.threshold_step = r[2];
        }}}},
      {"ga",
       {{"population",
         [](RunConfig& c, const std::string& v) {
           c.ga.population_size = std::stoi(v);
         }},
        {"generations",
         [](RunConfig& c, const std::string& v) {
           c.ga.generations = std::stoi(v);
         }},
        {"crossover",
         [](RunConfig& c, const std::string& v) {
           c.ga.crossover_prob = std::stod(v);
         }},
        {"mutation",
         [](RunConfig& c, const std::string& v) {
           c.ga.mutation_prob = std::stod(v);
         }},
        {"w_acc",
         [](RunConfig& c, const std::string& v) { c.weights.w_acc = std::stod(v); }},
        {"w_sen",
         [](RunConfig& c, const std::string& v) { c.weights.w_sen = std::stod(v); }},
        {"w_com",
         [](RunConfig& c, const std::string& v) { c.weights.w_com = std::stod(v); }}}},
      {"power",
       {{"i_sleep",
         [](RunConfig& c, const std::string& v) { c.power.i_sleep_ma = std::stod(v); }},
        {"i_infer",
         [](RunConfig& c, const std::string& v) { c.power.i_infer_ma = std::stod(v); }},
        {"i_tx_connected",
         [](RunConfig& c, const std::string& v) {
           c.power.i_tx_connected_ma = std::stod(v);
         }},
        {"i_tx_broadcast",
         [](RunConfig& c, const std::string& v) {
           c.power.i_tx_broadcast_ma = std::stod(v);
         }},
        {"t_infer",
         [](RunConfig& c, const std::string& v) { c.power.t_infer_s = std::stod(v); }},
        {"t_tx",
         [](RunConfig& c, const std::string& v) { c.power.t_tx_s = std::stod(v); }},
        {"beat_period",
         [](RunConfig& c, const std::string& v) {
           c.power.beat_period_s = std::stod(v);
         }},
        {"fraction_scale",
         [](RunConfig& c, const std::string& v) {
           c.fraction_scale = std::stod(v);
         }}}},
      {"link",
       {{"fixed_delay",
         [](RunConfig& c, const std::string& v) {
           c.link.fixed_delay_s = std::stod(v);
         }},
        {"bandwidth",
         [](RunConfig& c, const std::string& v) {
           c.link.bandwidth_bytes_per_s = std::stod(v);
         }}}},
      {"run",
       {{"seed", [](RunConfig& c, const std::string& v) {
          c.seed = std::stoull(v);
        }}}},
  };

  std::string section;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw detail::config_error(path, lineno, "malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (!known.count(section))
        throw detail::config_error(path, lineno,
                                   "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw detail::config_error(path, lineno, "expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (section.empty())
      throw detail::config_error(path, lineno, "key outside any section");
    const auto& keys = known.at(section);
    const auto it = keys.find(key);
    if (it == keys.end())
      throw detail::config_error(
          path, lineno, "unknown key '" + key + "' in section [" + section + "]");
    try {
      it->second(cfg, value);
    } catch (const std::exception& e) {
      throw detail::config_error(path, lineno,
                                 "bad value for '" + key + "': " + e.what());
    }
  }
}

// One-line resolved-config summary embedded in artifact metadata.
inline std::string config_summary(const RunConfig& c) {
  std::string s;
  s += "channels=";
  for (std::size_t i = 0; i < c.channels.size(); ++i)
    s += (i ? "," : "") + std::to_string(c.channels[i]);
  s += " dense_hidden=" + std::to_string(c.dense_hidden);
  s += " placement=";
  for (std::size_t i = 0; i < c.placement.size(); ++i)
    s += (i ? "," : "") + std::to_string(c.placement[i]);
  s += " bottleneck=" + std::to_string(c.bottleneck);
  s += " per_class=" + std::to_string(c.per_class);
  s += " noise_sigma=" + format_g9(c.noise_sigma);
  s += " epochs=" + std::to_string(c.train.epochs);
  s += " batch_size=" + std::to_string(c.train.batch_size);
  s += " learning_rate=" + format_g9(c.train.learning_rate);
  s += " thresholds=" + format_g9(c.threshold_lo) + ":" +
       format_g9(c.threshold_hi) + ":" + format_g9(c.threshold_step);
  s += " seed=" + std::to_string(c.seed);
  return s;
}

}  // namespace dcn
