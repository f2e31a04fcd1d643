// SPDX-License-Identifier: Apache-2.0
#include "hindsight/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>

namespace hindsight {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& v) {
  N out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("invalid number '" + v + "'");
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

template <typename N>
Setter number(N ModelConfig::*field) {
  return [field](RunConfig& c, const std::string& v) { c.model.*field = parse_number<N>(v); };
}

template <typename N>
Setter train_number(N TrainConfig::*field) {
  return [field](RunConfig& c, const std::string& v) { c.train.*field = parse_number<N>(v); };
}

const std::vector<std::pair<std::string, Setter>>& setters() {
  static const std::vector<std::pair<std::string, Setter>> table = {
      {"mode", [](RunConfig& c, const std::string& v) { c.model.mode = parse_grid_mode(v); }},
      {"k", number(&ModelConfig::k)},
      {"D", number(&ModelConfig::D)},
      {"H", number(&ModelConfig::H)},
      {"d_model", number(&ModelConfig::d_model)},
      {"channels", number(&ModelConfig::channels)},
      {"N", number(&ModelConfig::N)},
      {"heads", number(&ModelConfig::heads)},
      {"d_ff", number(&ModelConfig::d_ff)},
      {"agg_period", number(&ModelConfig::agg_period)},
      {"encoder", [](RunConfig& c, const std::string& v) { c.model.encoder = parse_encoding_variant(v); }},
      {"lambda", number(&ModelConfig::lambda)},
      {"decoder_layers", number(&ModelConfig::decoder_layers)},
      {"beta", train_number(&TrainConfig::beta)},
      {"lr", train_number(&TrainConfig::lr)},
      {"beta1", train_number(&TrainConfig::beta1)},
      {"beta2", train_number(&TrainConfig::beta2)},
      {"adam_eps", train_number(&TrainConfig::adam_eps)},
      {"seed", train_number(&TrainConfig::seed)},
      {"steps", train_number(&TrainConfig::steps)},
      {"batch_size", train_number(&TrainConfig::batch_size)},
      {"fraction", train_number(&TrainConfig::fraction)},
      {"checkpoint_every", train_number(&TrainConfig::checkpoint_every)},
      {"data", [](RunConfig& c, const std::string& v) { c.data = v; }},
      {"out", [](RunConfig& c, const std::string& v) { c.out = v; }},
      {"checkpoint", [](RunConfig& c, const std::string& v) { c.checkpoint = v; }},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& [k, _] : setters()) out.push_back(k);
    return out;
  }();
  return keys;
}

void RunConfig::require(const std::vector<std::string>& keys, const std::string& context) const {
  std::string missing;
  for (const auto& k : keys) {
    if (!present.count(k)) missing += (missing.empty() ? "" : ", ") + k;
  }
  if (!missing.empty()) throw ConfigError(context + ": missing required config key(s): " + missing);
}

RunConfig parse_run_config(std::istream& in, const std::string& source) {
  std::map<std::string, const Setter*> lookup;
  for (const auto& [k, s] : setters()) lookup.emplace(k, &s);
  RunConfig cfg;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(body.substr(0, eq)), value = trim(body.substr(eq + 1));
    auto it = lookup.find(key);
    if (it == lookup.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (value.empty()) throw ConfigError(where + "empty value for '" + key + "'");
    if (!cfg.present.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      (*it->second)(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  return parse_run_config(in, path.string());
}

}  // namespace hindsight
