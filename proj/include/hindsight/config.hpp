// SPDX-License-Identifier: Apache-2.0
//
// Run configuration text format: one `key = value` per line, `#` starts a
// comment, blank lines ignored. Unknown or repeated keys are errors that
// carry the line number.
#pragma once

#include <filesystem>
#include <istream>
#include <set>
#include <string>
#include <vector>

#include "hindsight/pretext.hpp"

namespace hindsight {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string data, out, checkpoint;  // optional paths
  std::set<std::string> present;      // keys given explicitly

  /// Throws ConfigError listing every key of `keys` that was not given.
  void require(const std::vector<std::string>& keys, const std::string& context) const;
};

/// All recognised keys, in documentation order.
const std::vector<std::string>& config_keys();

RunConfig parse_run_config(std::istream& in, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace hindsight
